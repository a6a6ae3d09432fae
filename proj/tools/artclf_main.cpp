// artclf: command-line front end for the painting-classification toolkit.
//
//   artclf <subcommand> [--config run.json] [--seed N] [--run-dir DIR] [--workers N] [options]
//
// Every subcommand works inside one run directory: it validates the config,
// writes config.lock.json and reuses artifacts earlier steps left there.
// Failures print a diagnostic and write <run-dir>/error.json.

#include <cstdio>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>

#include "artclf/bench.hpp"
#include "artclf/error.hpp"
#include "artclf/synthetic.hpp"
#include "artclf/util.hpp"

namespace {

using namespace artclf;
using namespace artclf::bench;

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitFailure = 1;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string run_dir;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON); defaults apply when omitted");
  cmd->add_option("--seed", o.seed, "Override the config seed");
  cmd->add_option("--run-dir", o.run_dir, "Override the run directory");
  cmd->add_option("--workers", o.workers, "Image loading / stylization threads (default 8)")->check(CLI::PositiveNumber);
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.run_dir.empty()) c.run_dir = o.run_dir;
  if (o.workers) c.workers = *o.workers;
  return c;
}

corpus::LabeledImages load(const RunContext& ctx, const corpus::DatasetManifest& m, corpus::Split s) {
  return corpus::load_split(m, s, ctx.config.train.image_size, ctx.config.workers);
}

attnclf::Checkpoint load_matching_checkpoint(const RunContext& ctx, const std::string& path) {
  const fs::path p = path.empty() ? ctx.run_dir / "model.pt" : fs::path(path);
  if (!fs::exists(p)) throw IoError("checkpoint not found: " + p.string() + " (run `train` first)");
  auto ckpt = attnclf::load_checkpoint(p);
  if (ckpt.classes != ctx.manifest.classes) throw InputError("checkpoint classes do not match the dataset");
  if (ckpt.config_hash != ctx.hash) ctx.log->warn("checkpoint was trained under config " + ckpt.config_hash);
  return ckpt;
}

void write_error_record(const fs::path& run_dir, const std::string& command, const std::string& kind,
                        const std::string& message) {
  try {
    fs::create_directories(run_dir);
    write_text(run_dir / "error.json",
               nlohmann::json{{"command", command}, {"kind", kind}, {"message", message}}.dump(2) + "\n");
  } catch (...) {
    // the diagnostic on stderr is all we can give
  }
}

std::string usage_text(const CLI::App& app) { return app.help("", CLI::AppFormatMode::Normal); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Painting classification with style-transfer augmentation and spatial attention", "artclf"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* train_style_cmd = app.add_subcommand("train-style", "Pretrain (or load) the style-transfer decoder");
  bool force = false;
  train_style_cmd->add_flag("--force", force, "Retrain even when decoder.pt exists");

  auto* augment_cmd = app.add_subcommand("augment", "Materialize the stylized augmentation set");
  std::optional<double> p1, p2;
  augment_cmd->add_option("--p1", p1, "Proportion for representative classes")->check(CLI::Range(0.0, 1.0));
  augment_cmd->add_option("--p2", p2, "Proportion for rare classes")->check(CLI::Range(0.0, 1.0));

  auto* search_cmd = app.add_subcommand("search", "Grid search followed by TPE refinement");

  auto* train_cmd = app.add_subcommand("train", "Stage-1 training, plus gradual unfreezing with --finetune");
  bool finetune = false;
  train_cmd->add_flag("--finetune", finetune, "Run stage 2 (gradual unfreezing) after stage 1");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  std::string checkpoint;
  evaluate_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default <run-dir>/model.pt)");

  auto* sweep_cmd = app.add_subcommand("sweep", "Accuracy/precision/recall table over (p1, p2)");
  std::vector<double> sweep_p1, sweep_p2;
  sweep_cmd->add_option("--p1", sweep_p1, "Rows (default from config)")->delimiter(',');
  sweep_cmd->add_option("--p2", sweep_p2, "Columns (default from config)")->delimiter(',');

  auto* visualize_cmd = app.add_subcommand("visualize", "Attention heatmaps and confidence ranking on the test split");
  visualize_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default <run-dir>/model.pt)");
  std::optional<std::size_t> top_k;
  visualize_cmd->add_option("--k", top_k, "Samples per confidence list");

  auto* pipeline_cmd = app.add_subcommand("pipeline", "style -> augment -> search -> train -> evaluate -> visualize");

  for (auto* cmd : {train_style_cmd, augment_cmd, search_cmd, train_cmd, evaluate_cmd, sweep_cmd, visualize_cmd,
                    pipeline_cmd}) {
    add_common(cmd, common);
  }

  auto* synth_cmd = app.add_subcommand("make-synthetic", "Write an imbalanced synthetic texture dataset");
  std::string synth_out;
  synthetic::TextureDatasetSpec synth;
  std::vector<std::size_t> counts;
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--counts", counts, "Images per class (default 400,200,100,50)")->delimiter(',');
  synth_cmd->add_option("--size", synth.image_size, "Image side in pixels")->check(CLI::Range(8, 1024));
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");

  // An unknown first word is a usage error, not an "extra argument".
  if (argc > 1 && argv[1][0] != '-') {
    const std::string first = argv[1];
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == first;
    if (!known) {
      std::cerr << "artclf: unknown subcommand '" << first << "'\n\n" << usage_text(app);
      return kExitUsage;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const auto* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();

  if (chosen == synth_cmd) {
    try {
      if (!counts.empty()) {
        synth.counts = counts;
        synth.classes.resize(counts.size());
        for (std::size_t i = 0; i < counts.size(); ++i) synth.classes[i] = "texture_" + std::string(1, char('a' + i));
      }
      auto m = synthetic::write_texture_dataset(synth_out, synth);
      std::cout << "wrote " << m.records.size() << " images to " << synth_out << "\n";
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "artclf make-synthetic: " << e.what() << "\n";
      return kExitFailure;
    }
  }

  fs::path run_dir = common.run_dir.empty() ? fs::path("runs/default") : fs::path(common.run_dir);
  try {
    auto config = resolve_config(common);
    run_dir = config.run_dir;
    if (command == "augment") {
      if (p1) config.augment.p1 = *p1;
      if (p2) config.augment.p2 = *p2;
    }
    if (command == "visualize" && top_k) config.visualize.top_k = *top_k;
    if (command == "sweep") {
      if (!sweep_p1.empty()) config.sweep.p1 = sweep_p1;
      if (!sweep_p2.empty()) config.sweep.p2 = sweep_p2;
    }
    validate(config);
    RunLog log(config.run_dir);
    auto ctx = make_context(config, log);
    fs::remove(ctx.run_dir / "error.json");
    log.info(command + " (config " + ctx.hash + ")");

    if (command == "train-style") {
      train_style(ctx, force);
    } else if (command == "augment") {
      auto merged = augmented_manifest(ctx);
      log.info("train split now holds " + std::to_string(merged.split_records(corpus::Split::train).size()) +
               " images");
    } else if (command == "search") {
      auto merged = augmented_manifest(ctx);
      search(ctx, load(ctx, merged, corpus::Split::train), load(ctx, ctx.manifest, corpus::Split::val));
    } else if (command == "train") {
      auto merged = augmented_manifest(ctx);
      train(ctx, resolved_config(ctx), load(ctx, merged, corpus::Split::train),
            load(ctx, ctx.manifest, corpus::Split::val), finetune);
    } else if (command == "evaluate") {
      auto ckpt = load_matching_checkpoint(ctx, checkpoint);
      evaluate_run(ctx, ckpt.model, load(ctx, ctx.manifest, corpus::Split::test));
    } else if (command == "visualize") {
      auto ckpt = load_matching_checkpoint(ctx, checkpoint);
      visualize(ctx, ckpt.model, load(ctx, ctx.manifest, corpus::Split::test), ckpt.loss);
    } else if (command == "sweep") {
      std::vector<std::pair<double, double>> grid;
      for (double a : ctx.config.sweep.p1)
        for (double b : ctx.config.sweep.p2) grid.emplace_back(a, b);
      auto cells = sweep_p1_p2(ctx, grid);
      std::cout << read_text(ctx.run_dir / "sweep.csv");
      const auto failed = std::count_if(cells.begin(), cells.end(), [](const SweepCell& c) { return !c.ok; });
      if (failed > 0) log.warn(std::to_string(failed) + " sweep cell(s) FAILED");
    } else if (command == "pipeline") {
      run_pipeline(ctx);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "artclf " << command << ": " << e.what() << "\n";
    write_error_record(run_dir, command, e.kind(), e.what());
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "artclf " << command << ": " << e.kind() << " error: " << e.what() << "\n";
    write_error_record(run_dir, command, e.kind(), e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "artclf " << command << ": " << e.what() << "\n";
    write_error_record(run_dir, command, "internal", e.what());
    return kExitFailure;
  }
}
