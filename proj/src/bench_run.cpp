#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "artclf/bench.hpp"
#include "artclf/error.hpp"
#include "artclf/util.hpp"

namespace artclf::bench {

namespace {

std::string short_number(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return ec == std::errc() ? std::string(buf, end) : std::to_string(x);
}

std::string percent(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * x);
  return buf;
}

stylegen::VggEncoder make_encoder(const RunConfig& config) { return stylegen::VggEncoder(encoder_config(config)); }

// Identifies the decoder a config would train, so a stale decoder.pt in the
// run directory is never reused for a different style setup.
std::string style_key(const RunConfig& config) {
  auto j = to_json(config);
  return hex64(fnv1a(json{{"seed", config.seed}, {"style", j["style"]}, {"dataset", j["dataset"]}}.dump()));
}

std::string append_jsonl(const fs::path& path, const json& line) {
  std::ofstream f(path, std::ios::app);
  f << line.dump() << '\n';
  if (!f) throw IoError("cannot append to " + path.string());
  return path.string();
}

std::int64_t num_classes(const RunContext& ctx) { return static_cast<std::int64_t>(ctx.manifest.classes.size()); }

}  // namespace

// ---------------------------------------------------------------- logging

RunLog::RunLog(const fs::path& run_dir, bool echo) : echo_(echo) {
  fs::create_directories(run_dir);
  out_.open(run_dir / "run.log", std::ios::app);
}

void RunLog::info(const std::string& message) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream line;
  line << std::put_time(&tm, "%Y-%m-%d %H:%M:%S") << ' ' << message;
  out_ << line.str() << std::endl;
  if (echo_) std::cerr << line.str() << std::endl;
}

void RunLog::warn(const std::string& message) { info("warning: " + message); }

// ---------------------------------------------------------------- context

RunContext make_context(const RunConfig& config, RunLog& log) {
  validate(config);
  RunContext ctx;
  ctx.config = config;
  ctx.hash = config_hash(config);
  ctx.run_dir = config.run_dir;
  ctx.log = &log;
  fs::create_directories(ctx.run_dir);
  write_lock(config, ctx.run_dir);
  std::vector<std::string> warnings;
  ctx.manifest = load_dataset(config, &warnings);
  for (const auto& w : warnings) log.warn(w);
  std::ostringstream os;
  os << "dataset " << config.dataset.root << ": " << ctx.manifest.records.size() << " images, "
     << ctx.manifest.classes.size() << " classes; train/val/test = "
     << ctx.manifest.split_records(corpus::Split::train).size() << '/'
     << ctx.manifest.split_records(corpus::Split::val).size() << '/'
     << ctx.manifest.split_records(corpus::Split::test).size() << "; config " << ctx.hash;
  log.info(os.str());
  return ctx;
}

// ---------------------------------------------------------------- style + augmentation

stylegen::DecoderState train_style(RunContext& ctx, bool force) {
  const auto& cfg = ctx.config;
  if (!force && !cfg.style.decoder.empty()) {
    ctx.log->info("using decoder " + cfg.style.decoder);
    return stylegen::load_decoder(cfg.style.decoder);
  }
  const auto key = style_key(cfg);
  const auto path = ctx.run_dir / "decoder.pt";
  if (!force && fs::exists(path)) {
    auto state = stylegen::load_decoder(path);
    if (state.config_hash == key) {
      ctx.log->info("reusing " + path.string());
      return state;
    }
    ctx.log->info("decoder.pt was trained for a different style config; retraining");
  }
  auto encoder = make_encoder(cfg);
  auto tc = decoder_config(cfg);
  const auto total = tc.mode == stylegen::TrainingMode::per_class
                         ? tc.iterations * static_cast<std::int64_t>(ctx.manifest.classes.size())
                         : tc.iterations;
  tc.on_step = [&, total](std::int64_t step, double loss) {
    if ((step + 1) % 100 == 0 || step + 1 == total) {
      ctx.log->info("decoder step " + std::to_string(step + 1) + "/" + std::to_string(total) + " loss " +
                    short_number(loss));
    }
  };
  ctx.log->info("training decoder: " + std::to_string(total) + " steps, mode " + stylegen::to_string(tc.mode));
  auto state = stylegen::train_decoder(encoder, ctx.manifest, tc);
  state.config_hash = key;
  stylegen::save_decoder(state, path);
  std::ostringstream csv;
  csv << "step,loss\n";
  for (std::size_t i = 0; i < state.loss_curve.size(); ++i) csv << i << ',' << short_number(state.loss_curve[i]) << '\n';
  write_text(ctx.run_dir / "style_loss.csv", csv.str());
  return state;
}

augment::AugmentationPlan make_plan(const RunContext& ctx, double p1, double p2) {
  const auto hist = corpus::class_histogram(ctx.manifest);
  const auto partition = corpus::partition_classes(hist, ctx.manifest.classes);
  return augment::plan_counts(hist, partition, p1, p2, derive_seed(ctx.config.seed, "augment"));
}

augment::AugmentedManifest materialize_cached(RunContext& ctx, const augment::AugmentationPlan& plan,
                                              const stylegen::DecoderState& decoder, const fs::path& cache_dir) {
  const auto& cfg = ctx.config;
  json key{{"counts", plan.per_class_counts},
           {"seed", plan.seed},
           {"decoder", hex64(decoder.fingerprint())},
           {"blend", cfg.style.blend},
           {"image_size", cfg.style.image_size},
           {"dataset", cfg.dataset.root}};
  const auto dir = cache_dir / ("plan_" + hex64(fnv1a(key.dump())));
  if (fs::exists(dir / "complete")) {
    ctx.log->info("reusing stylized set " + dir.string());
    return augment::read_provenance(dir);
  }
  fs::remove_all(dir);
  ctx.log->info("stylizing " + std::to_string(plan.total()) + " images into " + dir.string());
  augment::MaterializeOptions opts;
  opts.blend = cfg.style.blend;
  opts.image_size = cfg.style.image_size;
  opts.workers = cfg.workers;
  auto out = augment::materialize(plan, ctx.manifest, make_encoder(cfg), decoder, dir, opts);
  for (const auto& f : out.failures) ctx.log->warn("stylization resampled: " + f);
  write_text(dir / "plan.json", key.dump(2) + "\n");
  write_text(dir / "complete", "");
  return out;
}

// Stylized sets of every plan live side by side here, keyed by plan hash.
fs::path augment_dir(const RunContext& ctx) {
  return ctx.config.augment.out_dir.empty() ? ctx.run_dir / "augmented" : fs::path(ctx.config.augment.out_dir);
}

corpus::DatasetManifest augmented_manifest(RunContext& ctx) {
  const auto& cfg = ctx.config;
  if (!cfg.augment.enabled) return ctx.manifest;
  auto decoder = train_style(ctx);
  auto plan = make_plan(ctx, cfg.augment.p1, cfg.augment.p2);
  std::ostringstream os;
  os << "augmentation plan p1=" << cfg.augment.p1 << " p2=" << cfg.augment.p2 << ":";
  for (const auto& [label, n] : plan.per_class_counts) {
    os << ' ' << label << (plan.partition.is_representative(label) ? "(rep)" : "(rare)") << '=' << n;
  }
  ctx.log->info(os.str());
  auto aug = materialize_cached(ctx, plan, decoder, augment_dir(ctx));
  return augment::merge(ctx.manifest, aug);
}

// ---------------------------------------------------------------- search + training

double search_objective(const RunConfig& config, const corpus::LabeledImages& train, const corpus::LabeledImages& val,
                        std::int64_t classes, std::uint64_t trial_seed) {
  attnclf::AttentionClassifier model(model_config(config, classes));
  optim::TrainOptions opts;
  opts.batch_size = config.train.batch;
  opts.loss = config.loss;
  opts.seed = trial_seed;
  return optim::stage1_train(model, train, val, config.search.trial_epochs, config.train.schedule.stage1_lr, opts)
      .best_val_accuracy;
}

optim::SearchResult search(RunContext& ctx, const corpus::LabeledImages& train, const corpus::LabeledImages& val) {
  const auto& cfg = ctx.config;
  const auto space = search_space(cfg);
  const auto trials_path = ctx.run_dir / "trials.jsonl";
  fs::remove(trials_path);
  auto objective = [&](const optim::Config& trial, std::uint64_t seed) {
    return search_objective(apply_trial(cfg, trial), train, val, num_classes(ctx), seed);
  };
  auto sink = [&](const optim::TrialRecord& t) {
    auto line = optim::to_json(t);
    line["config_hash"] = ctx.hash;
    append_jsonl(trials_path, line);
    std::ostringstream os;
    os << optim::to_string(t.stage) << " trial " << t.index << " [" << optim::format_config(t.config) << "] -> "
       << (t.status == optim::TrialStatus::complete ? short_number(t.objective) : "failed: " + t.error);
    ctx.log->info(os.str());
  };
  ctx.log->info("grid search over " + std::to_string(space.grid_size()) + " configs");
  auto grid = optim::grid_search(space, objective, derive_seed(cfg.seed, "search/grid"), sink);
  ctx.log->info("TPE refinement: " + std::to_string(cfg.search.tpe_trials) + " trials around [" +
                optim::format_config(grid.best.config) + "]");
  auto result = optim::refine_search(grid.best, grid.history, space, objective, cfg.search.tpe_trials,
                                     derive_seed(cfg.seed, "search/tpe"), cfg.search.tpe, sink);
  write_text(ctx.run_dir / "best_config.json",
             json{{"trial", optim::to_json(result.best)}, {"config_hash", ctx.hash}}.dump(2) + "\n");
  ctx.log->info("best trial " + std::to_string(result.best.index) + " val accuracy " +
                short_number(result.best.objective));
  return result;
}

RunConfig resolved_config(const RunContext& ctx) {
  const auto path = ctx.run_dir / "best_config.json";
  if (!fs::exists(path)) return ctx.config;
  const auto j = json::parse(read_text(path));
  if (j.value("config_hash", "") != ctx.hash) {
    ctx.log->warn("ignoring best_config.json from a different config");
    return ctx.config;
  }
  return apply_trial(ctx.config, optim::trial_from_json(j.at("trial")).config);
}

TrainedModel train(RunContext& ctx, const RunConfig& config, const corpus::LabeledImages& train,
                   const corpus::LabeledImages& val, bool finetune) {
  TrainedModel out;
  out.config = config;
  const auto mc = model_config(config, num_classes(ctx));
  out.model = attnclf::AttentionClassifier(mc);
  const auto log_path = ctx.run_dir / "train_log.jsonl";
  fs::remove(log_path);
  optim::TrainOptions opts;
  opts.batch_size = config.train.batch;
  opts.loss = config.loss;
  opts.seed = derive_seed(config.seed, "train");
  opts.on_epoch = [&](const optim::EpochLog& e) {
    auto line = optim::to_json(e);
    line["config_hash"] = ctx.hash;
    append_jsonl(log_path, line);
    ctx.log->info("stage " + std::to_string(e.stage) + " epoch " + std::to_string(e.epoch) + " lr " +
                  short_number(e.lr) + " loss " + short_number(e.train_loss) + " val " + short_number(e.val_accuracy));
  };
  const auto& sched = config.train.schedule;
  auto schedule = optim::to_json(sched);
  schedule["finetune"] = finetune;
  schedule["config_hash"] = ctx.hash;
  write_text(ctx.run_dir / "schedule.json", schedule.dump(2) + "\n");

  ctx.log->info("stage 1: " + std::to_string(sched.stage1_epochs) + " epochs on " + std::to_string(train.size()) +
                " images");
  out.stage1 = optim::stage1_train(out.model, train, val, sched.stage1_epochs, sched.stage1_lr, opts);
  if (finetune) {
    ctx.log->info("stage 2: " + std::to_string(sched.stage2_epochs) + " epochs from lr " + short_number(sched.stage2_lr()));
    out.stage2 = optim::stage2_finetune(out.model, train, val, sched, opts);
  }
  attnclf::Checkpoint ckpt{out.model, mc, config.loss, ctx.manifest.classes, ctx.hash};
  attnclf::save_checkpoint(ckpt, ctx.run_dir / "model.pt");
  return out;
}

MetricsReport evaluate_run(RunContext& ctx, attnclf::AttentionClassifier& model, const corpus::LabeledImages& test) {
  auto report = evaluate(model, test, ctx.manifest.classes, ctx.config.train.batch);
  auto j = to_json(report);
  j["config_hash"] = ctx.hash;
  write_text(ctx.run_dir / "metrics.json", j.dump(2) + "\n");
  ctx.log->info("test accuracy " + percent(report.accuracy) + "%, macro precision " + percent(report.macro_precision) +
                "%, macro recall " + percent(report.macro_recall) + "%");
  for (const auto& z : report.zero_division) ctx.log->warn("zero division: " + z);
  return report;
}

void visualize(RunContext& ctx, attnclf::AttentionClassifier& model, const corpus::LabeledImages& split,
               const attnclf::LossConfig& loss) {
  const auto n = std::min<std::int64_t>(static_cast<std::int64_t>(ctx.config.visualize.heatmap_samples), split.size());
  if (n > 0) {
    std::vector<std::string> ids;
    for (std::int64_t i = 0; i < n; ++i) {
      char prefix[32];
      std::snprintf(prefix, sizeof prefix, "%04lld_", static_cast<long long>(i));
      ids.push_back(prefix + fs::path(split.records[static_cast<std::size_t>(i)].relative_path).stem().string());
    }
    auto files = export_heatmaps(model, split.images.slice(0, 0, n), ids, ctx.run_dir / "heatmaps");
    ctx.log->info("wrote " + std::to_string(files.size()) + " heatmap images");
  }
  auto ranking = confidence_ranking(model, split, ctx.config.visualize.top_k, loss, ctx.config.train.batch);
  for (const auto& w : ranking.warnings) ctx.log->warn(w);
  auto j = to_json(ranking, ctx.manifest.classes);
  j["config_hash"] = ctx.hash;
  write_text(ctx.run_dir / "confidence_topk.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------- sweep

std::string format_cell(const SweepCell& cell) {
  if (!cell.ok) return "FAILED";
  return percent(cell.metrics.accuracy) + "/" + percent(cell.metrics.macro_precision) + "/" +
         percent(cell.metrics.macro_recall);
}

std::vector<SweepCell> sweep_p1_p2(RunContext& ctx, const std::vector<std::pair<double, double>>& grid) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  const auto base = resolved_config(ctx);
  const auto& cfg = ctx.config;
  const int size = cfg.train.image_size;
  auto decoder = train_style(ctx);

  double max_p1 = 0.0, max_p2 = 0.0;
  for (const auto& [p1, p2] : grid) {
    if (!(p1 >= 0.0 && p1 <= 1.0 && p2 >= 0.0 && p2 <= 1.0)) throw ConfigError("sweep proportions must lie in [0,1]");
    max_p1 = std::max(max_p1, p1);
    max_p2 = std::max(max_p2, p2);
  }
  // one pool at the largest proportions; every cell is a per-class prefix
  auto pool = materialize_cached(ctx, make_plan(ctx, max_p1, max_p2), decoder, augment_dir(ctx));
  auto pool_train = corpus::load_split(augment::merge(ctx.manifest, pool), corpus::Split::train, size, cfg.workers);
  std::unordered_map<std::string, std::int64_t> row_of;
  for (std::size_t i = 0; i < pool_train.records.size(); ++i) {
    row_of[pool_train.records[i].relative_path] = static_cast<std::int64_t>(i);
  }
  const auto val = corpus::load_split(ctx.manifest, corpus::Split::val, size, cfg.workers);
  const auto test = corpus::load_split(ctx.manifest, corpus::Split::test, size, cfg.workers);

  const auto cell_dir = ctx.run_dir / "sweep_cells";
  fs::create_directories(cell_dir);
  std::vector<SweepCell> cells;
  for (const auto& [p1, p2] : grid) {
    SweepCell cell;
    cell.p1 = p1;
    cell.p2 = p2;
    const json key{{"config", ctx.hash},  {"base", to_json(base)},  {"p1", p1},
                   {"p2", p2},            {"decoder", hex64(decoder.fingerprint())}};
    const auto cache = cell_dir / (hex64(fnv1a(key.dump())) + ".json");
    try {
      if (fs::exists(cache)) {
        const auto j = json::parse(read_text(cache));
        cell.metrics = metrics_from_json(j.at("metrics"));
        for (const auto& e : j.at("curve")) {
          optim::EpochLog log;
          log.stage = 1;
          log.epoch = e.at("epoch");
          log.lr = e.at("lr");
          log.train_loss = e.at("train_loss");
          log.val_accuracy = e.at("val_accuracy");
          cell.curve.push_back(log);
        }
        cell.ok = true;
        cell.cached = true;
      } else {
        auto plan = make_plan(ctx, p1, p2);
        auto merged = augment::merge(ctx.manifest, augment::take_prefix(pool, plan));
        corpus::LabeledImages train;
        train.records = merged.split_records(corpus::Split::train);
        std::vector<std::int64_t> rows;
        for (const auto& r : train.records) rows.push_back(row_of.at(r.relative_path));
        const auto idx = torch::tensor(rows, torch::kInt64);
        train.images = pool_train.images.index_select(0, idx);
        train.labels = pool_train.labels.index_select(0, idx);

        attnclf::AttentionClassifier model(model_config(base, num_classes(ctx)));
        optim::TrainOptions opts;
        opts.batch_size = base.train.batch;
        opts.loss = base.loss;
        opts.seed = derive_seed(cfg.seed, "sweep");
        auto result = optim::stage1_train(model, train, val, cfg.sweep.epochs, base.train.schedule.stage1_lr, opts);
        cell.curve = result.log;
        cell.metrics = evaluate(model, test, ctx.manifest.classes, base.train.batch);
        cell.ok = true;
        json curve = json::array();
        for (const auto& e : cell.curve) curve.push_back(optim::to_json(e));
        write_text(cache, json{{"key", key}, {"metrics", to_json(cell.metrics)}, {"curve", curve}}.dump() + "\n");
      }
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
    ctx.log->info("sweep p1=" + short_number(p1) + " p2=" + short_number(p2) + ": " + format_cell(cell) +
                  (cell.cached ? " (cached)" : "") + (cell.ok ? "" : " " + cell.error));
    cells.push_back(std::move(cell));
  }

  // sweep.csv: rows p1, columns p2, in first-appearance order
  std::vector<double> rows, cols;
  for (const auto& [p1, p2] : grid) {
    if (std::find(rows.begin(), rows.end(), p1) == rows.end()) rows.push_back(p1);
    if (std::find(cols.begin(), cols.end(), p2) == cols.end()) cols.push_back(p2);
  }
  std::ostringstream csv;
  csv << "p1/p2";
  for (double c : cols) csv << ',' << short_number(c);
  csv << '\n';
  for (double r : rows) {
    csv << short_number(r);
    for (double c : cols) {
      csv << ',';
      for (const auto& cell : cells) {
        if (cell.p1 == r && cell.p2 == c) {
          csv << format_cell(cell);
          break;
        }
      }
    }
    csv << '\n';
  }
  write_text(ctx.run_dir / "sweep.csv", csv.str());

  json cells_json = json::array();
  std::ostringstream curves;
  curves << "p1,p2,epoch,train_loss,val_accuracy\n";
  for (const auto& cell : cells) {
    json c{{"p1", cell.p1}, {"p2", cell.p2}, {"ok", cell.ok}, {"cell", format_cell(cell)}};
    if (cell.ok) {
      c["metrics"] = to_json(cell.metrics);
    } else {
      c["error"] = cell.error;
    }
    cells_json.push_back(c);
    for (const auto& e : cell.curve) {
      curves << short_number(cell.p1) << ',' << short_number(cell.p2) << ',' << e.epoch << ','
             << short_number(e.train_loss) << ',' << short_number(e.val_accuracy) << '\n';
    }
  }
  write_text(ctx.run_dir / "sweep.json", json{{"cells", cells_json}, {"config_hash", ctx.hash}}.dump(2) + "\n");
  write_text(ctx.run_dir / "sweep_curves.csv", curves.str());
  return cells;
}

// ---------------------------------------------------------------- pipeline

MetricsReport run_pipeline(RunContext& ctx) {
  const auto start = std::chrono::steady_clock::now();
  const auto& cfg = ctx.config;
  const int size = cfg.train.image_size;
  auto merged = augmented_manifest(ctx);
  const auto train_set = corpus::load_split(merged, corpus::Split::train, size, cfg.workers);
  const auto val = corpus::load_split(ctx.manifest, corpus::Split::val, size, cfg.workers);
  const auto test = corpus::load_split(ctx.manifest, corpus::Split::test, size, cfg.workers);

  if (cfg.search.enabled) {
    search(ctx, train_set, val);
  } else {
    fs::remove(ctx.run_dir / "best_config.json");
  }
  const auto resolved = resolved_config(ctx);
  auto trained = train(ctx, resolved, train_set, val, resolved.train.finetune);
  auto report = evaluate_run(ctx, trained.model, test);
  visualize(ctx, trained.model, test, resolved.loss);
  if (cfg.sweep.in_pipeline) {
    std::vector<std::pair<double, double>> grid;
    for (double p1 : cfg.sweep.p1)
      for (double p2 : cfg.sweep.p2) grid.emplace_back(p1, p2);
    sweep_p1_p2(ctx, grid);
  }
  const auto seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ctx.log->info("pipeline finished in " + short_number(std::round(seconds)) + " s");
  return report;
}

}  // namespace artclf::bench
