#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "artclf/attnclf.hpp"
#include "artclf/augment.hpp"
#include "artclf/corpus.hpp"
#include "artclf/optim.hpp"
#include "artclf/stylegen.hpp"

namespace artclf::bench {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------- run config

struct DatasetSection {
  std::string root;
  corpus::ManifestFormat format = corpus::ManifestFormat::generic_csv;
  corpus::Task task = corpus::Task::status;
  corpus::SplitFractions split{0.8, 0.1, 0.1};
  // keep: use the manifest's splits; stratified: always re-split;
  // auto: re-split only when val or test is empty.
  std::string split_mode = "auto";
};

struct StyleSection {
  std::vector<std::string> taps{"relu1_1", "relu2_1", "relu3_1", "relu4_1"};
  std::int64_t iterations = 20000;
  double style_weight = 10.0;
  double lr = 1e-4;
  std::int64_t batch = 8;
  double blend = 1.0;
  stylegen::TrainingMode mode = stylegen::TrainingMode::per_class;
  int image_size = 256;
  int width_divisor = 1;
  std::string encoder_weights;  // converted VGG-19; empty = random frozen encoder
  std::string decoder;          // pretrained decoder to reuse; empty = train one
};

struct AugmentSection {
  bool enabled = true;
  double p1 = 0.3;
  double p2 = 0.2;
  std::string out_dir;  // empty = <run_dir>/augmented
};

struct ModelSection {
  attnclf::BackboneSpec backbone{attnclf::Architecture::resnet50, {}, true, true, "weights/resnet50.pt", 16, 0};
  std::int64_t projection_width = 512;
  std::int64_t hidden_width = 1024;
  double dropout = 0.5;
};

struct TrainSection {
  int batch = 64;
  std::string optimizer = "adam";
  int image_size = 224;
  bool finetune = true;
  optim::FinetuneSchedule schedule;
};

struct SearchSection {
  bool enabled = true;
  std::vector<optim::Dimension> space{
      optim::Dimension::log_uniform("lr", 1e-5, 1e-2),
      optim::Dimension::log_uniform("weight_decay", 1e-5, 1e-3),
      optim::Dimension::uniform("dropout", 0.1, 0.5, {0.1, 0.25, 0.5}),
  };
  std::size_t tpe_trials = 100;
  optim::TpeOptions tpe;
  int trial_epochs = 5;
};

struct SweepSection {
  std::vector<double> p1{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> p2{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int epochs = 30;
  bool in_pipeline = false;
};

struct VisualizeSection {
  std::size_t heatmap_samples = 4;
  std::size_t top_k = 8;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 8;
  DatasetSection dataset;
  StyleSection style;
  AugmentSection augment;
  ModelSection model;
  attnclf::LossConfig loss;
  TrainSection train;
  SearchSection search;
  SweepSection sweep;
  VisualizeSection visualize;
  std::string run_dir = "runs/default";
};

/// Canonical serialisation: every field, fixed key order.
json to_json(const RunConfig& config);
/// Missing keys take defaults; unknown keys and ill-typed values raise
/// ConfigError naming the offending field (e.g. "model.dropout").
RunConfig config_from_json(const json& j);
RunConfig load_config(const fs::path& path);

/// Range and path checks. Throws ConfigError listing every problem found.
void validate(const RunConfig& config);

/// Stable hash of the canonical serialisation (FNV-1a, hex).
std::string config_hash(const RunConfig& config);

/// Writes `<run_dir>/config.lock.json` = {"config": ..., "hash": ...}.
void write_lock(const RunConfig& config, const fs::path& run_dir);

/// Apply one search trial's values (lr, weight_decay, l1, dropout, gamma,
/// alpha) to a copy of the config.
RunConfig apply_trial(const RunConfig& config, const optim::Config& trial);

optim::SearchSpace search_space(const RunConfig& config);
attnclf::ModelConfig model_config(const RunConfig& config, std::int64_t num_classes);
stylegen::EncoderConfig encoder_config(const RunConfig& config);
stylegen::DecoderTrainConfig decoder_config(const RunConfig& config);

/// Load the dataset and apply the split policy. Warnings from stratified
/// splitting are appended to `warnings` when given.
corpus::DatasetManifest load_dataset(const RunConfig& config, std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------- metrics

struct MetricsReport {
  std::vector<std::string> classes;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
  std::int64_t total = 0;
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1;
  std::vector<std::int64_t> support;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  // "<class>.<metric>" entries whose denominator was zero (reported as 0)
  std::vector<std::string> zero_division;
};

MetricsReport metrics_from_confusion(const std::vector<std::vector<std::int64_t>>& confusion,
                                     const std::vector<std::string>& classes);
MetricsReport compute_metrics(const torch::Tensor& predicted, const torch::Tensor& labels,
                              const std::vector<std::string>& classes);
/// Eval-mode predictions over a split. Throws EvaluationError when empty.
MetricsReport evaluate(attnclf::AttentionClassifier& model, const corpus::LabeledImages& split,
                       const std::vector<std::string>& classes, int batch_size = 64);

json to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const json& j);

// ---------------------------------------------------------------- visualisation

struct RankedSample {
  std::size_t index = 0;  // position in the split
  corpus::ImageRecord record;
  double loss = 0.0;
  std::int64_t predicted = 0;
  std::int64_t truth = 0;
};

struct ConfidenceRanking {
  std::vector<RankedSample> least_confident;  // loss descending
  std::vector<RankedSample> most_confident;   // loss ascending
  std::vector<std::string> warnings;
};

/// Rank a split by per-sample focal loss. k larger than the split is clipped
/// with a warning. Ties are broken by split position, so for k = n the two
/// lists are exact reversals.
ConfidenceRanking confidence_ranking(attnclf::AttentionClassifier& model, const corpus::LabeledImages& split,
                                     std::size_t k, const attnclf::LossConfig& loss, int batch_size = 64);
json to_json(const ConfidenceRanking& ranking, const std::vector<std::string>& classes);

/// Map [h,w] -> [H,W] in [0,1]: bilinear upsampling then per-map min-max
/// normalisation; a constant map becomes 0.5 everywhere.
torch::Tensor normalized_heatmap(const torch::Tensor& map, std::int64_t height, std::int64_t width);

/// Blend the JET-coloured heatmap over the image at 50% opacity; 8-bit BGR.
cv::Mat overlay_heatmap(const torch::Tensor& image, const torch::Tensor& heat);

/// For every sample and tap write `<id>_tap<i>.png`, plus a row montage
/// `<id>_montage.png` (input followed by each tap). Returns written paths in
/// order. Unwritable output raises IoError.
std::vector<fs::path> export_heatmaps(attnclf::AttentionClassifier& model, const torch::Tensor& images,
                                      const std::vector<std::string>& ids, const fs::path& out_dir);

// ---------------------------------------------------------------- run steps

/// Appends timestamped lines to `<run_dir>/run.log` and echoes to stderr.
class RunLog {
 public:
  explicit RunLog(const fs::path& run_dir, bool echo = true);
  void info(const std::string& message);
  void warn(const std::string& message);

 private:
  std::ofstream out_;
  bool echo_;
};

/// Everything the steps share. Steps load or reuse artifacts in run_dir.
struct RunContext {
  RunConfig config;
  std::string hash;
  fs::path run_dir;
  corpus::DatasetManifest manifest;
  RunLog* log = nullptr;
};

RunContext make_context(const RunConfig& config, RunLog& log);

/// Load `style.decoder`, else `<run_dir>/decoder.pt`, else train and save it
/// (with `style_loss.csv`).
stylegen::DecoderState train_style(RunContext& ctx, bool force = false);

/// Materialize (or reuse) a plan's stylized images; cache-keyed by plan,
/// seed and decoder fingerprint under `cache_dir`.
augment::AugmentedManifest materialize_cached(RunContext& ctx, const augment::AugmentationPlan& plan,
                                              const stylegen::DecoderState& decoder, const fs::path& cache_dir);

/// `augment.out_dir`, or `<run_dir>/augmented`; one `plan_<hash>` per plan.
fs::path augment_dir(const RunContext& ctx);

augment::AugmentationPlan make_plan(const RunContext& ctx, double p1, double p2);

/// Merged manifest for the configured augmentation (original if disabled).
corpus::DatasetManifest augmented_manifest(RunContext& ctx);

struct TrainedModel {
  attnclf::AttentionClassifier model{nullptr};
  optim::StageResult stage1;
  std::optional<optim::StageResult> stage2;
  RunConfig config;  // with the applied search result
};

/// Stage-1 training from scratch on `train`; objective of the search.
double search_objective(const RunConfig& config, const corpus::LabeledImages& train,
                        const corpus::LabeledImages& val, std::int64_t num_classes, std::uint64_t trial_seed);

/// Grid + TPE search; writes trials.jsonl and best_config.json.
optim::SearchResult search(RunContext& ctx, const corpus::LabeledImages& train, const corpus::LabeledImages& val);

/// Config with best_config.json applied when present.
RunConfig resolved_config(const RunContext& ctx);

/// Stage 1 (+ stage 2 when finetune); writes model.pt, schedule.json and
/// train_log.jsonl.
TrainedModel train(RunContext& ctx, const RunConfig& config, const corpus::LabeledImages& train,
                   const corpus::LabeledImages& val, bool finetune);

/// Writes metrics.json.
MetricsReport evaluate_run(RunContext& ctx, attnclf::AttentionClassifier& model, const corpus::LabeledImages& test);

/// Heatmaps for the first samples of `split` and confidence_topk.json.
void visualize(RunContext& ctx, attnclf::AttentionClassifier& model, const corpus::LabeledImages& split,
               const attnclf::LossConfig& loss);

struct SweepCell {
  double p1 = 0.0, p2 = 0.0;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
  std::vector<optim::EpochLog> curve;
  bool cached = false;
};

/// "acc/prec/rec" as percentages with two decimals, or FAILED.
std::string format_cell(const SweepCell& cell);

/// For each (p1,p2): plan -> take_prefix from one pool materialized at the
/// grid's maximum proportions (in augment_dir) -> merge -> stage 1 -> test metrics. Cells are
/// cached under `<run_dir>/sweep_cells/`. Writes sweep.csv (rows p1, columns
/// p2), sweep.json and sweep_curves.csv.
std::vector<SweepCell> sweep_p1_p2(RunContext& ctx, const std::vector<std::pair<double, double>>& grid);

/// Everything: style, augment, search, train (+finetune), evaluate,
/// visualize and, when configured, the sweep.
MetricsReport run_pipeline(RunContext& ctx);

}  // namespace artclf::bench
