#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "artclf/attnclf.hpp"
#include "artclf/corpus.hpp"

namespace artclf::optim {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- search space

enum class DimKind { log_uniform, uniform, categorical };
std::string to_string(DimKind k);
DimKind parse_dim_kind(const std::string& s);

using ParamValue = std::variant<double, std::string>;
using Config = std::map<std::string, ParamValue>;

struct Dimension {
  std::string name;
  DimKind kind = DimKind::uniform;
  double low = 0.0;
  double high = 1.0;
  std::vector<std::string> choices;  // categorical only
  std::vector<ParamValue> grid;      // explicit grid points; empty means the default discretisation

  static Dimension log_uniform(std::string name, double low, double high, std::vector<double> grid = {});
  static Dimension uniform(std::string name, double low, double high, std::vector<double> grid = {});
  static Dimension categorical(std::string name, std::vector<std::string> choices);

  /// Explicit grid, else: decade steps from `low` (log), {low, mid, high}
  /// (uniform), or every choice (categorical).
  std::vector<ParamValue> grid_points() const;
  bool contains(const ParamValue& v) const;
};

struct SearchSpace {
  std::vector<Dimension> dims;

  /// Throws ConfigError on an empty space, duplicate names, bad bounds.
  void validate() const;
  const Dimension& at(const std::string& name) const;
  std::size_t grid_size() const;
  bool contains(const Config& config) const;
};

double real_param(const Config& config, const std::string& name);
std::string choice_param(const Config& config, const std::string& name);
std::string format_config(const Config& config);

// ---------------------------------------------------------------- trials

enum class TrialStage { grid, tpe };
enum class TrialStatus { complete, failed };
std::string to_string(TrialStage s);
std::string to_string(TrialStatus s);

struct TrialRecord {
  std::size_t index = 0;  // position in the combined history
  Config config;
  double objective = 0.0;  // validation accuracy; meaningless when failed
  TrialStage stage = TrialStage::grid;
  std::uint64_t seed = 0;
  TrialStatus status = TrialStatus::complete;
  double seconds = 0.0;
  std::string error;
};

nlohmann::json to_json(const TrialRecord& t);
TrialRecord trial_from_json(const nlohmann::json& j);
void write_trials_jsonl(const std::vector<TrialRecord>& history, const fs::path& path);
std::vector<TrialRecord> read_trials_jsonl(const fs::path& path);

/// Maximise objective(config, trial_seed). Exceptions mark the trial failed.
using Objective = std::function<double(const Config&, std::uint64_t)>;
/// Called after every trial (e.g. to append to trials.jsonl).
using TrialSink = std::function<void(const TrialRecord&)>;

struct SearchResult {
  TrialRecord best;
  std::vector<TrialRecord> history;
};

/// Best complete trial; ties go to the earliest. Throws SearchError if none.
const TrialRecord& best_trial(const std::vector<TrialRecord>& history);

/// Every point of the Cartesian product of grid points, first dimension
/// varying slowest.
std::vector<Config> grid_configs(const SearchSpace& space);

SearchResult grid_search(const SearchSpace& space, const Objective& objective, std::uint64_t seed,
                         const TrialSink& sink = {});

struct TpeOptions {
  double quantile = 0.25;
  std::size_t n_candidates = 24;
  std::size_t n_startup = 10;
};

/// Uniform draw (log-uniform on log dims).
Config random_config(const SearchSpace& space, std::uint64_t seed);

/// Tree-structured Parzen estimator suggestion from complete, in-bounds
/// history entries. Falls back to random_config during start-up.
Config tpe_suggest(const std::vector<TrialRecord>& history, const SearchSpace& space, const TpeOptions& options,
                   std::uint64_t seed);

/// +-1 decade (log dims) or +-25% of the range (uniform dims) around the
/// incumbent, clipped to the original bounds. Categorical dims unchanged.
SearchSpace refine_space(const SearchSpace& space, const Config& incumbent);

/// n_trials sequential TPE trials in the refined space, seeded with the
/// in-bounds part of `prior`. Returns the best over prior + new trials.
SearchResult refine_search(const TrialRecord& incumbent, const std::vector<TrialRecord>& prior,
                           const SearchSpace& space, const Objective& objective, std::size_t n_trials,
                           std::uint64_t seed, const TpeOptions& options = {}, const TrialSink& sink = {});

// ---------------------------------------------------------------- schedules

struct FinetuneSchedule {
  int stage1_epochs = 30;
  int stage2_epochs = 30;
  double stage1_lr = 1e-3;
  int step_size = 10;
  double decay_factor = 0.1;

  /// Always stage1_lr / 10.
  double stage2_lr() const { return stage1_lr / 10.0; }
  void validate() const;
};

nlohmann::json to_json(const FinetuneSchedule& s);
FinetuneSchedule schedule_from_json(const nlohmann::json& j);

/// base_lr * decay_factor^floor(epoch / step_size).
double step_lr(int epoch, double base_lr, const FinetuneSchedule& sched);

// ---------------------------------------------------------------- training

struct EpochLog {
  int stage = 1;
  int epoch = 0;   // -1 marks stage 2's evaluation of its starting weights
  double lr = 0.0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  std::size_t trainable_tensors = 0;
  double seconds = 0.0;
};
nlohmann::json to_json(const EpochLog& e);

struct TrainOptions {
  int batch_size = 32;
  attnclf::LossConfig loss;
  std::uint64_t seed = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

struct StageResult {
  double best_val_accuracy = 0.0;
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

/// Logits for a batch of images, evaluated in eval mode in chunks.
torch::Tensor predict(attnclf::AttentionClassifier& model, const torch::Tensor& images, int batch_size = 64);

double accuracy(const torch::Tensor& logits, const torch::Tensor& labels);

/// Train the parameters that require gradients (the head when the backbone is
/// frozen) with Adam on training_loss; keep the epoch with the best
/// validation accuracy (earliest on ties) and load it back into `model`.
/// Backbone features are computed once when the backbone is frozen.
StageResult stage1_train(attnclf::AttentionClassifier& model, const corpus::LabeledImages& train,
                         const corpus::LabeledImages& val, int epochs, double lr, const TrainOptions& options);

/// Gradual unfreezing: epoch 0 trains the deeper half of the backbone stages
/// with the head, later epochs train everything, at step_lr(stage2_lr). The
/// starting weights compete as a candidate, so stage 2 never returns a model
/// worse on validation than it started with.
StageResult stage2_finetune(attnclf::AttentionClassifier& model, const corpus::LabeledImages& train,
                            const corpus::LabeledImages& val, const FinetuneSchedule& sched,
                            const TrainOptions& options);

}  // namespace artclf::optim
