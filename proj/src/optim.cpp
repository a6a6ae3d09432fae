#include "artclf/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "artclf/error.hpp"
#include "artclf/util.hpp"

namespace artclf::optim {

using json = nlohmann::json;

// ---------------------------------------------------------------- search space

std::string to_string(DimKind k) {
  switch (k) {
    case DimKind::log_uniform: return "log_uniform";
    case DimKind::uniform: return "uniform";
    case DimKind::categorical: return "categorical";
  }
  return "unknown";
}

DimKind parse_dim_kind(const std::string& s) {
  if (s == "log_uniform") return DimKind::log_uniform;
  if (s == "uniform") return DimKind::uniform;
  if (s == "categorical") return DimKind::categorical;
  throw ConfigError("unknown dimension kind '" + s + "' (expected log_uniform, uniform or categorical)");
}

namespace {

std::vector<ParamValue> to_values(const std::vector<double>& xs) { return {xs.begin(), xs.end()}; }

}  // namespace

Dimension Dimension::log_uniform(std::string name, double low, double high, std::vector<double> grid) {
  return {std::move(name), DimKind::log_uniform, low, high, {}, to_values(grid)};
}

Dimension Dimension::uniform(std::string name, double low, double high, std::vector<double> grid) {
  return {std::move(name), DimKind::uniform, low, high, {}, to_values(grid)};
}

Dimension Dimension::categorical(std::string name, std::vector<std::string> choices) {
  return {std::move(name), DimKind::categorical, 0.0, 0.0, std::move(choices), {}};
}

std::vector<ParamValue> Dimension::grid_points() const {
  if (!grid.empty()) return grid;
  std::vector<ParamValue> out;
  switch (kind) {
    case DimKind::log_uniform:
      for (int k = 0;; ++k) {
        const double v = low * std::pow(10.0, k);
        if (v > high * (1.0 + 1e-9)) break;
        out.emplace_back(std::min(v, high));
      }
      break;
    case DimKind::uniform:
      out = {low, 0.5 * (low + high), high};
      if (low == high) out.resize(1);
      break;
    case DimKind::categorical:
      for (const auto& c : choices) out.emplace_back(c);
      break;
  }
  return out;
}

bool Dimension::contains(const ParamValue& v) const {
  if (kind == DimKind::categorical) {
    const auto* s = std::get_if<std::string>(&v);
    return s && std::find(choices.begin(), choices.end(), *s) != choices.end();
  }
  const auto* x = std::get_if<double>(&v);
  return x && std::isfinite(*x) && *x >= low && *x <= high;
}

void SearchSpace::validate() const {
  if (dims.empty()) throw ConfigError("search space has no dimensions");
  std::set<std::string> names;
  for (const auto& d : dims) {
    if (!names.insert(d.name).second) throw ConfigError("duplicate search dimension '" + d.name + "'");
    switch (d.kind) {
      case DimKind::log_uniform:
        if (!(d.low > 0.0 && d.high >= d.low)) {
          throw ConfigError("log_uniform dimension '" + d.name + "' needs 0 < low <= high");
        }
        break;
      case DimKind::uniform:
        if (!(std::isfinite(d.low) && std::isfinite(d.high) && d.high >= d.low)) {
          throw ConfigError("uniform dimension '" + d.name + "' needs finite low <= high");
        }
        break;
      case DimKind::categorical:
        if (d.choices.empty()) throw ConfigError("categorical dimension '" + d.name + "' has no choices");
        break;
    }
    for (const auto& g : d.grid) {
      if (!d.contains(g)) throw ConfigError("grid point of '" + d.name + "' lies outside its bounds");
    }
  }
}

const Dimension& SearchSpace::at(const std::string& name) const {
  for (const auto& d : dims)
    if (d.name == name) return d;
  throw ConfigError("unknown search dimension '" + name + "'");
}

std::size_t SearchSpace::grid_size() const {
  std::size_t n = 1;
  for (const auto& d : dims) n *= d.grid_points().size();
  return n;
}

bool SearchSpace::contains(const Config& config) const {
  for (const auto& d : dims) {
    auto it = config.find(d.name);
    if (it == config.end() || !d.contains(it->second)) return false;
  }
  return true;
}

double real_param(const Config& config, const std::string& name) {
  auto it = config.find(name);
  if (it == config.end()) throw ConfigError("config lacks parameter '" + name + "'");
  if (const auto* x = std::get_if<double>(&it->second)) return *x;
  throw ConfigError("parameter '" + name + "' is not numeric");
}

std::string choice_param(const Config& config, const std::string& name) {
  auto it = config.find(name);
  if (it == config.end()) throw ConfigError("config lacks parameter '" + name + "'");
  if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
  throw ConfigError("parameter '" + name + "' is not categorical");
}

namespace {

json value_json(const ParamValue& v) {
  if (const auto* x = std::get_if<double>(&v)) return *x;
  return std::get<std::string>(v);
}

ParamValue value_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  return j.get<std::string>();
}

}  // namespace

std::string format_config(const Config& config) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [k, v] : config) {
    os << (first ? "" : " ") << k << '=' << value_json(v).dump();
    first = false;
  }
  return os.str();
}

// ---------------------------------------------------------------- trials

std::string to_string(TrialStage s) { return s == TrialStage::grid ? "grid" : "tpe"; }
std::string to_string(TrialStatus s) { return s == TrialStatus::complete ? "complete" : "failed"; }

json to_json(const TrialRecord& t) {
  json config = json::object();
  for (const auto& [k, v] : t.config) config[k] = value_json(v);
  json j{{"index", t.index},
         {"config", config},
         {"objective", t.status == TrialStatus::complete ? json(t.objective) : json(nullptr)},
         {"stage", to_string(t.stage)},
         {"seed", t.seed},
         {"status", to_string(t.status)},
         {"seconds", t.seconds}};
  if (!t.error.empty()) j["error"] = t.error;
  return j;
}

TrialRecord trial_from_json(const json& j) {
  TrialRecord t;
  t.index = j.at("index");
  for (const auto& [k, v] : j.at("config").items()) t.config[k] = value_from_json(v);
  t.status = j.at("status") == "complete" ? TrialStatus::complete : TrialStatus::failed;
  t.objective = j.at("objective").is_null() ? 0.0 : j.at("objective").get<double>();
  t.stage = j.at("stage") == "grid" ? TrialStage::grid : TrialStage::tpe;
  t.seed = j.at("seed");
  t.seconds = j.at("seconds");
  if (j.contains("error")) t.error = j.at("error");
  return t;
}

void write_trials_jsonl(const std::vector<TrialRecord>& history, const fs::path& path) {
  std::string text;
  for (const auto& t : history) text += to_json(t).dump() + "\n";
  write_text(path, text);
}

std::vector<TrialRecord> read_trials_jsonl(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<TrialRecord> out;
  for (std::string line; std::getline(in, line);) {
    if (!trim(line).empty()) out.push_back(trial_from_json(json::parse(line)));
  }
  return out;
}

const TrialRecord& best_trial(const std::vector<TrialRecord>& history) {
  const TrialRecord* best = nullptr;
  for (const auto& t : history) {
    if (t.status != TrialStatus::complete) continue;
    if (!best || t.objective > best->objective) best = &t;
  }
  if (!best) throw SearchError("every trial failed; no best configuration");
  return *best;
}

std::vector<Config> grid_configs(const SearchSpace& space) {
  space.validate();
  std::vector<std::vector<ParamValue>> points;
  for (const auto& d : space.dims) points.push_back(d.grid_points());
  std::vector<Config> out;
  std::vector<std::size_t> idx(points.size(), 0);
  for (;;) {
    Config c;
    for (std::size_t i = 0; i < points.size(); ++i) c[space.dims[i].name] = points[i][idx[i]];
    out.push_back(std::move(c));
    // odometer with the last dimension fastest
    std::size_t i = points.size();
    while (i > 0) {
      --i;
      if (++idx[i] < points[i].size()) break;
      idx[i] = 0;
      if (i == 0) return out;
    }
  }
}

namespace {

TrialRecord run_trial(std::size_t index, const Config& config, TrialStage stage, std::uint64_t seed,
                      const Objective& objective) {
  TrialRecord t;
  t.index = index;
  t.config = config;
  t.stage = stage;
  t.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    t.objective = objective(config, seed);
    if (!std::isfinite(t.objective)) throw SearchError("objective returned a non-finite value");
  } catch (const std::exception& e) {
    t.status = TrialStatus::failed;
    t.objective = 0.0;
    t.error = e.what();
  }
  t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return t;
}

}  // namespace

SearchResult grid_search(const SearchSpace& space, const Objective& objective, std::uint64_t seed,
                         const TrialSink& sink) {
  SearchResult result;
  const auto configs = grid_configs(space);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    auto t = run_trial(i, configs[i], TrialStage::grid, derive_seed(seed, "grid/" + std::to_string(i)), objective);
    if (sink) sink(t);
    result.history.push_back(std::move(t));
  }
  result.best = best_trial(result.history);
  return result;
}

// ---------------------------------------------------------------- TPE

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

// Continuous dims are modelled in "internal" coordinates: log(x) for log
// dims, x otherwise.
double to_internal(const Dimension& d, double x) { return d.kind == DimKind::log_uniform ? std::log(x) : x; }
double from_internal(const Dimension& d, double u) {
  const double x = d.kind == DimKind::log_uniform ? std::exp(u) : u;
  return std::clamp(x, d.low, d.high);
}

// Gaussian mixture truncated to [lo, hi]: one kernel per observation plus a
// broad prior kernel centred on the interval.
struct Parzen {
  std::vector<double> mu, sigma, weight;
  double lo = 0, hi = 0;

  Parzen(const std::vector<double>& obs, double lo_, double hi_) : lo(lo_), hi(hi_) {
    const double range = std::max(hi - lo, 1e-12);
    const double bw = std::clamp(range / static_cast<double>(std::max<std::size_t>(obs.size(), 1)), 1e-3 * range, range);
    const double w = 1.0 / static_cast<double>(obs.size() + 1);
    for (double x : obs) {
      mu.push_back(x);
      sigma.push_back(bw);
      weight.push_back(w);
    }
    mu.push_back(0.5 * (lo + hi));
    sigma.push_back(range);
    weight.push_back(w);
  }

  double log_pdf(double x) const {
    double p = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
      const double z = (x - mu[k]) / sigma[k];
      const double mass = normal_cdf((hi - mu[k]) / sigma[k]) - normal_cdf((lo - mu[k]) / sigma[k]);
      p += weight[k] * kInvSqrt2Pi * std::exp(-0.5 * z * z) / (sigma[k] * std::max(mass, 1e-300));
    }
    return std::log(std::max(p, 1e-300));
  }

  double sample(std::mt19937_64& gen) const {
    std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
    const auto k = pick(gen);
    std::normal_distribution<double> normal(mu[k], sigma[k]);
    // the kernel centre lies inside the interval, so acceptance is >= 1/2
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double x = normal(gen);
      if (x >= lo && x <= hi) return x;
    }
    return std::clamp(mu[k], lo, hi);
  }
};

struct Categorical {
  std::vector<double> prob;

  Categorical(const Dimension& d, const std::vector<std::string>& obs) {
    prob.assign(d.choices.size(), 1.0);  // add-one smoothing
    for (const auto& o : obs) {
      auto it = std::find(d.choices.begin(), d.choices.end(), o);
      prob[static_cast<std::size_t>(it - d.choices.begin())] += 1.0;
    }
    const double total = std::accumulate(prob.begin(), prob.end(), 0.0);
    for (auto& p : prob) p /= total;
  }
};

}  // namespace

Config random_config(const SearchSpace& space, std::uint64_t seed) {
  space.validate();
  std::mt19937_64 gen(seed);
  Config c;
  for (const auto& d : space.dims) {
    if (d.kind == DimKind::categorical) {
      std::uniform_int_distribution<std::size_t> pick(0, d.choices.size() - 1);
      c[d.name] = d.choices[pick(gen)];
    } else {
      std::uniform_real_distribution<double> u(to_internal(d, d.low), to_internal(d, d.high));
      c[d.name] = from_internal(d, u(gen));
    }
  }
  return c;
}

Config tpe_suggest(const std::vector<TrialRecord>& history, const SearchSpace& space, const TpeOptions& options,
                   std::uint64_t seed) {
  space.validate();
  if (!(options.quantile > 0.0 && options.quantile < 1.0)) throw ConfigError("TPE quantile must lie in (0,1)");
  if (options.n_candidates < 1) throw ConfigError("TPE needs at least one candidate");

  std::vector<const TrialRecord*> usable;
  for (const auto& t : history) {
    if (t.status == TrialStatus::complete && space.contains(t.config)) usable.push_back(&t);
  }
  if (usable.size() < std::max<std::size_t>(options.n_startup, 2)) return random_config(space, seed);

  std::stable_sort(usable.begin(), usable.end(),
                   [](const TrialRecord* a, const TrialRecord* b) { return a->objective > b->objective; });
  const auto n = usable.size();
  const auto n_good = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(options.quantile * static_cast<double>(n))), 1, n - 1);

  std::mt19937_64 gen(seed);
  std::vector<Config> candidates(options.n_candidates);
  std::vector<double> score(options.n_candidates, 0.0);
  for (const auto& d : space.dims) {
    if (d.kind == DimKind::categorical) {
      std::vector<std::string> good, bad;
      for (std::size_t i = 0; i < n; ++i) (i < n_good ? good : bad).push_back(choice_param(usable[i]->config, d.name));
      const Categorical l(d, good), g(d, bad);
      std::discrete_distribution<std::size_t> pick(l.prob.begin(), l.prob.end());
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        const auto k = pick(gen);
        candidates[c][d.name] = d.choices[k];
        score[c] += std::log(l.prob[k]) - std::log(g.prob[k]);
      }
    } else {
      std::vector<double> good, bad;
      for (std::size_t i = 0; i < n; ++i) {
        (i < n_good ? good : bad).push_back(to_internal(d, real_param(usable[i]->config, d.name)));
      }
      const double lo = to_internal(d, d.low), hi = to_internal(d, d.high);
      const Parzen l(good, lo, hi), g(bad, lo, hi);
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        const double u = l.sample(gen);
        candidates[c][d.name] = from_internal(d, u);
        score[c] += l.log_pdf(u) - g.log_pdf(u);
      }
    }
  }
  const auto best = std::max_element(score.begin(), score.end()) - score.begin();
  return candidates[static_cast<std::size_t>(best)];
}

SearchSpace refine_space(const SearchSpace& space, const Config& incumbent) {
  space.validate();
  SearchSpace out = space;
  for (auto& d : out.dims) {
    d.grid.clear();
    if (d.kind == DimKind::categorical) continue;
    const double x = std::clamp(real_param(incumbent, d.name), d.low, d.high);
    if (d.kind == DimKind::log_uniform) {
      d.low = std::max(d.low, x / 10.0);
      d.high = std::min(d.high, x * 10.0);
    } else {
      const double half = 0.25 * (d.high - d.low);
      d.low = std::max(d.low, x - half);
      d.high = std::min(d.high, x + half);
    }
  }
  return out;
}

SearchResult refine_search(const TrialRecord& incumbent, const std::vector<TrialRecord>& prior,
                           const SearchSpace& space, const Objective& objective, std::size_t n_trials,
                           std::uint64_t seed, const TpeOptions& options, const TrialSink& sink) {
  const auto refined = refine_space(space, incumbent.config);
  SearchResult result;
  result.history = prior;
  for (std::size_t t = 0; t < n_trials; ++t) {
    const auto suggestion = tpe_suggest(result.history, refined, options, derive_seed(seed, "tpe/suggest/" + std::to_string(t)));
    auto record = run_trial(result.history.size(), suggestion, TrialStage::tpe,
                            derive_seed(seed, "tpe/" + std::to_string(t)), objective);
    if (sink) sink(record);
    result.history.push_back(std::move(record));
  }
  // the incumbent competes even if it is not part of `prior`
  std::vector<TrialRecord> pool = result.history;
  pool.insert(pool.begin(), incumbent);
  const auto& best = best_trial(pool);
  result.best = best;
  return result;
}

// ---------------------------------------------------------------- schedules

void FinetuneSchedule::validate() const {
  if (stage1_epochs < 0 || stage2_epochs < 0) throw ConfigError("epoch counts must be >= 0");
  if (!(stage1_lr > 0.0)) throw ConfigError("stage-1 learning rate must be > 0");
  if (step_size < 1) throw ConfigError("lr step size must be >= 1 epoch");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("lr decay factor must lie in (0,1]");
}

json to_json(const FinetuneSchedule& s) {
  return {{"stage1_epochs", s.stage1_epochs}, {"stage2_epochs", s.stage2_epochs}, {"stage1_lr", s.stage1_lr},
          {"stage2_lr", s.stage2_lr()},       {"step_size", s.step_size},         {"decay_factor", s.decay_factor}};
}

FinetuneSchedule schedule_from_json(const json& j) {
  FinetuneSchedule s;
  s.stage1_epochs = j.at("stage1_epochs");
  s.stage2_epochs = j.at("stage2_epochs");
  s.stage1_lr = j.at("stage1_lr");
  s.step_size = j.at("step_size");
  s.decay_factor = j.at("decay_factor");
  return s;
}

double step_lr(int epoch, double base_lr, const FinetuneSchedule& sched) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  return base_lr * std::pow(sched.decay_factor, epoch / sched.step_size);
}

// ---------------------------------------------------------------- training

json to_json(const EpochLog& e) {
  return {{"stage", e.stage},           {"epoch", e.epoch},     {"lr", e.lr},
          {"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy},
          {"trainable_tensors", e.trainable_tensors}, {"seconds", e.seconds}};
}

namespace {

using attnclf::AttentionClassifier;
using attnclf::FeatureTaps;

FeatureTaps slice(const FeatureTaps& f, const torch::Tensor& idx) {
  FeatureTaps out;
  for (const auto& l : f.locals) out.locals.push_back(l.index_select(0, idx));
  out.global_vec = f.global_vec.index_select(0, idx);
  return out;
}

FeatureTaps extract_all(AttentionClassifier& model, const torch::Tensor& images, int batch) {
  torch::NoGradGuard no_grad;
  std::vector<FeatureTaps> parts;
  for (std::int64_t i = 0; i < images.size(0); i += batch) {
    parts.push_back(model->backbone()->forward(images.slice(0, i, std::min<std::int64_t>(i + batch, images.size(0)))));
  }
  FeatureTaps out;
  for (std::size_t t = 0; t < parts.front().locals.size(); ++t) {
    std::vector<torch::Tensor> ts;
    for (const auto& p : parts) ts.push_back(p.locals[t]);
    out.locals.push_back(torch::cat(ts, 0));
  }
  std::vector<torch::Tensor> gs;
  for (const auto& p : parts) gs.push_back(p.global_vec);
  out.global_vec = torch::cat(gs, 0);
  return out;
}

torch::Tensor predict_features(AttentionClassifier& model, const FeatureTaps& f, int batch) {
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  const auto n = f.global_vec.size(0);
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < n; i += batch) {
    parts.push_back(model->forward_features(slice(f, torch::arange(i, std::min<std::int64_t>(i + batch, n)))).logits);
  }
  model->train(was_training);
  return torch::cat(parts, 0);
}

std::vector<torch::Tensor> trainable(AttentionClassifier& model) {
  std::vector<torch::Tensor> out;
  for (auto& p : model->parameters())
    if (p.requires_grad()) out.push_back(p);
  return out;
}

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
  std::vector<torch::Tensor> out;
  for (const auto& p : params) out.push_back(p.detach().clone());
  return out;
}

void restore(const std::vector<torch::Tensor>& params, const std::vector<torch::Tensor>& saved) {
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(saved[i]);
}

void check_data(const corpus::LabeledImages& train, const corpus::LabeledImages& val) {
  if (train.size() == 0) throw TrainingError("training split is empty");
  if (val.size() == 0) throw TrainingError("validation split is empty");
}

// One pass over the training data. `features` is set when the backbone is
// frozen and its outputs were precomputed.
double train_epoch(AttentionClassifier& model, torch::optim::Optimizer& opt, const corpus::LabeledImages& train,
                   const std::optional<FeatureTaps>& features, const TrainOptions& options, int stage, int epoch,
                   std::uint64_t shuffle_seed) {
  model->train();
  auto gen = at::detail::createCPUGenerator(shuffle_seed);
  const auto n = train.size();
  auto order = torch::randperm(n, gen, torch::TensorOptions().dtype(torch::kInt64));
  const auto head = model->head_parameters();
  double total = 0.0;
  for (std::int64_t start = 0, b = 0; start < n; start += options.batch_size, ++b) {
    auto idx = order.slice(0, start, std::min<std::int64_t>(start + options.batch_size, n));
    auto out = features ? model->forward_features(slice(*features, idx)) : model->forward(train.images.index_select(0, idx));
    auto labels = train.labels.index_select(0, idx);
    auto loss = attnclf::training_loss(out.logits, labels, options.loss, head);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      throw TrainingError("non-finite loss in stage " + std::to_string(stage) + ", epoch " + std::to_string(epoch) +
                          ", batch " + std::to_string(b));
    }
    opt.zero_grad();
    loss.backward();
    opt.step();
    total += value * static_cast<double>(idx.size(0));
  }
  return total / static_cast<double>(n);
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

torch::Tensor predict(AttentionClassifier& model, const torch::Tensor& images, int batch_size) {
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  std::vector<torch::Tensor> parts;
  for (std::int64_t i = 0; i < images.size(0); i += batch_size) {
    parts.push_back(model->forward(images.slice(0, i, std::min<std::int64_t>(i + batch_size, images.size(0)))).logits);
  }
  model->train(was_training);
  if (parts.empty()) return torch::empty({0, model->config().num_classes});
  return torch::cat(parts, 0);
}

double accuracy(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (labels.numel() == 0) return 0.0;
  return logits.argmax(1).eq(labels).sum().item<double>() / static_cast<double>(labels.numel());
}

StageResult stage1_train(AttentionClassifier& model, const corpus::LabeledImages& train,
                         const corpus::LabeledImages& val, int epochs, double lr, const TrainOptions& options) {
  check_data(train, val);
  if (epochs < 1) throw ConfigError("stage 1 needs at least one epoch");
  auto params = trainable(model);
  if (params.empty()) throw TrainingError("stage 1 has no trainable parameters");

  bool frozen = true;
  for (const auto& p : model->backbone()->parameters()) frozen = frozen && !p.requires_grad();
  std::optional<FeatureTaps> train_features, val_features;
  if (frozen) {
    model->eval();
    train_features = extract_all(model, train.images, options.batch_size);
    val_features = extract_all(model, val.images, options.batch_size);
  }

  torch::manual_seed(derive_seed(options.seed, "stage1/dropout"));
  torch::optim::Adam opt(params, torch::optim::AdamOptions(lr));
  StageResult result;
  result.best_val_accuracy = -1.0;
  std::vector<torch::Tensor> best;
  for (int e = 0; e < epochs; ++e) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog log;
    log.stage = 1;
    log.epoch = e;
    log.lr = lr;
    log.trainable_tensors = params.size();
    log.train_loss = train_epoch(model, opt, train, train_features, options, 1, e,
                                 derive_seed(options.seed, "stage1/shuffle/" + std::to_string(e)));
    auto logits = val_features ? predict_features(model, *val_features, options.batch_size)
                               : predict(model, val.images, options.batch_size);
    log.val_accuracy = accuracy(logits, val.labels);
    log.seconds = elapsed(start);
    if (log.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = log.val_accuracy;
      result.best_epoch = e;
      best = snapshot(params);
    }
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }
  restore(params, best);
  model->eval();
  return result;
}

StageResult stage2_finetune(AttentionClassifier& model, const corpus::LabeledImages& train,
                            const corpus::LabeledImages& val, const FinetuneSchedule& sched,
                            const TrainOptions& options) {
  sched.validate();
  check_data(train, val);
  auto all = model->parameters();
  StageResult result;

  // the starting (stage-1) weights are the first candidate
  {
    const auto start = std::chrono::steady_clock::now();
    EpochLog base;
    base.stage = 2;
    base.epoch = -1;
    base.val_accuracy = accuracy(predict(model, val.images, options.batch_size), val.labels);
    base.seconds = elapsed(start);
    result.best_val_accuracy = base.val_accuracy;
    result.best_epoch = -1;
    result.log.push_back(base);
    if (options.on_epoch) options.on_epoch(base);
  }
  if (sched.stage2_epochs == 0) {
    model->eval();
    return result;
  }
  auto best = snapshot(all);

  const auto groups = model->backbone()->stage_parameters().size();
  torch::manual_seed(derive_seed(options.seed, "stage2/dropout"));
  torch::optim::Adam opt(all, torch::optim::AdamOptions(sched.stage2_lr()));
  for (int e = 0; e < sched.stage2_epochs; ++e) {
    const auto start = std::chrono::steady_clock::now();
    if (e == 0) {
      model->unfreeze_deepest((groups + 1) / 2);
    } else {
      model->set_backbone_trainable(true);
    }
    const double lr = step_lr(e, sched.stage2_lr(), sched);
    for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);

    EpochLog log;
    log.stage = 2;
    log.epoch = e;
    log.lr = lr;
    log.trainable_tensors = trainable(model).size();
    log.train_loss = train_epoch(model, opt, train, std::nullopt, options, 2, e,
                                 derive_seed(options.seed, "stage2/shuffle/" + std::to_string(e)));
    log.val_accuracy = accuracy(predict(model, val.images, options.batch_size), val.labels);
    log.seconds = elapsed(start);
    if (log.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = log.val_accuracy;
      result.best_epoch = e;
      best = snapshot(all);
    }
    result.log.push_back(log);
    if (options.on_epoch) options.on_epoch(log);
  }
  restore(all, best);
  model->eval();
  return result;
}

}  // namespace artclf::optim
