#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "artclf/bench.hpp"
#include "artclf/error.hpp"
#include "artclf/util.hpp"

namespace artclf::bench {

namespace {

// Strict reader for one JSON object: typed getters record the keys they
// consume, and finish() reports every key nobody asked for. Problems are
// collected so a bad config is diagnosed in one pass.
class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(where() + ": expected an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    const json* v = take(key);
    if (!v) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v->is_boolean()) return type_error(key, "a boolean");
      out = v->get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v->is_number_integer()) return type_error(key, "an integer");
      if (std::is_unsigned_v<T> && v->get<std::int64_t>() < 0) return type_error(key, "a non-negative integer");
      out = v->get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) return type_error(key, "a number");
      out = v->get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v->is_string()) return type_error(key, "a string");
      out = v->get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_string(); })) {
        return type_error(key, "a list of strings");
      }
      out = v->get<T>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number(); })) {
        return type_error(key, "a list of numbers");
      }
      out = v->get<T>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  /// Enum-like field parsed from a string by `parse`.
  template <class T, class Parse>
  void get_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    const auto before = errors_.size();
    if (!contains(key)) return;
    get(key, s);
    if (errors_.size() != before) return;
    try {
      out = parse(s);
    } catch (const Error& e) {
      errors_.push_back(where(key) + ": " + e.what());
    }
  }

  /// Nested object; nullptr when absent or not an object.
  std::optional<Reader> section(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_object()) {
      type_error(key, "an object");
      return std::nullopt;
    }
    return Reader(*v, where(key), errors_);
  }

  const json* raw(const std::string& key) { return take(key); }
  bool contains(const std::string& key) const { return j_.is_object() && j_.contains(key); }
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }
  void error(const std::string& key, const std::string& message) { errors_.push_back(where(key) + ": " + message); }

  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) errors_.push_back(where(key) + ": unknown key");
    }
  }

 private:
  const json* take(const std::string& key) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }
  void type_error(const std::string& key, const std::string& expected) {
    errors_.push_back(where(key) + ": expected " + expected);
  }

  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += "\n  " + l;
  return out;
}

json dimension_json(const optim::Dimension& d) {
  json j{{"name", d.name}, {"kind", optim::to_string(d.kind)}};
  if (d.kind == optim::DimKind::categorical) {
    j["choices"] = d.choices;
  } else {
    j["low"] = d.low;
    j["high"] = d.high;
    json grid = json::array();
    for (const auto& g : d.grid) grid.push_back(std::get<double>(g));
    j["grid"] = grid;
  }
  return j;
}

optim::Dimension dimension_from(Reader& r) {
  optim::Dimension d;
  r.get("name", d.name);
  r.get_enum("kind", d.kind, optim::parse_dim_kind);
  if (d.kind == optim::DimKind::categorical) {
    r.get("choices", d.choices);
  } else {
    r.get("low", d.low);
    r.get("high", d.high);
    std::vector<double> grid;
    r.get("grid", grid);
    d.grid.assign(grid.begin(), grid.end());
  }
  r.finish();
  return d;
}

// Nearest existing ancestor must be a directory for `path` to be creatable.
bool creatable(const fs::path& path) {
  std::error_code ec;
  fs::path p = fs::absolute(path, ec);
  if (ec) return false;
  while (!p.empty() && !fs::exists(p, ec)) {
    if (p == p.parent_path()) return false;
    p = p.parent_path();
  }
  return fs::is_directory(p, ec);
}

const std::set<std::string> kSearchParams{"lr", "weight_decay", "l1", "dropout", "gamma", "alpha"};

bool in_unit(double x) { return std::isfinite(x) && x >= 0.0 && x <= 1.0; }

}  // namespace

json to_json(const RunConfig& c) {
  const auto& b = c.model.backbone;
  json space = json::array();
  for (const auto& d : c.search.space) space.push_back(dimension_json(d));
  return {
      {"seed", c.seed},
      {"workers", c.workers},
      {"dataset",
       {{"root", c.dataset.root},
        {"format", corpus::to_string(c.dataset.format)},
        {"task", corpus::to_string(c.dataset.task)},
        {"split", {{"train", c.dataset.split.train}, {"val", c.dataset.split.val}, {"test", c.dataset.split.test}}},
        {"split_mode", c.dataset.split_mode}}},
      {"style",
       {{"taps", c.style.taps},
        {"iterations", c.style.iterations},
        {"style_weight", c.style.style_weight},
        {"lr", c.style.lr},
        {"batch", c.style.batch},
        {"blend", c.style.blend},
        {"mode", stylegen::to_string(c.style.mode)},
        {"image_size", c.style.image_size},
        {"width_divisor", c.style.width_divisor},
        {"encoder_weights", c.style.encoder_weights},
        {"decoder", c.style.decoder}}},
      {"augment", {{"enabled", c.augment.enabled}, {"p1", c.augment.p1}, {"p2", c.augment.p2}, {"out_dir", c.augment.out_dir}}},
      {"model",
       {{"architecture", attnclf::to_string(b.architecture)},
        {"taps", b.tap_ids},
        {"frozen", b.frozen},
        {"pretrained", b.pretrained},
        {"weights", b.weights_path},
        {"tiny_width", b.tiny_width},
        {"projection_width", c.model.projection_width},
        {"hidden_width", c.model.hidden_width},
        {"dropout", c.model.dropout}}},
      {"loss",
       {{"gamma", c.loss.gamma},
        {"alpha", c.loss.alpha},
        {"l1", c.loss.l1},
        {"l2", c.loss.l2},
        {"reduction", attnclf::to_string(c.loss.reduction)}}},
      {"train",
       {{"batch", c.train.batch},
        {"optimizer", c.train.optimizer},
        {"image_size", c.train.image_size},
        {"finetune", c.train.finetune},
        {"stage1_epochs", c.train.schedule.stage1_epochs},
        {"stage2_epochs", c.train.schedule.stage2_epochs},
        {"lr", c.train.schedule.stage1_lr},
        {"step_size", c.train.schedule.step_size},
        {"decay_factor", c.train.schedule.decay_factor}}},
      {"search",
       {{"enabled", c.search.enabled},
        {"space", space},
        {"tpe_trials", c.search.tpe_trials},
        {"quantile", c.search.tpe.quantile},
        {"n_candidates", c.search.tpe.n_candidates},
        {"n_startup", c.search.tpe.n_startup},
        {"trial_epochs", c.search.trial_epochs}}},
      {"sweep", {{"p1", c.sweep.p1}, {"p2", c.sweep.p2}, {"epochs", c.sweep.epochs}, {"in_pipeline", c.sweep.in_pipeline}}},
      {"visualize", {{"heatmap_samples", c.visualize.heatmap_samples}, {"top_k", c.visualize.top_k}}},
      {"output", {{"run_dir", c.run_dir}}},
  };
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  std::vector<std::string> errors;
  Reader root(j, "", errors);
  root.get("seed", c.seed);
  root.get("workers", c.workers);
  if (auto r = root.section("dataset")) {
    r->get("root", c.dataset.root);
    r->get_enum("format", c.dataset.format, corpus::parse_format);
    r->get_enum("task", c.dataset.task, corpus::parse_task);
    if (auto s = r->section("split")) {
      s->get("train", c.dataset.split.train);
      s->get("val", c.dataset.split.val);
      s->get("test", c.dataset.split.test);
      s->finish();
    }
    r->get("split_mode", c.dataset.split_mode);
    r->finish();
  }
  if (auto r = root.section("style")) {
    r->get("taps", c.style.taps);
    r->get("iterations", c.style.iterations);
    r->get("style_weight", c.style.style_weight);
    r->get("lr", c.style.lr);
    r->get("batch", c.style.batch);
    r->get("blend", c.style.blend);
    r->get_enum("mode", c.style.mode, stylegen::parse_training_mode);
    r->get("image_size", c.style.image_size);
    r->get("width_divisor", c.style.width_divisor);
    r->get("encoder_weights", c.style.encoder_weights);
    r->get("decoder", c.style.decoder);
    r->finish();
  }
  if (auto r = root.section("augment")) {
    r->get("enabled", c.augment.enabled);
    r->get("p1", c.augment.p1);
    r->get("p2", c.augment.p2);
    r->get("out_dir", c.augment.out_dir);
    r->finish();
  }
  if (auto r = root.section("model")) {
    auto& b = c.model.backbone;
    r->get_enum("architecture", b.architecture, attnclf::parse_architecture);
    r->get("taps", b.tap_ids);
    r->get("frozen", b.frozen);
    r->get("pretrained", b.pretrained);
    r->get("weights", b.weights_path);
    r->get("tiny_width", b.tiny_width);
    r->get("projection_width", c.model.projection_width);
    r->get("hidden_width", c.model.hidden_width);
    r->get("dropout", c.model.dropout);
    r->finish();
  }
  if (auto r = root.section("loss")) {
    r->get("gamma", c.loss.gamma);
    r->get("alpha", c.loss.alpha);
    r->get("l1", c.loss.l1);
    r->get("l2", c.loss.l2);
    r->get_enum("reduction", c.loss.reduction, attnclf::parse_reduction);
    r->finish();
  }
  if (auto r = root.section("train")) {
    r->get("batch", c.train.batch);
    r->get("optimizer", c.train.optimizer);
    r->get("image_size", c.train.image_size);
    r->get("finetune", c.train.finetune);
    r->get("stage1_epochs", c.train.schedule.stage1_epochs);
    r->get("stage2_epochs", c.train.schedule.stage2_epochs);
    r->get("lr", c.train.schedule.stage1_lr);
    r->get("step_size", c.train.schedule.step_size);
    r->get("decay_factor", c.train.schedule.decay_factor);
    r->finish();
  }
  if (auto r = root.section("search")) {
    r->get("enabled", c.search.enabled);
    if (const json* space = r->raw("space")) {
      if (!space->is_array()) {
        r->error("space", "expected a list of dimensions");
      } else {
        c.search.space.clear();
        for (std::size_t i = 0; i < space->size(); ++i) {
          Reader d((*space)[i], r->where("space") + "[" + std::to_string(i) + "]", errors);
          c.search.space.push_back(dimension_from(d));
        }
      }
    }
    r->get("tpe_trials", c.search.tpe_trials);
    r->get("quantile", c.search.tpe.quantile);
    r->get("n_candidates", c.search.tpe.n_candidates);
    r->get("n_startup", c.search.tpe.n_startup);
    r->get("trial_epochs", c.search.trial_epochs);
    r->finish();
  }
  if (auto r = root.section("sweep")) {
    r->get("p1", c.sweep.p1);
    r->get("p2", c.sweep.p2);
    r->get("epochs", c.sweep.epochs);
    r->get("in_pipeline", c.sweep.in_pipeline);
    r->finish();
  }
  if (auto r = root.section("visualize")) {
    r->get("heatmap_samples", c.visualize.heatmap_samples);
    r->get("top_k", c.visualize.top_k);
    r->finish();
  }
  if (auto r = root.section("output")) {
    r->get("run_dir", c.run_dir);
    r->finish();
  }
  root.finish();
  if (!errors.empty()) throw ConfigError("invalid config:" + join_lines(errors));
  return c;
}

RunConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void validate(const RunConfig& c) {
  std::vector<std::string> errors;
  auto fail = [&](const std::string& field, const std::string& msg) { errors.push_back(field + ": " + msg); };
  auto file_exists = [&](const std::string& field, const std::string& path) {
    if (!path.empty() && !fs::is_regular_file(path)) fail(field, "file not found: " + path);
  };

  if (c.workers < 1) fail("workers", "must be >= 1");

  const auto& d = c.dataset;
  if (d.root.empty()) {
    fail("dataset.root", "is required");
  } else if (!fs::is_directory(d.root)) {
    fail("dataset.root", "directory not found: " + d.root);
  }
  for (const auto& [name, v] : {std::pair{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}}) {
    if (!in_unit(v)) fail(std::string("dataset.split.") + name, "must lie in [0,1]");
  }
  if (std::abs(d.split.train + d.split.val + d.split.test - 1.0) > 1e-6) fail("dataset.split", "fractions must sum to 1");
  if (d.split_mode != "keep" && d.split_mode != "stratified" && d.split_mode != "auto") {
    fail("dataset.split_mode", "expected keep, stratified or auto");
  }

  const auto& s = c.style;
  const std::vector<std::string> encoder_taps(stylegen::VggEncoderImpl::kTapNames.begin(),
                                              stylegen::VggEncoderImpl::kTapNames.end());
  if (s.taps != encoder_taps) fail("style.taps", "the encoder taps are fixed at relu1_1, relu2_1, relu3_1, relu4_1");
  if (s.iterations < 0) fail("style.iterations", "must be >= 0");
  if (!(s.style_weight >= 0.0)) fail("style.style_weight", "must be >= 0");
  if (!(s.lr > 0.0)) fail("style.lr", "must be > 0");
  if (s.batch < 1) fail("style.batch", "must be >= 1");
  if (!in_unit(s.blend)) fail("style.blend", "must lie in [0,1]");
  if (s.image_size < 32) fail("style.image_size", "must be >= 32");
  if (s.width_divisor != 1 && s.width_divisor != 2 && s.width_divisor != 4 && s.width_divisor != 8) {
    fail("style.width_divisor", "expected 1, 2, 4 or 8");
  }
  if (!s.encoder_weights.empty() && s.width_divisor != 1) {
    fail("style.encoder_weights", "converted VGG-19 weights need width_divisor 1");
  }
  file_exists("style.encoder_weights", s.encoder_weights);
  file_exists("style.decoder", s.decoder);

  if (!in_unit(c.augment.p1)) fail("augment.p1", "must lie in [0,1]");
  if (!in_unit(c.augment.p2)) fail("augment.p2", "must lie in [0,1]");
  if (!c.augment.out_dir.empty() && !creatable(c.augment.out_dir)) fail("augment.out_dir", "cannot be created");

  const auto& b = c.model.backbone;
  try {
    const auto valid = attnclf::valid_taps(b.architecture);
    std::size_t last = 0;
    bool first = true;
    for (const auto& tap : b.resolved_taps()) {
      auto it = std::find(valid.begin(), valid.end(), tap);
      if (it == valid.end()) {
        fail("model.taps", "invalid tap '" + tap + "' for " + attnclf::to_string(b.architecture));
        continue;
      }
      const auto idx = static_cast<std::size_t>(it - valid.begin());
      if (!first && idx <= last) fail("model.taps", "taps must be ordered shallow to deep");
      last = idx;
      first = false;
    }
  } catch (const Error& e) {
    fail("model.taps", e.what());
  }
  if (b.pretrained) {
    if (b.architecture == attnclf::Architecture::tinycnn) fail("model.pretrained", "tinycnn has no pretrained weights");
    if (b.weights_path.empty()) fail("model.weights", "required when pretrained");
    file_exists("model.weights", b.weights_path);
  }
  if (b.tiny_width < 1) fail("model.tiny_width", "must be >= 1");
  if (c.model.projection_width < 1) fail("model.projection_width", "must be >= 1");
  if (c.model.hidden_width < 1) fail("model.hidden_width", "must be >= 1");
  if (!(c.model.dropout >= 0.0 && c.model.dropout < 1.0)) fail("model.dropout", "must lie in [0,1)");

  if (!(c.loss.gamma >= 0.0)) fail("loss.gamma", "must be >= 0");
  if (!(c.loss.alpha > 0.0)) fail("loss.alpha", "must be > 0");
  if (!(c.loss.l1 >= 0.0)) fail("loss.l1", "must be >= 0");
  if (!(c.loss.l2 >= 0.0)) fail("loss.l2", "must be >= 0");

  if (c.train.batch < 1) fail("train.batch", "must be >= 1");
  if (c.train.optimizer != "adam") fail("train.optimizer", "only adam is supported");
  if (c.train.image_size < attnclf::minimum_input_size(b.architecture)) {
    fail("train.image_size", "below the " + attnclf::to_string(b.architecture) + " minimum of " +
                                 std::to_string(attnclf::minimum_input_size(b.architecture)));
  }
  if (c.train.schedule.stage1_epochs < 1) fail("train.stage1_epochs", "must be >= 1");
  try {
    c.train.schedule.validate();
  } catch (const Error& e) {
    fail("train", e.what());
  }

  try {
    search_space(c).validate();
  } catch (const Error& e) {
    fail("search.space", e.what());
  }
  for (const auto& dim : c.search.space) {
    if (!kSearchParams.count(dim.name)) {
      fail("search.space", "unknown parameter '" + dim.name + "' (expected lr, weight_decay, l1, dropout, gamma, alpha)");
    } else if (dim.kind == optim::DimKind::categorical) {
      fail("search.space", "'" + dim.name + "' is numeric and cannot be categorical");
    }
  }
  if (!(c.search.tpe.quantile > 0.0 && c.search.tpe.quantile < 1.0)) fail("search.quantile", "must lie in (0,1)");
  if (c.search.tpe.n_candidates < 1) fail("search.n_candidates", "must be >= 1");
  if (c.search.trial_epochs < 1) fail("search.trial_epochs", "must be >= 1");

  for (double p : c.sweep.p1)
    if (!in_unit(p)) fail("sweep.p1", "values must lie in [0,1]");
  for (double p : c.sweep.p2)
    if (!in_unit(p)) fail("sweep.p2", "values must lie in [0,1]");
  if (c.sweep.epochs < 1) fail("sweep.epochs", "must be >= 1");

  if (c.run_dir.empty() || !creatable(c.run_dir)) fail("output.run_dir", "cannot be created");

  if (!errors.empty()) throw ConfigError("invalid config:" + join_lines(errors));
}

std::string config_hash(const RunConfig& config) {
  // Output locations and the worker count do not change results.
  auto j = to_json(config);
  j.erase("workers");
  j.erase("output");
  j["augment"].erase("out_dir");
  return hex64(fnv1a(j.dump()));
}

void write_lock(const RunConfig& config, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  write_text(run_dir / "config.lock.json", json{{"config", to_json(config)}, {"hash", config_hash(config)}}.dump(2) + "\n");
}

RunConfig apply_trial(const RunConfig& config, const optim::Config& trial) {
  RunConfig c = config;
  for (const auto& [name, value] : trial) {
    const double v = std::get<double>(value);
    if (name == "lr") {
      c.train.schedule.stage1_lr = v;
    } else if (name == "weight_decay") {
      c.loss.l2 = v;
    } else if (name == "l1") {
      c.loss.l1 = v;
    } else if (name == "dropout") {
      c.model.dropout = v;
    } else if (name == "gamma") {
      c.loss.gamma = v;
    } else if (name == "alpha") {
      c.loss.alpha = v;
    } else {
      throw ConfigError("unknown search parameter '" + name + "'");
    }
  }
  return c;
}

optim::SearchSpace search_space(const RunConfig& config) { return {config.search.space}; }

attnclf::ModelConfig model_config(const RunConfig& config, std::int64_t num_classes) {
  attnclf::ModelConfig m;
  m.backbone = config.model.backbone;
  m.backbone.seed = derive_seed(config.seed, "backbone");
  m.num_classes = num_classes;
  m.projection_width = config.model.projection_width;
  m.hidden_width = config.model.hidden_width;
  m.dropout = config.model.dropout;
  m.seed = derive_seed(config.seed, "model");
  return m;
}

stylegen::EncoderConfig encoder_config(const RunConfig& config) {
  stylegen::EncoderConfig e;
  e.width_divisor = config.style.width_divisor;
  e.seed = derive_seed(config.seed, "encoder");
  e.weights_path = config.style.encoder_weights;
  return e;
}

stylegen::DecoderTrainConfig decoder_config(const RunConfig& config) {
  stylegen::DecoderTrainConfig t;
  t.iterations = config.style.iterations;
  t.batch = config.style.batch;
  t.lr = config.style.lr;
  t.style_weight = config.style.style_weight;
  t.seed = derive_seed(config.seed, "decoder");
  t.image_size = config.style.image_size;
  t.mode = config.style.mode;
  t.workers = config.workers;
  return t;
}

corpus::DatasetManifest load_dataset(const RunConfig& config, std::vector<std::string>* warnings) {
  auto manifest = corpus::load_manifest(config.dataset.root, config.dataset.format, config.dataset.task);
  bool resplit = config.dataset.split_mode == "stratified";
  if (config.dataset.split_mode == "auto") {
    resplit = manifest.split_records(corpus::Split::val).empty() || manifest.split_records(corpus::Split::test).empty();
  }
  if (resplit) {
    manifest = corpus::stratified_split(manifest, config.dataset.split, derive_seed(config.seed, "split"), warnings);
  }
  return manifest;
}

}  // namespace artclf::bench
