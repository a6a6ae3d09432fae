#include "artclf/attnclf.hpp"

#include <cmath>
#include <map>

#include <json.hpp>

#include "artclf/error.hpp"
#include "artclf/util.hpp"

namespace artclf::attnclf {

namespace nn = torch::nn;
using json = nlohmann::json;

// ---------------------------------------------------------------- names

namespace {

const std::vector<std::pair<Architecture, std::string>> kArchNames{
    {Architecture::vgg16, "vgg16"},         {Architecture::vgg19, "vgg19"},         {Architecture::resnet34, "resnet34"},
    {Architecture::resnet50, "resnet50"},   {Architecture::resnet101, "resnet101"}, {Architecture::resnet152, "resnet152"},
    {Architecture::tinycnn, "tinycnn"}};

bool is_vgg(Architecture a) { return a == Architecture::vgg16 || a == Architecture::vgg19; }

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

Architecture parse_architecture(const std::string& s) {
  for (const auto& [a, name] : kArchNames)
    if (name == s) return a;
  throw ConfigError("unknown backbone architecture '" + s +
                    "' (expected vgg16, vgg19, resnet34, resnet50, resnet101, resnet152 or tinycnn)");
}

std::string to_string(Architecture a) {
  for (const auto& [arch, name] : kArchNames)
    if (arch == a) return name;
  return "unknown";
}

std::vector<std::string> valid_taps(Architecture a) {
  if (is_vgg(a)) return {"block1", "block2", "block3", "block4", "block5"};
  if (a == Architecture::tinycnn) return {"stem", "stage1", "stage2", "stage3", "stage4"};
  return {"stem", "layer1", "layer2", "layer3", "layer4"};
}

std::vector<std::string> default_taps(Architecture a) {
  if (is_vgg(a)) return {"block2", "block3", "block4"};
  if (a == Architecture::tinycnn) return {"stem", "stage1", "stage2", "stage3"};
  return {"stem", "layer1", "layer2", "layer3"};
}

int minimum_input_size(Architecture a) { return a == Architecture::tinycnn ? 16 : 32; }

std::vector<std::string> BackboneSpec::resolved_taps() const {
  return tap_ids.empty() ? default_taps(architecture) : tap_ids;
}

// ---------------------------------------------------------------- init

namespace {

void init_module(nn::Module& m, at::Generator& gen) {
  if (auto* conv = m.as<nn::Conv2dImpl>()) {
    const auto& w = conv->weight;
    const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
    w.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
    if (conv->bias.defined()) conv->bias.zero_();
  } else if (auto* bn = m.as<nn::BatchNorm2dImpl>()) {
    bn->weight.fill_(1.0);
    bn->bias.zero_();
  } else if (auto* lin = m.as<nn::LinearImpl>()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(lin->weight.size(1)));
    lin->weight.uniform_(-bound, bound, gen);
    if (lin->bias.defined()) lin->bias.uniform_(-bound, bound, gen);
  }
}

// Deterministic init from a private generator, in registration order.
void init_weights(nn::Module& root, at::Generator& gen) {
  torch::NoGradGuard no_grad;
  init_module(root, gen);
  // include_self=false: the root may still be under construction
  for (auto& m : root.modules(/*include_self=*/false)) init_module(*m, gen);
}

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride, std::int64_t pad, bool bias) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(bias));
}

nn::BatchNorm2d bn(std::int64_t c) { return nn::BatchNorm2d(c); }

// torchvision BasicBlock / Bottleneck, with matching parameter names.
class BasicBlockImpl : public nn::Module {
 public:
  static constexpr std::int64_t kExpansion = 1;

  BasicBlockImpl(std::int64_t in, std::int64_t width, std::int64_t stride)
      : conv1(register_module("conv1", conv(in, width, 3, stride, 1, false))),
        bn1(register_module("bn1", bn(width))),
        conv2(register_module("conv2", conv(width, width, 3, 1, 1, false))),
        bn2(register_module("bn2", bn(width))) {
    if (stride != 1 || in != width) {
      downsample = register_module("downsample", nn::Sequential(conv(in, width, 1, stride, 0, false), bn(width)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1(conv1(x)));
    out = bn2(conv2(out));
    return torch::relu(out + (downsample ? downsample->forward(x) : x));
  }

  nn::Conv2d conv1;
  nn::BatchNorm2d bn1;
  nn::Conv2d conv2;
  nn::BatchNorm2d bn2;
  nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BasicBlock);

class BottleneckImpl : public nn::Module {
 public:
  static constexpr std::int64_t kExpansion = 4;

  BottleneckImpl(std::int64_t in, std::int64_t width, std::int64_t stride)
      : conv1(register_module("conv1", conv(in, width, 1, 1, 0, false))),
        bn1(register_module("bn1", bn(width))),
        conv2(register_module("conv2", conv(width, width, 3, stride, 1, false))),
        bn2(register_module("bn2", bn(width))),
        conv3(register_module("conv3", conv(width, width * kExpansion, 1, 1, 0, false))),
        bn3(register_module("bn3", bn(width * kExpansion))) {
    if (stride != 1 || in != width * kExpansion) {
      downsample = register_module("downsample", nn::Sequential(conv(in, width * kExpansion, 1, stride, 0, false),
                                                                bn(width * kExpansion)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1(conv1(x)));
    out = torch::relu(bn2(conv2(out)));
    out = bn3(conv3(out));
    return torch::relu(out + (downsample ? downsample->forward(x) : x));
  }

  nn::Conv2d conv1;
  nn::BatchNorm2d bn1;
  nn::Conv2d conv2;
  nn::BatchNorm2d bn2;
  nn::Conv2d conv3;
  nn::BatchNorm2d bn3;
  nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

nn::MaxPool2d pool2() { return nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)); }

}  // namespace

// ---------------------------------------------------------------- backbone

BackboneImpl::BackboneImpl(const BackboneSpec& spec) : spec_(spec) {
  switch (spec.architecture) {
    case Architecture::vgg16: build_vgg({2, 2, 3, 3, 3}); break;
    case Architecture::vgg19: build_vgg({2, 2, 4, 4, 4}); break;
    case Architecture::resnet34: build_resnet(false, {3, 4, 6, 3}); break;
    case Architecture::resnet50: build_resnet(true, {3, 4, 6, 3}); break;
    case Architecture::resnet101: build_resnet(true, {3, 4, 23, 3}); break;
    case Architecture::resnet152: build_resnet(true, {3, 8, 36, 3}); break;
    case Architecture::tinycnn: build_tiny(); break;
  }

  const auto valid = valid_taps(spec.architecture);
  taps_ = spec.resolved_taps();
  if (taps_.empty()) throw ConfigError("at least one feature tap is required");
  for (const auto& tap : taps_) {
    auto it = std::find(valid.begin(), valid.end(), tap);
    if (it == valid.end()) {
      throw ConfigError("invalid tap '" + tap + "' for " + to_string(spec.architecture) + "; valid taps: " + join(valid));
    }
    const auto idx = static_cast<std::size_t>(it - valid.begin());
    if (!tap_stage_.empty() && idx <= tap_stage_.back()) {
      throw ConfigError("taps must be distinct and ordered shallow to deep; valid order: " + join(valid));
    }
    tap_stage_.push_back(idx);
  }

  pixel_mean_ = torch::tensor({0.485, 0.456, 0.406}).view({1, 3, 1, 1});
  pixel_std_ = torch::tensor({0.229, 0.224, 0.225}).view({1, 3, 1, 1});

  auto gen = at::detail::createCPUGenerator(spec.seed);
  init_weights(*this, gen);
  if (spec.pretrained) {
    if (spec.weights_path.empty()) {
      throw ConfigError("pretrained " + to_string(spec.architecture) + " backbone needs a weights_path");
    }
    load_state_dict(*this, spec.weights_path);
  }
  if (spec.frozen) {
    for (auto& p : parameters()) p.set_requires_grad(false);
  }
  train(is_training());
}

void BackboneImpl::build_vgg(const std::vector<int>& convs_per_block) {
  static constexpr std::array<std::int64_t, 5> widths{64, 128, 256, 512, 512};
  auto features = nn::Sequential();
  std::int64_t in = 3;
  const auto names = valid_taps(spec_.architecture);
  for (std::size_t b = 0; b < convs_per_block.size(); ++b) {
    Stage stage;
    stage.name = names[b];
    if (b > 0) {
      auto p = pool2();
      features->push_back(p);
      stage.modules.push_back(p.ptr());
    }
    for (int k = 0; k < convs_per_block[b]; ++k) {
      auto c = conv(in, widths[b], 3, 1, 1, true);
      auto r = nn::ReLU(nn::ReLUOptions(true));
      features->push_back(c);
      features->push_back(r);
      stage.modules.push_back(c.ptr());
      stage.modules.push_back(r.ptr());
      in = widths[b];
    }
    if (b + 1 == convs_per_block.size()) {
      auto p = pool2();
      features->push_back(p);
      stage.modules.push_back(p.ptr());
    }
    stage.channels = widths[b];
    stages_.push_back(std::move(stage));
  }
  register_module("features", features);
}

void BackboneImpl::build_resnet(bool bottleneck, const std::vector<int>& blocks) {
  auto conv1 = register_module("conv1", conv(3, 64, 7, 2, 3, false));
  auto bn1 = register_module("bn1", bn(64));
  auto relu = nn::ReLU(nn::ReLUOptions(true));
  auto maxpool = nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1));
  stages_.push_back({"stem", {conv1, bn1, relu.ptr(), maxpool.ptr()}, 64});

  const std::int64_t expansion = bottleneck ? BottleneckImpl::kExpansion : BasicBlockImpl::kExpansion;
  std::int64_t in = 64;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::int64_t width = 64LL << l;
    auto layer = nn::Sequential();
    for (int k = 0; k < blocks[l]; ++k) {
      const std::int64_t stride = (k == 0 && l > 0) ? 2 : 1;
      if (bottleneck) {
        layer->push_back(Bottleneck(in, width, stride));
      } else {
        layer->push_back(BasicBlock(in, width, stride));
      }
      in = width * expansion;
    }
    const auto name = "layer" + std::to_string(l + 1);
    register_module(name, layer);
    stages_.push_back({name, {layer.ptr()}, in});
  }
}

void BackboneImpl::build_tiny() {
  const std::int64_t w = spec_.tiny_width;
  if (w < 1) throw ConfigError("tinycnn width must be positive");
  // No normalisation layers: plain conv/ReLU stacks trained from scratch.
  auto stem = nn::Sequential(conv(3, w, 3, 1, 1, true), nn::ReLU(nn::ReLUOptions(true)));
  register_module("stem", stem);
  stages_.push_back({"stem", {stem.ptr()}, w});
  std::int64_t in = w;
  for (int s = 1; s <= 4; ++s) {
    const std::int64_t out = w << (s - 1);
    auto stage = nn::Sequential(pool2(), conv(in, out, 3, 1, 1, true), nn::ReLU(nn::ReLUOptions(true)),
                                conv(out, out, 3, 1, 1, true), nn::ReLU(nn::ReLUOptions(true)));
    const auto name = "stage" + std::to_string(s);
    register_module(name, stage);
    stages_.push_back({name, {stage.ptr()}, out});
    in = out;
  }
}

namespace {

torch::Tensor run_module(const std::shared_ptr<nn::Module>& m, const torch::Tensor& x) {
  if (auto* seq = m->as<nn::SequentialImpl>()) return seq->forward(x);
  if (auto* c = m->as<nn::Conv2dImpl>()) return c->forward(x);
  if (auto* b = m->as<nn::BatchNorm2dImpl>()) return b->forward(x);
  if (auto* r = m->as<nn::ReLUImpl>()) return r->forward(x);
  if (auto* p = m->as<nn::MaxPool2dImpl>()) return p->forward(x);
  throw ShapeError("backbone: unsupported stage module " + m->name());
}

}  // namespace

FeatureTaps BackboneImpl::forward(const torch::Tensor& images) {
  auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
  if (x.dim() != 4 || x.size(1) != 3) {
    throw ShapeError("backbone input: expected [B,3,H,W] images, got " + std::to_string(x.dim()) + "-d tensor");
  }
  const int min_size = minimum_input_size(spec_.architecture);
  if (x.size(2) < min_size || x.size(3) < min_size) {
    throw InputError(to_string(spec_.architecture) + " needs inputs of at least " + std::to_string(min_size) + "x" +
                     std::to_string(min_size));
  }
  x = (x - pixel_mean_.to(x.dtype())) / pixel_std_.to(x.dtype());
  FeatureTaps out;
  std::size_t next = 0;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (const auto& m : stages_[s].modules) x = run_module(m, x);
    if (next < tap_stage_.size() && tap_stage_[next] == s) {
      out.locals.push_back(x);
      ++next;
    }
  }
  out.global_vec = x.mean({2, 3});
  return out;
}

std::vector<std::int64_t> BackboneImpl::tap_channels() const {
  std::vector<std::int64_t> out;
  for (auto s : tap_stage_) out.push_back(stages_[s].channels);
  return out;
}

std::int64_t BackboneImpl::global_channels() const { return stages_.back().channels; }

std::vector<std::vector<torch::Tensor>> BackboneImpl::stage_parameters() const {
  std::vector<std::vector<torch::Tensor>> out;
  for (const auto& stage : stages_) {
    std::vector<torch::Tensor> params;
    for (const auto& m : stage.modules) {
      for (auto& p : m->parameters()) params.push_back(p);
    }
    out.push_back(std::move(params));
  }
  return out;
}

std::vector<std::string> BackboneImpl::stage_names() const {
  std::vector<std::string> out;
  for (const auto& s : stages_) out.push_back(s.name);
  return out;
}

void BackboneImpl::train(bool on) {
  nn::Module::train(on);
  for (auto& m : modules(/*include_self=*/false)) {
    if (m->as<nn::BatchNorm2dImpl>()) m->train(false);
  }
}

// ---------------------------------------------------------------- attention

AttendedTap spatial_attention(const torch::Tensor& local, const torch::Tensor& global, const torch::Tensor& u) {
  if (local.dim() != 4 || global.dim() != 2 || u.dim() != 1) {
    throw ShapeError("spatial_attention expects local [B,d,H,W], global [B,d], u [d]");
  }
  const auto d = local.size(1);
  if (global.size(1) != d || u.size(0) != d) {
    throw ShapeError("spatial_attention: width mismatch (local " + std::to_string(d) + ", global " +
                     std::to_string(global.size(1)) + ", u " + std::to_string(u.size(0)) + ")");
  }
  if (global.size(0) != local.size(0)) throw ShapeError("spatial_attention: batch mismatch");
  const auto b = local.size(0), h = local.size(2), w = local.size(3);
  auto combined = local + global.view({b, d, 1, 1});
  auto scores = (combined * u.view({1, d, 1, 1})).sum(1);  // [B,H,W]
  auto map = torch::softmax(scores.view({b, h * w}), 1).view({b, h, w});
  auto descriptor = (map.unsqueeze(1) * local).sum({2, 3});
  return {descriptor, map};
}

// ---------------------------------------------------------------- classifier

AttentionClassifierImpl::AttentionClassifierImpl(const ModelConfig& config) : config_(config) {
  if (config.num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  if (config.projection_width < 1 || config.hidden_width < 1) throw ConfigError("layer widths must be positive");
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");

  backbone_ = register_module("backbone", Backbone(config.backbone));
  const auto d = config.projection_width;
  const auto channels = backbone_->tap_channels();
  for (std::size_t i = 0; i < channels.size(); ++i) {
    projections_.push_back(register_module("projection" + std::to_string(i), conv(channels[i], d, 1, 1, 0, true)));
    u_.push_back(register_parameter("attention" + std::to_string(i), torch::empty({d})));
  }
  global_projection_ = register_module("global_projection", nn::Linear(backbone_->global_channels(), d));
  head_ = register_module(
      "head", nn::Sequential(nn::Linear(d * static_cast<std::int64_t>(channels.size()), config.hidden_width),
                             nn::ReLU(), nn::Dropout(config.dropout), nn::Linear(config.hidden_width, config.num_classes)));

  auto gen = at::detail::createCPUGenerator(config.seed);
  {
    torch::NoGradGuard no_grad;
    for (auto& p : projections_) {
      p->weight.normal_(0.0, std::sqrt(2.0 / static_cast<double>(p->weight.size(1))), gen);
      p->bias.zero_();
    }
    for (auto& u : u_) u.normal_(0.0, 1.0 / std::sqrt(static_cast<double>(d)), gen);
  }
  init_weights(*global_projection_, gen);
  init_weights(*head_, gen);
}

ModelOutput AttentionClassifierImpl::forward(const torch::Tensor& images) {
  return forward_features(backbone_->forward(images));
}

ModelOutput AttentionClassifierImpl::forward_features(const FeatureTaps& features) {
  const auto& taps = backbone_->taps();
  if (features.locals.size() != taps.size()) {
    throw ShapeError("classifier expects " + std::to_string(taps.size()) + " feature taps, got " +
                     std::to_string(features.locals.size()));
  }
  if (features.global_vec.dim() != 2 || features.global_vec.size(1) != global_projection_->weight.size(1)) {
    throw ShapeError("global stage: expected " + std::to_string(global_projection_->weight.size(1)) + " channels");
  }
  ModelOutput out;
  auto g = global_projection_->forward(features.global_vec);
  std::vector<torch::Tensor> descriptors;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const auto& local = features.locals[i];
    if (local.dim() != 4 || local.size(1) != projections_[i]->weight.size(1)) {
      throw ShapeError("tap " + taps[i] + ": expected " + std::to_string(projections_[i]->weight.size(1)) +
                       " channels");
    }
    auto attended = spatial_attention(projections_[i]->forward(local), g, u_[i]);
    out.attention.descriptors.push_back(attended.descriptor);
    out.attention.maps.push_back(attended.map);
  }
  out.logits = head_->forward(torch::cat(out.attention.descriptors, 1));
  return out;
}

std::vector<torch::Tensor> AttentionClassifierImpl::head_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& p : projections_)
    for (auto& t : p->parameters()) out.push_back(t);
  for (const auto& u : u_) out.push_back(u);
  for (auto& t : global_projection_->parameters()) out.push_back(t);
  for (auto& t : head_->parameters()) out.push_back(t);
  return out;
}

void AttentionClassifierImpl::set_backbone_trainable(bool trainable) {
  for (auto& p : backbone_->parameters()) p.set_requires_grad(trainable);
}

void AttentionClassifierImpl::unfreeze_deepest(std::size_t stages) {
  auto groups = backbone_->stage_parameters();
  const auto first = groups.size() - std::min(stages, groups.size());
  for (std::size_t s = 0; s < groups.size(); ++s) {
    for (auto& p : groups[s]) p.set_requires_grad(s >= first);
  }
}

// ---------------------------------------------------------------- losses

Reduction parse_reduction(const std::string& s) {
  if (s == "mean") return Reduction::mean;
  if (s == "sum") return Reduction::sum;
  throw ConfigError("unknown loss reduction '" + s + "' (expected mean or sum)");
}

std::string to_string(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

torch::Tensor probabilities(const torch::Tensor& logits) { return torch::softmax(logits, 1); }

torch::Tensor focal_loss_per_sample(const torch::Tensor& logits, const torch::Tensor& labels, const LossConfig& cfg) {
  if (!(cfg.gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
  if (!(cfg.alpha > 0.0)) throw ConfigError("focal alpha must be > 0");
  if (logits.dim() != 2) throw ShapeError("logits must be [B,C]");
  if (labels.dim() != 1 || labels.size(0) != logits.size(0)) throw ShapeError("labels must be [B] matching logits");
  if (labels.numel() > 0) {
    const auto lo = labels.min().item<std::int64_t>();
    const auto hi = labels.max().item<std::int64_t>();
    if (lo < 0 || hi >= logits.size(1)) {
      throw InputError("label out of range [0," + std::to_string(logits.size(1)) + "): " +
                       std::to_string(lo < 0 ? lo : hi));
    }
  }
  auto log_pt = torch::log_softmax(logits, 1).gather(1, labels.to(torch::kInt64).unsqueeze(1)).squeeze(1);
  auto pt = log_pt.exp();
  auto weight = cfg.gamma == 0.0 ? torch::ones_like(pt) : torch::pow(1.0 - pt, cfg.gamma);
  return -cfg.alpha * weight * log_pt;
}

torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& labels, const LossConfig& cfg) {
  auto per_sample = focal_loss_per_sample(logits, labels, cfg);
  return cfg.reduction == Reduction::mean ? per_sample.mean() : per_sample.sum();
}

torch::Tensor regularization(const std::vector<torch::Tensor>& params, double l1, double l2) {
  if (l1 < 0.0 || l2 < 0.0) throw ConfigError("regularization weights must be >= 0");
  torch::Tensor total;
  for (const auto& p : params) {
    auto term = l1 * p.abs().sum() + l2 * p.pow(2).sum();
    total = total.defined() ? total + term : term;
  }
  return total.defined() ? total : torch::zeros({});
}

torch::Tensor training_loss(const torch::Tensor& logits, const torch::Tensor& labels, const LossConfig& cfg,
                            const std::vector<torch::Tensor>& params) {
  auto loss = focal_loss(logits, labels, cfg);
  if (cfg.l1 == 0.0 && cfg.l2 == 0.0) return loss;
  return loss + regularization(params, cfg.l1, cfg.l2).to(loss.dtype());
}

// ---------------------------------------------------------------- checkpoints

namespace {

json spec_json(const ModelConfig& c, const LossConfig& l) {
  const auto& b = c.backbone;
  return {{"architecture", to_string(b.architecture)},
          {"taps", b.resolved_taps()},
          {"frozen", b.frozen},
          {"pretrained", b.pretrained},
          {"weights_path", b.weights_path},
          {"tiny_width", b.tiny_width},
          {"backbone_seed", b.seed},
          {"num_classes", c.num_classes},
          {"projection_width", c.projection_width},
          {"hidden_width", c.hidden_width},
          {"dropout", c.dropout},
          {"seed", c.seed},
          {"gamma", l.gamma},
          {"alpha", l.alpha},
          {"l1", l.l1},
          {"l2", l.l2},
          {"reduction", to_string(l.reduction)}};
}

}  // namespace

void copy_weights(nn::Module& dst, const nn::Module& src) {
  torch::NoGradGuard no_grad;
  auto sp = src.named_parameters();
  for (auto& p : dst.named_parameters()) p.value().copy_(sp[p.key()]);
  auto sb = src.named_buffers();
  for (auto& b : dst.named_buffers()) b.value().copy_(sb[b.key()]);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  for (const auto& p : ckpt.model->named_parameters()) archive.write("param." + p.key(), p.value().detach());
  for (const auto& b : ckpt.model->named_buffers()) archive.write("buffer." + b.key(), b.value().detach());
  json meta = spec_json(ckpt.config, ckpt.loss);
  meta["classes"] = ckpt.classes;
  meta["config_hash"] = ckpt.config_hash;
  archive.write("meta.json", c10::IValue(meta.dump()));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  try {
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  c10::IValue v;
  archive.read("meta.json", v);
  const auto meta = json::parse(v.toStringRef());
  Checkpoint ck;
  auto& b = ck.config.backbone;
  b.architecture = parse_architecture(meta.at("architecture"));
  b.tap_ids = meta.at("taps").get<std::vector<std::string>>();
  b.frozen = meta.at("frozen");
  b.pretrained = meta.at("pretrained");
  b.weights_path = meta.at("weights_path");
  b.tiny_width = meta.at("tiny_width");
  b.seed = meta.at("backbone_seed");
  ck.config.num_classes = meta.at("num_classes");
  ck.config.projection_width = meta.at("projection_width");
  ck.config.hidden_width = meta.at("hidden_width");
  ck.config.dropout = meta.at("dropout");
  ck.config.seed = meta.at("seed");
  ck.loss.gamma = meta.at("gamma");
  ck.loss.alpha = meta.at("alpha");
  ck.loss.l1 = meta.at("l1");
  ck.loss.l2 = meta.at("l2");
  ck.loss.reduction = parse_reduction(meta.at("reduction"));
  ck.classes = meta.at("classes").get<std::vector<std::string>>();
  ck.config_hash = meta.at("config_hash");

  // Weights come from the archive, so skip the pretrained file.
  auto build = ck.config;
  build.backbone.pretrained = false;
  ck.model = AttentionClassifier(build);
  torch::NoGradGuard no_grad;
  for (auto& p : ck.model->named_parameters()) {
    torch::Tensor t;
    archive.read("param." + p.key(), t);
    p.value().copy_(t);
  }
  for (auto& buf : ck.model->named_buffers()) {
    torch::Tensor t;
    archive.read("buffer." + buf.key(), t);
    buf.value().copy_(t);
  }
  ck.model->eval();
  return ck;
}

}  // namespace artclf::attnclf
