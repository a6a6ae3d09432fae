#include "artclf/stylegen.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "artclf/error.hpp"
#include "artclf/util.hpp"

namespace artclf::stylegen {

namespace nn = torch::nn;

namespace {

std::vector<std::int64_t> spatial_dims(const torch::Tensor& feat) {
  if (feat.dim() == 3) return {1, 2};
  if (feat.dim() == 4) return {2, 3};
  throw ShapeError("feature tensor must be [C,H,W] or [N,C,H,W], got " + std::to_string(feat.dim()) + " dims");
}

// Kaiming-normal weights from a private generator so model construction never
// depends on (or disturbs) the global torch RNG.
void init_conv(nn::Conv2dImpl& conv, at::Generator& gen, double gain) {
  torch::NoGradGuard no_grad;
  const auto& w = conv.weight;
  const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
  w.normal_(0.0, gain / std::sqrt(fan_in), gen);
  if (conv.bias.defined()) conv.bias.uniform_(-0.05, 0.05, gen);
}

nn::Conv2d conv3x3(std::int64_t in, std::int64_t out, bool zero_pad) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(zero_pad ? 1 : 0));
}

}  // namespace

StyleStats channel_stats(const torch::Tensor& feat, double eps) {
  const auto dims = spatial_dims(feat);
  auto mean = feat.mean(dims);
  auto var = (feat - feat.mean(dims, /*keepdim=*/true)).pow(2).mean(dims);
  return {mean, (var + eps).sqrt()};
}

torch::Tensor adain(const torch::Tensor& content, const torch::Tensor& style, double eps) {
  const auto dims = spatial_dims(content);
  if (style.dim() != content.dim()) throw ShapeError("adain: content and style ranks differ");
  const auto ch = content.dim() - 3;
  if (content.size(ch) != style.size(ch)) {
    throw ShapeError("adain: channel mismatch (" + std::to_string(content.size(ch)) + " vs " +
                     std::to_string(style.size(ch)) + ")");
  }
  auto c = channel_stats(content, eps);
  auto s = channel_stats(style, eps);
  auto expand = [](const torch::Tensor& v) { return v.unsqueeze(-1).unsqueeze(-1); };
  return expand(s.std) * ((content - expand(c.mean)) / expand(c.std)) + expand(s.mean);
}

// ---------------------------------------------------------------- encoder

VggEncoderImpl::VggEncoderImpl(const EncoderConfig& config) : config_(config) {
  if (config.width_divisor < 1 || 64 % config.width_divisor != 0) {
    throw ConfigError("encoder width_divisor must divide 64");
  }
  const std::int64_t d = config.width_divisor;
  channels_ = {64 / d, 128 / d, 256 / d, 512 / d};
  const auto [c1, c2, c3, c4] = channels_;

  auto pool = [] { return nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)); };
  features_ = nn::Sequential(
      conv3x3(3, c1, true), nn::ReLU(), conv3x3(c1, c1, true), nn::ReLU(), pool(),   // 0-4
      conv3x3(c1, c2, true), nn::ReLU(), conv3x3(c2, c2, true), nn::ReLU(), pool(),  // 5-9
      conv3x3(c2, c3, true), nn::ReLU(), conv3x3(c3, c3, true), nn::ReLU(),           // 10-13
      conv3x3(c3, c3, true), nn::ReLU(), conv3x3(c3, c3, true), nn::ReLU(), pool(),  // 14-18
      conv3x3(c3, c4, true), nn::ReLU());                                             // 19-20
  register_module("features", features_);

  // constants, not buffers: converted state dicts carry no such entries
  pixel_mean_ = torch::tensor({0.485, 0.456, 0.406}).view({1, 3, 1, 1});
  pixel_std_ = torch::tensor({0.229, 0.224, 0.225}).view({1, 3, 1, 1});

  auto gen = at::detail::createCPUGenerator(config.seed);
  for (auto& m : features_->children()) {
    if (auto* conv = m->as<nn::Conv2dImpl>()) init_conv(*conv, gen, std::sqrt(2.0));
  }
  if (!config.weights_path.empty()) load_state_dict(*this, config.weights_path);
  for (auto& p : parameters()) p.set_requires_grad(false);
  eval();
}

EncoderTaps VggEncoderImpl::forward(const torch::Tensor& images) {
  auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
  if (x.dim() != 4) throw InputError("encoder expects [N,3,H,W] or [3,H,W] images");
  if (x.size(1) != 3) throw InputError("encoder expects 3 channels, got " + std::to_string(x.size(1)));
  if (x.size(2) < 32 || x.size(3) < 32) throw InputError("encoder input must be at least 32x32");

  x = (x - pixel_mean_.to(x.dtype())) / pixel_std_.to(x.dtype());
  static constexpr std::array<std::size_t, 4> tap_after{1, 6, 11, 20};
  EncoderTaps taps;
  std::size_t next_tap = 0;
  std::size_t i = 0;
  for (auto& layer : *features_) {
    x = layer.forward(x);
    if (next_tap < tap_after.size() && i == tap_after[next_tap]) {
      taps.activations.push_back(x);
      taps.layer_ids.emplace_back(kTapNames[next_tap]);
      ++next_tap;
    }
    ++i;
  }
  return taps;
}

// ---------------------------------------------------------------- decoder

DecoderImpl::DecoderImpl(int width_divisor) : width_divisor_(width_divisor) {
  if (width_divisor < 1 || 64 % width_divisor != 0) throw ConfigError("decoder width_divisor must divide 64");
  const std::int64_t d = width_divisor;
  const std::int64_t c1 = 64 / d, c2 = 128 / d, c3 = 256 / d, c4 = 512 / d;
  in_channels_ = c4;

  auto pad = [] { return nn::ReflectionPad2d(nn::ReflectionPad2dOptions(1)); };
  auto up = [] {
    return nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  };
  body_ = nn::Sequential(
      pad(), conv3x3(c4, c3, false), nn::ReLU(), up(),
      pad(), conv3x3(c3, c3, false), nn::ReLU(),
      pad(), conv3x3(c3, c3, false), nn::ReLU(),
      pad(), conv3x3(c3, c3, false), nn::ReLU(),
      pad(), conv3x3(c3, c2, false), nn::ReLU(), up(),
      pad(), conv3x3(c2, c2, false), nn::ReLU(),
      pad(), conv3x3(c2, c1, false), nn::ReLU(), up(),
      pad(), conv3x3(c1, c1, false), nn::ReLU(),
      pad(), conv3x3(c1, 3, false));
  register_module("body", body_);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& features) {
  auto x = features.dim() == 3 ? features.unsqueeze(0) : features;
  if (x.dim() != 4 || x.size(1) != in_channels_) {
    throw ShapeError("decoder expects " + std::to_string(in_channels_) + " input channels");
  }
  auto y = body_->forward(x);
  return features.dim() == 3 ? y.squeeze(0) : y;
}

DecoderState init_decoder(int width_divisor, std::uint64_t seed) {
  DecoderState s;
  s.net = Decoder(width_divisor);
  s.seed = seed;
  auto gen = at::detail::createCPUGenerator(seed);
  auto children = s.net->modules(/*include_self=*/false);
  std::size_t convs = 0;
  for (auto& m : children) convs += m->as<nn::Conv2dImpl>() != nullptr;
  std::size_t k = 0;
  for (auto& m : children) {
    if (auto* conv = m->as<nn::Conv2dImpl>()) {
      // last conv feeds pixels directly: no ReLU follows it
      init_conv(*conv, gen, ++k == convs ? 1.0 : std::sqrt(2.0));
    }
  }
  return s;
}

DecoderState DecoderState::clone() const {
  DecoderState out = *this;
  out.net = Decoder(net->width_divisor());
  torch::NoGradGuard no_grad;
  auto src = net->named_parameters();
  for (auto& p : out.net->named_parameters()) p.value().copy_(src[p.key()]);
  return out;
}

std::uint64_t DecoderState::fingerprint() const {
  std::vector<torch::Tensor> params;
  for (const auto& p : net->parameters()) params.push_back(p);
  return hash_tensors(params);
}

// ---------------------------------------------------------------- losses

TransferLosses transfer_losses(const EncoderTaps& decoded_taps, const torch::Tensor& target,
                               const EncoderTaps& style_taps) {
  if (decoded_taps.activations.size() != style_taps.activations.size() || decoded_taps.activations.empty()) {
    throw ShapeError("transfer_losses: decoded and style tap counts differ");
  }
  if (decoded_taps.content().sizes() != target.sizes()) {
    throw ShapeError("transfer_losses: decoded content tap and target shapes differ");
  }
  TransferLosses out;
  out.content = torch::mse_loss(decoded_taps.content(), target);
  torch::Tensor style = torch::zeros({}, target.options());
  for (std::size_t i = 0; i < decoded_taps.activations.size(); ++i) {
    auto d = channel_stats(decoded_taps.activations[i]);
    auto s = channel_stats(style_taps.activations[i]);
    if (d.mean.size(-1) != s.mean.size(-1)) throw ShapeError("transfer_losses: channel mismatch at tap " + std::to_string(i));
    auto gap = (d.mean - s.mean).pow(2).sum(-1) + (d.std - s.std).pow(2).sum(-1);
    style = style + gap.mean();
  }
  out.style = style;
  return out;
}

TrainingMode parse_training_mode(const std::string& s) {
  if (s == "pooled") return TrainingMode::pooled;
  if (s == "per_class") return TrainingMode::per_class;
  throw ConfigError("unknown decoder training mode '" + s + "' (expected pooled or per_class)");
}

std::string to_string(TrainingMode m) { return m == TrainingMode::pooled ? "pooled" : "per_class"; }

// ---------------------------------------------------------------- training

std::pair<double, double> decoder_step(VggEncoder& encoder, DecoderState& state, torch::optim::Optimizer& opt,
                                       const torch::Tensor& content, const torch::Tensor& style, double style_weight) {
  torch::Tensor target;
  EncoderTaps style_taps;
  {
    torch::NoGradGuard no_grad;
    auto c = encoder->forward(content).content();
    style_taps = encoder->forward(style);
    target = adain(c, style_taps.content());
  }
  auto decoded = state.net->forward(target);
  auto losses = transfer_losses(encoder->forward(decoded), target, style_taps);
  auto loss = losses.content + style_weight * losses.style;
  opt.zero_grad();
  loss.backward();
  opt.step();
  return {losses.content.item<double>(), losses.style.item<double>()};
}

DecoderState train_decoder(VggEncoder& encoder, const corpus::DatasetManifest& manifest,
                           const DecoderTrainConfig& config, std::optional<DecoderState> init) {
  if (config.iterations < 0) throw ConfigError("decoder iterations must be >= 0");
  if (config.batch < 1) throw ConfigError("decoder batch must be >= 1");
  DecoderState state = init ? std::move(*init) : init_decoder(encoder->config().width_divisor, config.seed);
  if (state.net->in_channels() != encoder->content_channels()) {
    throw ShapeError("decoder input width does not match the encoder content tap");
  }
  if (config.iterations == 0) return state;

  auto data = corpus::load_split(manifest, corpus::Split::train, config.image_size, config.workers);
  if (data.size() == 0) throw InputError("decoder training needs at least one train record");

  // pools[k] lists the sample indices a batch may draw from
  std::vector<std::vector<std::int64_t>> pools;
  if (config.mode == TrainingMode::pooled) {
    pools.emplace_back(static_cast<std::size_t>(data.size()));
    std::iota(pools[0].begin(), pools[0].end(), 0);
  } else {
    pools.resize(manifest.classes.size());
    auto labels = data.labels.accessor<std::int64_t, 1>();
    for (std::int64_t i = 0; i < data.size(); ++i) pools[static_cast<std::size_t>(labels[i])].push_back(i);
    std::erase_if(pools, [](const auto& p) { return p.empty(); });
  }
  const auto total_steps = config.iterations * static_cast<std::int64_t>(pools.size());

  state.net->train();
  torch::optim::Adam opt(state.net->parameters(), torch::optim::AdamOptions(config.lr));
  std::mt19937_64 gen(derive_seed(config.seed, "decoder-batches"));
  for (std::int64_t step = 0; step < total_steps; ++step) {
    const auto& pool = pools[static_cast<std::size_t>(step) % pools.size()];
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<std::int64_t> ci, si;
    for (std::int64_t b = 0; b < config.batch; ++b) {
      ci.push_back(pool[pick(gen)]);
      si.push_back(pool[pick(gen)]);
    }
    auto content = data.images.index_select(0, torch::tensor(ci));
    auto style = data.images.index_select(0, torch::tensor(si));
    const auto [lc, ls] = decoder_step(encoder, state, opt, content, style, config.style_weight);
    const double loss = lc + config.style_weight * ls;
    if (!std::isfinite(loss)) {
      throw TrainingError("decoder training: non-finite loss at iteration " + std::to_string(state.iteration) +
                          " (content " + std::to_string(lc) + ", style " + std::to_string(ls) + ")");
    }
    state.loss_curve.push_back(loss);
    ++state.iteration;
    if (config.on_step) config.on_step(state.iteration, loss);
  }
  state.net->eval();
  return state;
}

torch::Tensor stylize(VggEncoder& encoder, const StylizeRequest& request, const DecoderState& state) {
  if (!(request.blend >= 0.0 && request.blend <= 1.0)) throw InputError("blend must lie in [0,1]");
  torch::NoGradGuard no_grad;
  auto c = encoder->forward(request.content_image).content();
  auto s = encoder->forward(request.style_image).content();
  auto t = adain(c, s);
  auto mixed = request.blend * t + (1.0 - request.blend) * c;
  auto out = state.net.ptr()->forward(mixed).clamp(0.0, 1.0);
  return request.content_image.dim() == 3 ? out.squeeze(0) : out;
}

// ---------------------------------------------------------------- checkpoints

void save_decoder(const DecoderState& state, const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  for (const auto& p : state.net->named_parameters()) archive.write("param." + p.key(), p.value().detach());
  archive.write("meta.width_divisor", c10::IValue(static_cast<std::int64_t>(state.net->width_divisor())));
  archive.write("meta.iteration", c10::IValue(state.iteration));
  archive.write("meta.seed", c10::IValue(static_cast<std::int64_t>(state.seed)));
  archive.write("meta.config_hash", c10::IValue(state.config_hash));
  archive.write("meta.loss_curve", torch::tensor(state.loss_curve, torch::kDouble));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  try {
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write decoder checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

DecoderState load_decoder(const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read decoder checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  c10::IValue v;
  archive.read("meta.width_divisor", v);
  DecoderState s;
  s.net = Decoder(static_cast<int>(v.toInt()));
  archive.read("meta.iteration", v);
  s.iteration = v.toInt();
  archive.read("meta.seed", v);
  s.seed = static_cast<std::uint64_t>(v.toInt());
  archive.read("meta.config_hash", v);
  s.config_hash = v.toStringRef();
  torch::Tensor curve;
  archive.read("meta.loss_curve", curve);
  s.loss_curve.assign(curve.data_ptr<double>(), curve.data_ptr<double>() + curve.numel());
  torch::NoGradGuard no_grad;
  for (auto& p : s.net->named_parameters()) {
    torch::Tensor t;
    archive.read("param." + p.key(), t);
    p.value().copy_(t);
  }
  s.net->eval();
  return s;
}

}  // namespace artclf::stylegen
