#include "support/check.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>

#include "artclf/error.hpp"
#include "artclf/stylegen.hpp"
#include "artclf/synthetic.hpp"
#include "support/fixtures.hpp"

using namespace artclf;
using namespace artclf::stylegen;
using artclf::testing::TempDir;

namespace {

torch::Tensor grid2x2(double a, double b, double c, double d) {
  return torch::tensor({a, b, c, d}, torch::kDouble).view({1, 2, 2});
}

std::vector<torch::Tensor> param_snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool same_params(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!torch::equal(a[i], b[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("channel_stats worked examples") {
  auto constant = torch::full({1, 3, 3}, 5.0, torch::kDouble);
  auto s = channel_stats(constant);
  CHECK(s.mean.item<double>() == doctest::Approx(5.0));
  CHECK(s.std.item<double>() == doctest::Approx(std::sqrt(kStatEpsilon)).epsilon(1e-9));

  auto g = channel_stats(grid2x2(1, 2, 3, 4));
  CHECK(g.mean.item<double>() == doctest::Approx(2.5));
  // population variance of {1,2,3,4} is 1.25
  CHECK(g.std.item<double>() == doctest::Approx(std::sqrt(1.25 + kStatEpsilon)).epsilon(1e-12));
  CHECK(g.std.item<double>() == doctest::Approx(1.1180).epsilon(1e-4));

  auto two = torch::cat({grid2x2(1, 2, 3, 4), torch::full({1, 2, 2}, -7.0, torch::kDouble)}, 0);
  auto st = channel_stats(two);
  CHECK(st.mean[0].item<double>() == doctest::Approx(2.5));
  CHECK(st.mean[1].item<double>() == doctest::Approx(-7.0));
  CHECK(st.std[0].item<double>() == doctest::Approx(g.std.item<double>()));
  CHECK(st.std[1].item<double>() == doctest::Approx(std::sqrt(kStatEpsilon)));

  auto batched = channel_stats(two.unsqueeze(0).repeat({3, 1, 1, 1}));
  CHECK(batched.mean.sizes() == torch::IntArrayRef{3, 2});
}

TEST_CASE("adain worked 2x2 example") {
  auto content = grid2x2(1, 2, 3, 4);
  // style channel with mean 0 and std (eps included) exactly 2
  const double a = std::sqrt(4.0 - kStatEpsilon);
  auto style = grid2x2(a, -a, a, -a);
  auto out = adain(content, style);
  // oracle: direct evaluation of sigma_s * (c - mu_c) / sigma_c + mu_s
  const double sc = std::sqrt(1.25 + kStatEpsilon);
  const double want[] = {2 * (1 - 2.5) / sc, 2 * (2 - 2.5) / sc, 2 * (3 - 2.5) / sc, 2 * (4 - 2.5) / sc};
  auto flat = out.view({-1});
  for (int i = 0; i < 4; ++i) CHECK(flat[i].item<double>() == doctest::Approx(want[i]).epsilon(1e-12));
  CHECK(flat[0].item<double>() == doctest::Approx(-2.683).epsilon(1e-3));
  CHECK(flat[1].item<double>() == doctest::Approx(-0.894).epsilon(1e-3));
  CHECK(flat[2].item<double>() == doctest::Approx(0.894).epsilon(1e-3));
  CHECK(flat[3].item<double>() == doctest::Approx(2.683).epsilon(1e-3));
}

TEST_CASE("adain identity and degenerate style") {
  torch::manual_seed(1);
  auto c = torch::randn({4, 6, 5}, torch::kDouble);
  CHECK(torch::allclose(adain(c, c), c, 0, 1e-5));

  auto style = torch::full({4, 3, 3}, 0.75, torch::kDouble);
  auto out = adain(c, style);
  // style std collapses to sqrt(eps): output is the style mean up to ~1e-2
  CHECK((out - 0.75).abs().max().item<double>() < 1e-2);
  CHECK(out.std().item<double>() < 5e-3);

  CHECK_THROWS_AS(adain(c, torch::randn({3, 5, 5}, torch::kDouble)), ShapeError);
}

TEST_CASE("adain properties over random features") {
  std::mt19937_64 gen(17);
  const std::array<std::int64_t, 3> channel_choices{1, 3, 64};
  auto size = [&] { return static_cast<std::int64_t>(4 + gen() % 29); };
  for (int trial = 0; trial < 200; ++trial) {
    const auto ch = channel_choices[gen() % 3];
    torch::manual_seed(static_cast<std::uint64_t>(trial));
    auto c = torch::randn({ch, size(), size()}, torch::kDouble) * 3.0 + 1.0;
    auto s = torch::randn({ch, size(), size()}, torch::kDouble) * torch::rand({ch, 1, 1}, torch::kDouble) * 4.0 +
             torch::randn({ch, 1, 1}, torch::kDouble);

    // stat matching (epsilon-free form of the transform)
    auto out0 = adain(c, s, 0.0);
    auto so = channel_stats(out0, 0.0);
    auto ss = channel_stats(s, 0.0);
    CHECK((so.mean - ss.mean).abs().max().item<double>() < 1e-5);
    CHECK((so.std - ss.std).abs().max().item<double>() < 1e-5);

    // idempotence under a fixed style; the epsilon residue scales like
    // eps / sigma^2, so this draws features of order-one spread
    auto s_unit = torch::randn({ch, size(), size()}, torch::kDouble) * (torch::rand({ch, 1, 1}, torch::kDouble) + 0.5);
    auto once = adain(c, s_unit);
    CHECK((adain(once, s_unit) - once).abs().max().item<double>() < 1e-4);

    // per-channel affine covariance in the style
    auto scale = torch::rand({ch, 1, 1}, torch::kDouble) * 1.5 + 0.5;
    auto shift = torch::randn({ch, 1, 1}, torch::kDouble);
    auto moved = adain(c, s * scale + shift, 0.0);
    CHECK((moved - (out0 * scale + shift)).abs().max().item<double>() < 1e-5);
  }
}

TEST_CASE("encoder tap shapes follow VGG-19 arithmetic") {
  VggEncoder enc(EncoderConfig{});
  torch::NoGradGuard no_grad;
  auto taps = enc->forward(torch::rand({3, 256, 256}));
  REQUIRE(taps.activations.size() == 4);
  CHECK(taps.activations[0].sizes() == torch::IntArrayRef{1, 64, 256, 256});
  CHECK(taps.activations[1].sizes() == torch::IntArrayRef{1, 128, 128, 128});
  CHECK(taps.activations[2].sizes() == torch::IntArrayRef{1, 256, 64, 64});
  CHECK(taps.activations[3].sizes() == torch::IntArrayRef{1, 512, 32, 32});
  CHECK(taps.layer_ids == std::vector<std::string>{"relu1_1", "relu2_1", "relu3_1", "relu4_1"});

  auto named = enc->named_parameters();
  CHECK(named.contains("features.0.weight"));
  CHECK(named.contains("features.19.weight"));
}

TEST_CASE("encoder is deterministic, finite and validates input") {
  VggEncoder enc(EncoderConfig{8, 3, {}});
  torch::NoGradGuard no_grad;
  auto zero = enc->forward(torch::zeros({3, 64, 64}));
  for (const auto& a : zero.activations) CHECK(torch::isfinite(a).all().item<bool>());
  auto img = torch::rand({2, 3, 48, 64});
  auto a = enc->forward(img);
  auto b = enc->forward(img);
  for (std::size_t i = 0; i < 4; ++i) CHECK(torch::equal(a.activations[i], b.activations[i]));
  CHECK(a.content().sizes() == torch::IntArrayRef{2, 64, 6, 8});
  CHECK_THROWS_AS(enc->forward(torch::rand({4, 64, 64})), InputError);
  CHECK_THROWS_AS(enc->forward(torch::rand({3, 16, 16})), InputError);

  VggEncoder same(EncoderConfig{8, 3, {}});
  CHECK(same_params(param_snapshot(*enc), param_snapshot(*same)));
}

TEST_CASE("decoder upsamples 8x and is deterministic") {
  auto state = init_decoder(1, 0);
  torch::NoGradGuard no_grad;
  auto t = torch::randn({512, 32, 32});
  auto out = state.net->forward(t);
  CHECK(out.sizes() == torch::IntArrayRef{3, 256, 256});
  CHECK(torch::isfinite(out).all().item<bool>());
  CHECK(torch::equal(out, state.net->forward(t)));
  CHECK_THROWS_AS(state.net->forward(torch::randn({256, 32, 32})), ShapeError);

  auto desk = init_decoder(8, 0);
  CHECK(desk.net->forward(torch::randn({2, 64, 8, 8})).sizes() == torch::IntArrayRef{2, 3, 64, 64});
}

TEST_CASE("transfer_losses zero residuals and hand-evaluated gap") {
  torch::manual_seed(5);
  EncoderTaps taps;
  taps.activations = {torch::randn({2, 3, 8, 8}), torch::randn({2, 5, 4, 4})};
  taps.layer_ids = {"a", "b"};
  auto l = transfer_losses(taps, taps.content().clone(), taps);
  CHECK(l.content.item<double>() == 0.0);
  CHECK(l.style.item<double>() == 0.0);

  // 2 channels, one layer: means differ by 1 and stds by 0.5 in every channel
  auto pattern = torch::tensor({1.0, -1.0, 1.0, -1.0}, torch::kDouble).view({1, 1, 2, 2});
  auto make = [&](double mean, double sd) {
    const double raw = std::sqrt(sd * sd - kStatEpsilon);  // so sqrt(var + eps) == sd
    return torch::cat({pattern * raw + mean, pattern * raw + mean}, 1);
  };
  EncoderTaps decoded{{make(0.0, 1.0)}, {"x"}};
  EncoderTaps style{{make(1.0, 1.5)}, {"x"}};
  auto gap = transfer_losses(decoded, decoded.content().clone(), style);
  CHECK(gap.style.item<double>() == doctest::Approx(2 * 1.0 + 2 * 0.25).epsilon(1e-9));
  CHECK(gap.content.item<double>() >= 0.0);

  EncoderTaps short_taps{{taps.activations[0]}, {"a"}};
  CHECK_THROWS_AS(transfer_losses(short_taps, taps.activations[0], taps), ShapeError);
}

TEST_CASE("AdaIN + transfer losses: autograd matches central differences") {
  // Toy double-precision encoder/decoder around the real adain/loss code.
  torch::manual_seed(9);
  const auto dbl = torch::TensorOptions().dtype(torch::kDouble);
  auto enc1 = torch::randn({4, 3, 3, 3}, dbl) * 0.3;
  auto enc2 = torch::randn({4, 4, 3, 3}, dbl) * 0.3;
  auto encode = [&](const torch::Tensor& x) {
    EncoderTaps t;
    auto a = torch::tanh(torch::conv2d(x, enc1, {}, 1, 1));
    auto b = torch::tanh(torch::conv2d(a, enc2, {}, 1, 1));
    t.activations = {a, b};
    t.layer_ids = {"t1", "t2"};
    return t;
  };
  auto dec1 = (torch::randn({6, 4, 3, 3}, dbl) * 0.3).requires_grad_();
  auto dec2 = (torch::randn({3, 6, 3, 3}, dbl) * 0.3).requires_grad_();
  auto content_img = torch::rand({1, 3, 8, 8}, dbl);
  auto style_img = torch::rand({1, 3, 8, 8}, dbl);

  auto loss_fn = [&] {
    auto c = encode(content_img).content();
    auto s_taps = encode(style_img);
    auto t = adain(c, s_taps.content());
    auto decoded = torch::conv2d(torch::tanh(torch::conv2d(t, dec1, {}, 1, 1)), dec2, {}, 1, 1);
    auto l = transfer_losses(encode(decoded), t, s_taps);
    return l.content + 10.0 * l.style;
  };
  auto loss = loss_fn();
  loss.backward();
  auto eval = [&] {
    torch::NoGradGuard ng;
    return loss_fn().item<double>();
  };
  auto fd1 = artclf::testing::central_difference(eval, dec1.detach());
  auto fd2 = artclf::testing::central_difference(eval, dec2.detach());
  CHECK(artclf::testing::relative_error(dec1.grad(), fd1) < 1e-4);
  CHECK(artclf::testing::relative_error(dec2.grad(), fd2) < 1e-4);
}

TEST_CASE("decoder training: zero iterations, determinism, frozen encoder") {
  TempDir dir("style_small");
  synthetic::TextureDatasetSpec spec;
  spec.classes = {"a", "b"};
  spec.counts = {6, 6};
  spec.fractions = {1.0, 0.0, 0.0};
  auto manifest = synthetic::write_texture_dataset(dir.path(), spec);

  VggEncoder enc(EncoderConfig{8, 1, {}});
  const auto enc_before = param_snapshot(*enc);

  DecoderTrainConfig cfg;
  cfg.iterations = 0;
  cfg.image_size = 64;
  cfg.seed = 4;
  auto zero = train_decoder(enc, manifest, cfg);
  CHECK(same_params(param_snapshot(*zero.net), param_snapshot(*init_decoder(8, 4).net)));
  CHECK(zero.iteration == 0);

  cfg.iterations = 6;
  cfg.batch = 4;
  auto a = train_decoder(enc, manifest, cfg);
  auto b = train_decoder(enc, manifest, cfg);
  CHECK(a.loss_curve.size() == 6);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(same_params(enc_before, param_snapshot(*enc)));

  cfg.mode = TrainingMode::per_class;
  auto pc = train_decoder(enc, manifest, cfg);
  CHECK(pc.loss_curve.size() == 12);  // iterations per class
  CHECK(pc.iteration == 12);

  corpus::DatasetManifest empty = manifest;
  for (auto& r : empty.records) r.split = corpus::Split::test;
  CHECK_THROWS_AS(train_decoder(enc, empty, cfg), InputError);
}

TEST_CASE("decoder training reduces the loss and pulls stylized stats toward the style") {
  TempDir dir("style_train");
  synthetic::TextureDatasetSpec spec;
  spec.classes = {"a", "b", "c", "d"};
  spec.counts = {4, 4, 4, 4};
  spec.fractions = {1.0, 0.0, 0.0};
  spec.seed = 2;
  auto manifest = synthetic::write_texture_dataset(dir.path(), spec);
  VggEncoder enc(EncoderConfig{8, 0, {}});

  DecoderTrainConfig cfg;
  cfg.iterations = 120;
  cfg.image_size = 64;
  cfg.seed = 1;
  cfg.lr = 1e-3;
  auto init = init_decoder(8, cfg.seed);
  auto trained = train_decoder(enc, manifest, cfg, init.clone());
  REQUIRE(trained.loss_curve.size() == 120);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += trained.loss_curve[static_cast<std::size_t>(i)];
    last += trained.loss_curve[trained.loss_curve.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(last < first);

  auto data = corpus::load_split(manifest, corpus::Split::train, 64);
  auto stat_gap = [&](const DecoderState& st) {
    double gap = 0;
    torch::NoGradGuard ng;
    for (std::int64_t i = 0; i < 8; ++i) {
      auto c = data.images[i];
      auto s = data.images[15 - i];
      auto out = stylize(enc, {c, s, 1.0}, st);
      auto so = channel_stats(enc->forward(out).content());
      auto ss = channel_stats(enc->forward(s).content());
      gap += ((so.mean - ss.mean).pow(2).sum() + (so.std - ss.std).pow(2).sum()).item<double>();
    }
    return gap;
  };
  CHECK(stat_gap(trained) < stat_gap(init));

  // self-style reconstruction is closer in content features than any other style
  torch::NoGradGuard ng;
  auto c = data.images[0];
  auto target = enc->forward(c).content();
  auto err = [&](const torch::Tensor& style) {
    return torch::mse_loss(enc->forward(stylize(enc, {c, style, 1.0}, trained)).content(), target).item<double>();
  };
  const double self = err(c);
  for (std::int64_t j = 1; j < 16; ++j) CHECK(self < err(data.images[j]));
}

TEST_CASE("stylize blend semantics and validation") {
  VggEncoder enc(EncoderConfig{8, 0, {}});
  auto state = init_decoder(8, 2);
  torch::manual_seed(3);
  auto c = torch::rand({3, 64, 64});
  auto s = torch::rand({3, 64, 64});
  torch::NoGradGuard ng;
  auto recon = stylize(enc, {c, s, 0.0}, state);
  auto direct = state.net->forward(enc->forward(c).content()).clamp(0, 1).squeeze(0);
  CHECK(recon.sizes() == torch::IntArrayRef{3, 64, 64});
  CHECK(torch::allclose(recon, direct, 0, 1e-6));
  CHECK_FALSE(torch::allclose(stylize(enc, {c, s, 1.0}, state), recon, 0, 1e-6));
  CHECK_THROWS_AS(stylize(enc, {c, s, 1.5}, state), InputError);
  CHECK_THROWS_AS(stylize(enc, {c, s, -0.1}, state), InputError);
}

TEST_CASE("decoder checkpoints round-trip parameters and metadata") {
  TempDir dir("ckpt");
  auto state = init_decoder(8, 77);
  state.iteration = 12;
  state.config_hash = "abc123";
  state.loss_curve = {3.0, 2.0, 1.5};
  save_decoder(state, dir / "decoder.pt");
  auto back = load_decoder(dir / "decoder.pt");
  CHECK(back.fingerprint() == state.fingerprint());
  CHECK(back.iteration == 12);
  CHECK(back.seed == 77);
  CHECK(back.config_hash == "abc123");
  CHECK(back.loss_curve == state.loss_curve);
  CHECK_THROWS_AS(load_decoder(dir / "missing.pt"), IoError);
}

TEST_CASE("encoder loads torchvision VGG-19 weights and reproduces its activations") {
  const std::string python = ARTCLF_PYTHON;
  TempDir dir("vgg19");
  const std::string cmd = "\"" + python + "\" \"" ARTCLF_SOURCE_DIR "/tools/export_weights.py\" --arch vgg19 "
                          "--random-init --seed 1 --out \"" + (dir / "w.pt").string() + "\" --probe \"" +
                          (dir / "probe.pt").string() + "\" --probe-size 64 > /dev/null 2>&1";
  if (python.empty() || std::system(cmd.c_str()) != 0) {
    MESSAGE("python with torchvision unavailable; skipping encoder parity");
    return;
  }
  std::ifstream in(dir / "probe.pt", std::ios::binary);
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::map<std::string, torch::Tensor> ref;
  for (const auto& kv : torch::pickle_load(data).toGenericDict()) ref[kv.key().toStringRef()] = kv.value().toTensor();

  VggEncoder enc(EncoderConfig{1, 0, (dir / "w.pt").string()});
  torch::NoGradGuard ng;
  auto taps = enc->forward(ref.at("input"));
  const std::array<const char*, 4> names{"features.1", "features.6", "features.11", "features.20"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    INFO(names[i]);
    CHECK(ref.at(names[i]).abs().max().item<double>() > 0);
    CHECK(artclf::testing::relative_error(taps.activations[i], ref.at(names[i])) < 1e-5);
  }
}
