#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "artclf/corpus.hpp"

namespace artclf::stylegen {

/// Added to the variance before the square root, so constant channels do not
/// divide by zero in the normalisation.
inline constexpr double kStatEpsilon = 1e-5;

/// Per-channel first and second moments. Shapes are [C] for a [C,H,W]
/// feature map and [N,C] for a batch.
struct StyleStats {
  torch::Tensor mean;
  torch::Tensor std;
};

/// Spatial mean and sqrt(population variance + eps) per channel.
StyleStats channel_stats(const torch::Tensor& feat, double eps = kStatEpsilon);

/// Adaptive instance normalisation: renormalise `content` to the channel
/// statistics of `style`. Accepts [C,H,W] or [N,C,H,W]; spatial sizes may
/// differ, channel counts must match.
torch::Tensor adain(const torch::Tensor& content, const torch::Tensor& style, double eps = kStatEpsilon);

/// Activations at the style taps, shallow to deep. The deepest tap doubles as
/// the content layer.
struct EncoderTaps {
  std::vector<torch::Tensor> activations;
  std::vector<std::string> layer_ids;

  const torch::Tensor& content() const { return activations.back(); }
};

struct EncoderConfig {
  // 1 gives the VGG-19 channel widths (64/128/256/512); 8 gives the
  // desk-scale encoder (8/16/32/64).
  int width_divisor = 1;
  std::uint64_t seed = 0;         // init for the random-weight encoder
  std::string weights_path;       // optional converted VGG-19 state dict
};

/// Frozen VGG-19 prefix up to relu4_1. Layer indices follow torchvision's
/// `features` numbering so converted state dicts load by name.
class VggEncoderImpl : public torch::nn::Module {
 public:
  static constexpr std::array<const char*, 4> kTapNames{"relu1_1", "relu2_1", "relu3_1", "relu4_1"};

  explicit VggEncoderImpl(const EncoderConfig& config = {});

  /// images: [N,3,H,W] or [3,H,W], RGB in [0,1], H and W >= 32.
  EncoderTaps forward(const torch::Tensor& images);

  std::int64_t content_channels() const { return channels_.back(); }
  const std::array<std::int64_t, 4>& tap_channels() const { return channels_; }
  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  std::array<std::int64_t, 4> channels_{};
  torch::nn::Sequential features_{nullptr};
  torch::Tensor pixel_mean_;
  torch::Tensor pixel_std_;
};
TORCH_MODULE(VggEncoder);

/// Mirror of the encoder: reflection padding, 3x3 convs, nearest-neighbour
/// x2 upsampling. Maps [N,C4,h,w] to [N,3,8h,8w].
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(int width_divisor = 1);

  torch::Tensor forward(const torch::Tensor& features);

  std::int64_t in_channels() const { return in_channels_; }
  int width_divisor() const { return width_divisor_; }

 private:
  int width_divisor_;
  std::int64_t in_channels_;
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Decoder);

struct DecoderState {
  Decoder net{nullptr};
  std::int64_t iteration = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<double> loss_curve;  // combined loss per training step

  DecoderState clone() const;
  /// Hash of the parameter bytes; keys caches of stylized output.
  std::uint64_t fingerprint() const;
};

DecoderState init_decoder(int width_divisor, std::uint64_t seed);

/// Content loss is the MSE between the decoded image's content tap and the
/// AdaIN target. Style loss sums, over the style taps, the squared L2 gaps of
/// channel means and stds (averaged over the batch).
struct TransferLosses {
  torch::Tensor content;
  torch::Tensor style;
};

TransferLosses transfer_losses(const EncoderTaps& decoded_taps, const torch::Tensor& target,
                               const EncoderTaps& style_taps);

enum class TrainingMode { pooled, per_class };
TrainingMode parse_training_mode(const std::string& s);
std::string to_string(TrainingMode m);

struct DecoderTrainConfig {
  std::int64_t iterations = 20000;
  std::int64_t batch = 8;
  double lr = 1e-4;
  double style_weight = 10.0;
  std::uint64_t seed = 0;
  int image_size = 256;
  // pooled: content and style drawn from the whole train split.
  // per_class: `iterations` steps per class, both images from that class.
  TrainingMode mode = TrainingMode::pooled;
  int workers = 8;
  std::function<void(std::int64_t, double)> on_step;  // optional progress hook
};

/// Train a decoder against the frozen encoder. Encoder parameters are never
/// touched. Throws TrainingError if a loss becomes non-finite.
DecoderState train_decoder(VggEncoder& encoder, const corpus::DatasetManifest& manifest,
                           const DecoderTrainConfig& config, std::optional<DecoderState> init = std::nullopt);

/// Single optimisation step on in-memory batches; returns (content, style).
std::pair<double, double> decoder_step(VggEncoder& encoder, DecoderState& state, torch::optim::Optimizer& opt,
                                       const torch::Tensor& content, const torch::Tensor& style, double style_weight);

struct StylizeRequest {
  torch::Tensor content_image;  // [3,H,W]
  torch::Tensor style_image;    // [3,H',W']
  double blend = 1.0;           // 0 = content reconstruction, 1 = full AdaIN
};

/// Decode blend*AdaIN(c,s) + (1-blend)*c. Output is [3, 8*floor(H/8), ...],
/// clamped to [0,1].
torch::Tensor stylize(VggEncoder& encoder, const StylizeRequest& request, const DecoderState& state);

void save_decoder(const DecoderState& state, const std::filesystem::path& path);
DecoderState load_decoder(const std::filesystem::path& path);

}  // namespace artclf::stylegen
