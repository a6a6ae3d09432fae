#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace artclf::attnclf {

enum class Architecture { vgg16, vgg19, resnet34, resnet50, resnet101, resnet152, tinycnn };
Architecture parse_architecture(const std::string& s);
std::string to_string(Architecture a);

/// Layer names that may be tapped, shallow to deep. The last one is always
/// the stage the global vector is pooled from.
std::vector<std::string> valid_taps(Architecture a);
std::vector<std::string> default_taps(Architecture a);
/// Smallest accepted input side.
int minimum_input_size(Architecture a);

struct BackboneSpec {
  Architecture architecture = Architecture::tinycnn;
  std::vector<std::string> tap_ids;  // empty means default_taps(architecture)
  bool frozen = true;
  bool pretrained = false;
  std::string weights_path;  // torchvision-named state dict; required when pretrained
  std::int64_t tiny_width = 16;  // tinycnn stem width; stages use 1x,2x,4x,8x
  std::uint64_t seed = 0;

  std::vector<std::string> resolved_taps() const;
};

struct FeatureTaps {
  std::vector<torch::Tensor> locals;  // [B,C_i,H_i,W_i], ordered as the taps
  torch::Tensor global_vec;           // [B,C_global], average-pooled deepest stage
};

/// Pretrained (or random) feature extractor with named taps. Parameter names
/// follow torchvision, so converted state dicts load by name.
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const BackboneSpec& spec);

  FeatureTaps forward(const torch::Tensor& images);

  const BackboneSpec& spec() const { return spec_; }
  const std::vector<std::string>& taps() const { return taps_; }
  std::vector<std::int64_t> tap_channels() const;
  std::int64_t global_channels() const;

  /// Parameters grouped by stage, shallow to deep (gradual unfreezing unit).
  std::vector<std::vector<torch::Tensor>> stage_parameters() const;
  std::vector<std::string> stage_names() const;

  /// BatchNorm layers keep their pretrained statistics in every mode.
  void train(bool on = true) override;

 private:
  struct Stage {
    std::string name;
    std::vector<std::shared_ptr<torch::nn::Module>> modules;
    std::int64_t channels = 0;
  };

  void build_vgg(const std::vector<int>& config);
  void build_resnet(bool bottleneck, const std::vector<int>& blocks);
  void build_tiny();

  BackboneSpec spec_;
  std::vector<std::string> taps_;
  std::vector<Stage> stages_;
  std::vector<std::size_t> tap_stage_;  // stage index of each tap
  torch::Tensor pixel_mean_;
  torch::Tensor pixel_std_;
};
TORCH_MODULE(Backbone);

/// Result of attending one tap.
struct AttendedTap {
  torch::Tensor descriptor;  // [B,d]
  torch::Tensor map;         // [B,H,W], sums to 1 per sample
};

/// Compatibility c_xy = u . (l_xy + g), map = softmax over positions,
/// descriptor = sum_xy map_xy * l_xy. local: [B,d,H,W], global: [B,d], u: [d].
AttendedTap spatial_attention(const torch::Tensor& local, const torch::Tensor& global, const torch::Tensor& u);

struct AttentionOutput {
  std::vector<torch::Tensor> descriptors;  // one [B,d] per tap
  std::vector<torch::Tensor> maps;         // one [B,H_i,W_i] per tap
};

struct ModelConfig {
  BackboneSpec backbone;
  std::int64_t num_classes = 2;
  std::int64_t projection_width = 512;
  std::int64_t hidden_width = 1024;
  double dropout = 0.5;
  std::uint64_t seed = 0;
};

struct ModelOutput {
  torch::Tensor logits;  // [B,num_classes]
  AttentionOutput attention;
};

class AttentionClassifierImpl : public torch::nn::Module {
 public:
  explicit AttentionClassifierImpl(const ModelConfig& config);

  ModelOutput forward(const torch::Tensor& images);
  /// Same head on precomputed backbone features.
  ModelOutput forward_features(const FeatureTaps& features);

  const ModelConfig& config() const { return config_; }
  Backbone& backbone() { return backbone_; }
  const Backbone& backbone() const { return backbone_; }
  const std::vector<torch::Tensor>& attention_vectors() const { return u_; }
  torch::nn::Conv2d projection(std::size_t tap) const { return projections_[tap]; }

  /// Projections, attention vectors and head: everything outside the backbone.
  std::vector<torch::Tensor> head_parameters() const;

  /// Freeze or unfreeze the whole backbone.
  void set_backbone_trainable(bool trainable);
  /// Unfreeze only the deepest `stages` backbone stages; the rest are frozen.
  void unfreeze_deepest(std::size_t stages);

 private:
  ModelConfig config_;
  Backbone backbone_{nullptr};
  std::vector<torch::nn::Conv2d> projections_;
  torch::nn::Linear global_projection_{nullptr};
  std::vector<torch::Tensor> u_;
  torch::nn::Sequential head_{nullptr};
};
TORCH_MODULE(AttentionClassifier);

enum class Reduction { mean, sum };

struct LossConfig {
  double gamma = 2.0;
  double alpha = 0.25;
  double l1 = 0.0;
  double l2 = 0.0;
  Reduction reduction = Reduction::mean;
};

Reduction parse_reduction(const std::string& s);
std::string to_string(Reduction r);

/// Row-wise softmax of the logits.
torch::Tensor probabilities(const torch::Tensor& logits);

/// -alpha (1 - p_t)^gamma log p_t for each sample, from log-softmax.
torch::Tensor focal_loss_per_sample(const torch::Tensor& logits, const torch::Tensor& labels, const LossConfig& cfg);
torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& labels, const LossConfig& cfg);

/// l1 * sum|w| + l2 * sum w^2.
torch::Tensor regularization(const std::vector<torch::Tensor>& params, double l1, double l2);

/// Focal loss plus regularization of `params` (head and attention weights).
torch::Tensor training_loss(const torch::Tensor& logits, const torch::Tensor& labels, const LossConfig& cfg,
                            const std::vector<torch::Tensor>& params);

struct Checkpoint {
  AttentionClassifier model{nullptr};
  ModelConfig config;
  LossConfig loss;
  std::vector<std::string> classes;
  std::string config_hash;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copy parameters and buffers from `src` into `dst` (same architecture).
void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src);

}  // namespace artclf::attnclf
