#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "artclf/corpus.hpp"
#include "artclf/error.hpp"
#include "artclf/stylegen.hpp"

namespace artclf::augment {

namespace fs = std::filesystem;

/// round(p * count), half-up.
std::size_t scaled_count(double p, std::size_t count);

struct AugmentationPlan {
  double p1 = 0.0;  // proportion for representative classes
  double p2 = 0.0;  // proportion for rare classes
  corpus::ClassPartition partition;
  std::map<std::string, std::size_t> per_class_counts;
  std::uint64_t seed = 0;

  std::size_t total() const;
};

/// Per-class counts from the train histogram. Proportions must be >= 0 and,
/// unless `allow_above_one`, <= 1.
AugmentationPlan plan_counts(const corpus::ClassHistogram& hist, const corpus::ClassPartition& partition, double p1,
                             double p2, std::uint64_t seed = 0, bool allow_above_one = false);

struct Provenance {
  corpus::ImageRecord content;
  corpus::ImageRecord style;
  double blend = 1.0;
  std::uint64_t seed = 0;  // seed of the sampling stream that drew the pair
};

/// Stylized train records; provenance[i] describes records[i].
struct AugmentedManifest {
  fs::path out_dir;
  std::vector<corpus::ImageRecord> records;
  std::vector<Provenance> provenance;
  std::vector<std::string> failures;  // pairs that failed and were resampled

  std::size_t size() const { return records.size(); }
  std::map<std::string, std::size_t> class_counts() const;
};

/// Raised when writing output fails part-way. `partial` lists what was
/// written so callers can clean up.
class PartialOutputError : public IoError {
 public:
  PartialOutputError(const std::string& message, AugmentedManifest partial)
      : IoError(message), partial_(std::move(partial)) {}
  const AugmentedManifest& partial() const noexcept { return partial_; }

 private:
  AugmentedManifest partial_;
};

/// Produces one stylized [3,H,W] image for a (content, style) pair.
using Stylizer = std::function<torch::Tensor(const corpus::ImagePair&)>;

struct MaterializeOptions {
  double blend = 1.0;
  int image_size = 256;  // content and style are resized to this before encoding
  int workers = 8;
};

/// Stylizer backed by the AdaIN encoder/decoder pair.
Stylizer adain_stylizer(stylegen::VggEncoder encoder, const stylegen::DecoderState& decoder,
                        const corpus::DatasetManifest& manifest, const MaterializeOptions& options);

/// Draw per-class pairs with corpus::sample_pairs, stylize them on a worker
/// pool and write `<out_dir>/<class>/<index>_<contentstem>_<stylestem>.png`
/// plus `provenance.csv`. A pair whose stylization throws is resampled once;
/// a second failure aborts with AugmentError.
AugmentedManifest materialize(const AugmentationPlan& plan, const corpus::DatasetManifest& manifest,
                              const Stylizer& stylizer, const fs::path& out_dir,
                              const MaterializeOptions& options = {});

AugmentedManifest materialize(const AugmentationPlan& plan, const corpus::DatasetManifest& manifest,
                              stylegen::VggEncoder encoder, const stylegen::DecoderState& decoder,
                              const fs::path& out_dir, const MaterializeOptions& options = {});

/// The first per_class_counts[c] records of each class of `pool`. Because
/// sample_pairs streams are prefix-stable, this equals materializing the
/// smaller plan directly with the same seed.
AugmentedManifest take_prefix(const AugmentedManifest& pool, const AugmentationPlan& plan);

/// Original records plus stylized records in train. Val/test stay original.
corpus::DatasetManifest merge(const corpus::DatasetManifest& original, const AugmentedManifest& augmented);

void write_provenance(const AugmentedManifest& augmented, const fs::path& path);

/// Reload an augmentation directory written by materialize.
AugmentedManifest read_provenance(const fs::path& out_dir);

/// Sampling seed of class `label` under plan seed `seed`.
std::uint64_t class_seed(std::uint64_t seed, const std::string& label);

}  // namespace artclf::augment
