#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace artclf::corpus {

namespace fs = std::filesystem;

enum class Split { train, val, test };
enum class Origin { original, stylized };
enum class Task { status, gender, combined8 };
enum class ManifestFormat { kaokore, generic_csv };

std::string to_string(Split s);
std::string to_string(Origin o);
std::string to_string(Task t);
std::string to_string(ManifestFormat f);
Split parse_split(const std::string& s);
Task parse_task(const std::string& s);
ManifestFormat parse_format(const std::string& s);

struct ImageRecord {
  std::string relative_path;  // relative to the manifest root, or absolute for generated data
  std::string class_label;
  Split split = Split::train;
  Origin origin = Origin::original;

  bool operator==(const ImageRecord&) const = default;
};

std::ostream& operator<<(std::ostream& os, const ImageRecord& r);

struct DatasetManifest {
  fs::path root;
  std::vector<std::string> classes;  // ordered; index == integer label
  std::vector<ImageRecord> records;
  std::optional<Task> task;  // empty for generic manifests

  fs::path resolve(const ImageRecord& r) const { return root / r.relative_path; }
  std::int64_t class_index(const std::string& label) const;
  std::vector<ImageRecord> split_records(Split s) const;
};

struct ClassHistogram {
  std::map<std::string, std::size_t> counts;

  std::size_t at(const std::string& label) const;
  std::size_t total() const;
};

struct ClassPartition {
  std::set<std::string> representative;
  std::set<std::string> rare;

  bool is_representative(const std::string& label) const { return representative.count(label) > 0; }
};

// Integer code -> name tables for the Kaokore labels file. The defaults
// follow the dataset's published label ordering.
struct KaokoreCodes {
  std::vector<std::string> gender{"male", "female"};
  std::vector<std::string> status{"noble", "warrior", "incarnation", "commoner"};
};

/// Load a dataset. kaokore: `<root>/labels.csv` (image,gender,status[,set])
/// plus `<root>/images_256/`. generic_csv: `<root>/manifest.csv` with header
/// relative_path,label,split. Kaokore files without a `set` column are all
/// assigned to train; callers re-split with stratified_split.
DatasetManifest load_manifest(const fs::path& root, ManifestFormat format, Task task,
                              const KaokoreCodes& codes = {});

/// Class names implied by a Kaokore task, sorted.
std::vector<std::string> task_classes(Task task, const KaokoreCodes& codes = {});

ClassHistogram class_histogram(const DatasetManifest& manifest);

/// Top ceil(C/2) classes by train count are representative, the rest rare.
/// Ties are broken by position in `class_order`.
ClassPartition partition_classes(const ClassHistogram& hist, const std::vector<std::string>& class_order);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Per-class split sizes by largest-remainder rounding of fraction x n.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& fractions);

/// Reassign the split of every record, stratified by class. Record order is
/// preserved; only `split` changes. Deterministic for a given seed.
/// Classes too small to populate every non-zero split add a warning.
DatasetManifest stratified_split(const DatasetManifest& base, const SplitFractions& fractions,
                                 std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

using ImagePair = std::pair<ImageRecord, ImageRecord>;  // (content, style)

/// n content/style pairs drawn independently and uniformly with replacement
/// from the class's train records.
std::vector<ImagePair> sample_pairs(const DatasetManifest& manifest, const std::string& class_label,
                                    std::size_t n, std::uint64_t seed);

/// Decoded images + integer labels for one split.
struct LabeledImages {
  torch::Tensor images;  // [N,3,S,S]
  torch::Tensor labels;  // [N] int64
  std::vector<ImageRecord> records;

  std::int64_t size() const { return images.defined() ? images.size(0) : 0; }
};

LabeledImages load_split(const DatasetManifest& manifest, Split split, int image_size, int workers = 8);

void write_generic_manifest(const DatasetManifest& manifest, const fs::path& path);

}  // namespace artclf::corpus
