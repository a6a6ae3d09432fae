#include "artclf/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "artclf/error.hpp"
#include "artclf/image_io.hpp"
#include "artclf/util.hpp"

namespace artclf::corpus {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::string to_string(Origin o) { return o == Origin::original ? "original" : "stylized"; }

std::ostream& operator<<(std::ostream& os, const ImageRecord& r) {
  return os << r.relative_path << " [" << r.class_label << ", " << to_string(r.split) << ", " << to_string(r.origin)
            << "]";
}

std::string to_string(Task t) {
  switch (t) {
    case Task::status: return "status";
    case Task::gender: return "gender";
    case Task::combined8: return "combined8";
  }
  return "?";
}

std::string to_string(ManifestFormat f) { return f == ManifestFormat::kaokore ? "kaokore" : "generic_csv"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val" || s == "dev" || s == "valid" || s == "validation") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split value '" + s + "'");
}

Task parse_task(const std::string& s) {
  if (s == "status") return Task::status;
  if (s == "gender") return Task::gender;
  if (s == "combined8") return Task::combined8;
  throw ConfigError("unknown task '" + s + "' (expected status, gender or combined8)");
}

ManifestFormat parse_format(const std::string& s) {
  if (s == "kaokore") return ManifestFormat::kaokore;
  if (s == "generic_csv") return ManifestFormat::generic_csv;
  throw ConfigError("unknown dataset format '" + s + "' (expected kaokore or generic_csv)");
}

std::int64_t DatasetManifest::class_index(const std::string& label) const {
  auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) throw ValidationError("label '" + label + "' is not a declared class");
  return it - classes.begin();
}

std::vector<ImageRecord> DatasetManifest::split_records(Split s) const {
  std::vector<ImageRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [s](const ImageRecord& r) { return r.split == s; });
  return out;
}

std::size_t ClassHistogram::at(const std::string& label) const {
  auto it = counts.find(label);
  return it == counts.end() ? 0 : it->second;
}

std::size_t ClassHistogram::total() const {
  std::size_t n = 0;
  for (const auto& [_, c] : counts) n += c;
  return n;
}

std::vector<std::string> task_classes(Task task, const KaokoreCodes& codes) {
  std::vector<std::string> out;
  switch (task) {
    case Task::status: out = codes.status; break;
    case Task::gender: out = codes.gender; break;
    case Task::combined8:
      for (const auto& s : codes.status)
        for (const auto& g : codes.gender) out.push_back(s + "_" + g);
      break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::size_t column_of(const std::vector<std::string>& header, const std::string& name, const fs::path& file,
                      bool required = true) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    if (!required) return header.size();
    throw IngestionError(file.string() + ": missing column '" + name + "'");
  }
  return static_cast<std::size_t>(it - header.begin());
}

std::size_t parse_code(const std::string& field, std::size_t limit, const std::string& what, std::size_t row) {
  std::size_t code = 0;
  try {
    std::size_t used = 0;
    long v = std::stol(field, &used);
    if (used != field.size() || v < 0) throw std::invalid_argument("bad");
    code = static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ValidationError("row " + std::to_string(row) + ": " + what + " value '" + field + "' is not a label code");
  }
  if (code >= limit) {
    throw ValidationError("row " + std::to_string(row) + ": unknown " + what + " code " + field);
  }
  return code;
}

DatasetManifest load_kaokore(const fs::path& root, Task task, const KaokoreCodes& codes) {
  const auto labels = root / "labels.csv";
  const auto images = root / "images_256";
  if (!fs::exists(labels)) throw IngestionError("missing labels file: " + labels.string());
  if (!fs::is_directory(images)) throw IngestionError("missing images directory: " + images.string());

  auto rows = read_csv(labels);
  if (rows.empty()) throw IngestionError(labels.string() + ": empty file, expected header image,gender,status");
  const auto& header = rows.front();
  const auto c_image = column_of(header, "image", labels);
  const auto c_gender = column_of(header, "gender", labels);
  const auto c_status = column_of(header, "status", labels);
  const auto c_set = column_of(header, "set", labels, false);

  DatasetManifest m;
  m.root = root;
  m.task = task;
  m.classes = task_classes(task, codes);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() < header.size()) {
      throw ValidationError("row " + std::to_string(i) + ": expected " + std::to_string(header.size()) + " fields");
    }
    const auto g = codes.gender[parse_code(row[c_gender], codes.gender.size(), "gender", i)];
    const auto s = codes.status[parse_code(row[c_status], codes.status.size(), "status", i)];
    ImageRecord r;
    r.relative_path = (fs::path("images_256") / row[c_image]).string();
    switch (task) {
      case Task::status: r.class_label = s; break;
      case Task::gender: r.class_label = g; break;
      case Task::combined8: r.class_label = s + "_" + g; break;
    }
    r.split = c_set < row.size() ? parse_split(row[c_set]) : Split::train;
    if (!fs::exists(m.resolve(r))) {
      throw ValidationError("row " + std::to_string(i) + ": image file not found: " + m.resolve(r).string());
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest load_generic(const fs::path& root) {
  const auto file = root / "manifest.csv";
  if (!fs::exists(file)) throw IngestionError("missing manifest file: " + file.string());
  auto rows = read_csv(file);
  if (rows.empty()) throw IngestionError(file.string() + ": empty file, expected header relative_path,label,split");
  const auto& header = rows.front();
  if (header != std::vector<std::string>{"relative_path", "label", "split"}) {
    throw IngestionError(file.string() + ": header must be relative_path,label,split");
  }
  DatasetManifest m;
  m.root = root;
  std::set<std::string> labels;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != 3) throw ValidationError("row " + std::to_string(i) + ": expected 3 fields");
    if (row[1].empty()) throw ValidationError("row " + std::to_string(i) + ": empty label");
    ImageRecord r;
    r.relative_path = row[0];
    r.class_label = row[1];
    try {
      r.split = parse_split(row[2]);
    } catch (const ValidationError& e) {
      throw ValidationError("row " + std::to_string(i) + ": " + e.what());
    }
    if (!fs::exists(m.resolve(r))) {
      throw ValidationError("row " + std::to_string(i) + ": image file not found: " + m.resolve(r).string());
    }
    labels.insert(r.class_label);
    m.records.push_back(std::move(r));
  }
  m.classes.assign(labels.begin(), labels.end());
  return m;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root, ManifestFormat format, Task task, const KaokoreCodes& codes) {
  if (!fs::is_directory(root)) throw IngestionError("dataset root does not exist: " + root.string());
  return format == ManifestFormat::kaokore ? load_kaokore(root, task, codes) : load_generic(root);
}

ClassHistogram class_histogram(const DatasetManifest& manifest) {
  ClassHistogram h;
  for (const auto& c : manifest.classes) h.counts[c] = 0;
  for (const auto& r : manifest.records) {
    if (r.split == Split::train) ++h.counts[r.class_label];
  }
  return h;
}

ClassPartition partition_classes(const ClassHistogram& hist, const std::vector<std::string>& class_order) {
  if (class_order.size() < 2) throw ConfigError("partitioning needs at least 2 classes");
  std::vector<std::string> ranked = class_order;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](const std::string& a, const std::string& b) { return hist.at(a) > hist.at(b); });
  const auto n_rep = (ranked.size() + 1) / 2;
  ClassPartition p;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    (i < n_rep ? p.representative : p.rare).insert(ranked[i]);
  }
  return p;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& f) {
  const std::array<double, 3> frac{f.train, f.val, f.test};
  for (double x : frac) {
    if (!(x >= 0.0)) throw ConfigError("split fractions must be non-negative");
  }
  if (std::abs(frac[0] + frac[1] + frac[2] - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = frac[i] * static_cast<double>(n);
    // guard against 0.7*10 = 6.999...
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    // quantised so that equal remainders tie exactly and keep split order
    rem[i] = std::round((exact - static_cast<double>(sizes[i])) * 1e9);
    assigned += sizes[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

DatasetManifest stratified_split(const DatasetManifest& base, const SplitFractions& fractions, std::uint64_t seed,
                                 std::vector<std::string>* warnings) {
  DatasetManifest out = base;
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < out.records.size(); ++i) by_class[out.records[i].class_label].push_back(i);

  const int nonzero = (fractions.train > 0) + (fractions.val > 0) + (fractions.test > 0);
  std::mt19937_64 gen(seed);
  for (auto& [label, idx] : by_class) {
    const auto sizes = split_sizes(idx.size(), fractions);
    if (idx.size() < static_cast<std::size_t>(nonzero) && warnings) {
      warnings->push_back("class '" + label + "' has " + std::to_string(idx.size()) + " records for " +
                          std::to_string(nonzero) + " splits; some splits are empty");
    }
    std::shuffle(idx.begin(), idx.end(), gen);
    std::size_t k = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < sizes[static_cast<std::size_t>(s)]; ++j, ++k) {
        out.records[idx[k]].split = static_cast<Split>(s);
      }
    }
  }
  if (out.classes.empty()) {
    for (const auto& [label, _] : by_class) out.classes.push_back(label);
  }
  return out;
}

std::vector<ImagePair> sample_pairs(const DatasetManifest& manifest, const std::string& class_label, std::size_t n,
                                    std::uint64_t seed) {
  std::vector<const ImageRecord*> pool;
  for (const auto& r : manifest.records) {
    if (r.split == Split::train && r.class_label == class_label) pool.push_back(&r);
  }
  if (pool.empty()) throw SamplingError("class '" + class_label + "' has no train records to sample from");
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<ImagePair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = pick(gen);
    const auto s = pick(gen);
    out.emplace_back(*pool[c], *pool[s]);
  }
  return out;
}

LabeledImages load_split(const DatasetManifest& manifest, Split split, int image_size, int workers) {
  LabeledImages out;
  out.records = manifest.split_records(split);
  std::vector<fs::path> paths;
  std::vector<std::int64_t> labels;
  for (const auto& r : out.records) {
    paths.push_back(manifest.resolve(r));
    labels.push_back(manifest.class_index(r.class_label));
  }
  out.images = load_images(paths, image_size, workers);
  out.labels = torch::tensor(labels, torch::kInt64);
  return out;
}

void write_generic_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ostringstream os;
  os << "relative_path,label,split\n";
  for (const auto& r : manifest.records) os << r.relative_path << ',' << r.class_label << ',' << to_string(r.split) << '\n';
  write_text(path, os.str());
}

}  // namespace artclf::corpus
