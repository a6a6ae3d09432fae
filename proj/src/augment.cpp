#include "artclf/augment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "artclf/image_io.hpp"
#include "artclf/util.hpp"

namespace artclf::augment {

std::size_t scaled_count(double p, std::size_t count) {
  // the small bias keeps exact halves (0.5 after 0.1*5) from rounding down
  return static_cast<std::size_t>(std::floor(p * static_cast<double>(count) + 0.5 + 1e-9));
}

std::size_t AugmentationPlan::total() const {
  std::size_t n = 0;
  for (const auto& [_, c] : per_class_counts) n += c;
  return n;
}

AugmentationPlan plan_counts(const corpus::ClassHistogram& hist, const corpus::ClassPartition& partition, double p1,
                             double p2, std::uint64_t seed, bool allow_above_one) {
  for (double p : {p1, p2}) {
    if (!std::isfinite(p) || p < 0.0) throw ConfigError("augmentation proportions must be non-negative");
    if (p > 1.0 && !allow_above_one) {
      throw ConfigError("augmentation proportion " + std::to_string(p) + " exceeds 1 (set allow_above_one to permit)");
    }
  }
  AugmentationPlan plan;
  plan.p1 = p1;
  plan.p2 = p2;
  plan.partition = partition;
  plan.seed = seed;
  for (const auto& [label, count] : hist.counts) {
    plan.per_class_counts[label] = scaled_count(partition.is_representative(label) ? p1 : p2, count);
  }
  return plan;
}

std::map<std::string, std::size_t> AugmentedManifest::class_counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& r : records) ++out[r.class_label];
  return out;
}

std::uint64_t class_seed(std::uint64_t seed, const std::string& label) { return derive_seed(seed, "augment/" + label); }

Stylizer adain_stylizer(stylegen::VggEncoder encoder, const stylegen::DecoderState& decoder,
                        const corpus::DatasetManifest& manifest, const MaterializeOptions& options) {
  return [encoder, decoder, root = manifest.root, options](const corpus::ImagePair& pair) mutable {
    auto content = load_image(root / pair.first.relative_path, options.image_size);
    auto style = load_image(root / pair.second.relative_path, options.image_size);
    return stylegen::stylize(encoder, {content, style, options.blend}, decoder);
  };
}

namespace {

struct Job {
  std::string label;
  std::size_t index = 0;
  corpus::ImagePair pair;
  std::uint64_t seed = 0;
  std::string failure;
  corpus::ImageRecord record;
  bool written = false;
};

std::string file_name(std::size_t index, const corpus::ImagePair& pair) {
  char prefix[32];
  std::snprintf(prefix, sizeof prefix, "%05zu", index);
  return std::string(prefix) + "_" + fs::path(pair.first.relative_path).stem().string() + "_" +
         fs::path(pair.second.relative_path).stem().string() + ".png";
}

AugmentedManifest collect(const fs::path& out_dir, const std::vector<Job>& jobs, double blend, bool written_only) {
  AugmentedManifest m;
  m.out_dir = out_dir;
  for (const auto& j : jobs) {
    if (written_only && !j.written) continue;
    m.records.push_back(j.record);
    m.provenance.push_back({j.pair.first, j.pair.second, blend, j.seed});
    if (!j.failure.empty()) m.failures.push_back(j.failure);
  }
  return m;
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

AugmentedManifest materialize(const AugmentationPlan& plan, const corpus::DatasetManifest& manifest,
                              const Stylizer& stylizer, const fs::path& out_dir, const MaterializeOptions& options) {
  if (!(options.blend >= 0.0 && options.blend <= 1.0)) throw InputError("blend must lie in [0,1]");
  const auto root = fs::absolute(out_dir);
  std::vector<Job> jobs;
  for (const auto& [label, count] : plan.per_class_counts) {
    if (count == 0) continue;
    if (std::find(manifest.classes.begin(), manifest.classes.end(), label) == manifest.classes.end()) {
      throw ValidationError("plan class '" + label + "' is not a class of the dataset");
    }
    const auto seed = class_seed(plan.seed, label);
    auto pairs = corpus::sample_pairs(manifest, label, count, seed);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      Job j;
      j.label = label;
      j.index = i;
      j.pair = std::move(pairs[i]);
      j.seed = seed;
      jobs.push_back(std::move(j));
    }
  }
  if (jobs.empty()) {
    AugmentedManifest empty;
    empty.out_dir = root;
    return empty;
  }

  try {
    fs::create_directories(root);
    for (const auto& [label, count] : plan.per_class_counts) {
      if (count > 0) fs::create_directories(root / label);
    }
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("cannot create augmentation directory: ") + e.what());
  }

  // Each worker owns its job slot; results are read only after the join.
  try {
    parallel_for(jobs.size(), options.workers, [&](std::size_t k) {
      Job& job = jobs[k];
      torch::Tensor image;
      try {
        image = stylizer(job.pair);
      } catch (const std::exception& first) {
        job.failure = job.label + "/" + std::to_string(job.index) + ": " + first.what();
        job.seed = derive_seed(job.seed, "retry/" + std::to_string(job.index));
        job.pair = corpus::sample_pairs(manifest, job.label, 1, job.seed).front();
        try {
          image = stylizer(job.pair);
        } catch (const std::exception& second) {
          throw AugmentError("stylization failed twice for class '" + job.label + "' sample " +
                             std::to_string(job.index) + ": " + second.what());
        }
      }
      const auto path = root / job.label / file_name(job.index, job.pair);
      save_png(image, path);
      job.record = {path.string(), job.label, corpus::Split::train, corpus::Origin::stylized};
      job.written = true;
    });
  } catch (const IoError& e) {
    throw PartialOutputError(e.what(), collect(root, jobs, options.blend, true));
  }

  auto out = collect(root, jobs, options.blend, false);
  try {
    write_provenance(out, root / "provenance.csv");
  } catch (const IoError& e) {
    throw PartialOutputError(e.what(), out);
  }
  return out;
}

AugmentedManifest materialize(const AugmentationPlan& plan, const corpus::DatasetManifest& manifest,
                              stylegen::VggEncoder encoder, const stylegen::DecoderState& decoder,
                              const fs::path& out_dir, const MaterializeOptions& options) {
  return materialize(plan, manifest, adain_stylizer(std::move(encoder), decoder, manifest, options), out_dir, options);
}

AugmentedManifest take_prefix(const AugmentedManifest& pool, const AugmentationPlan& plan) {
  AugmentedManifest out;
  out.out_dir = pool.out_dir;
  std::map<std::string, std::size_t> taken;
  for (std::size_t i = 0; i < pool.records.size(); ++i) {
    const auto& label = pool.records[i].class_label;
    auto want = plan.per_class_counts.find(label);
    if (want == plan.per_class_counts.end() || taken[label] >= want->second) continue;
    ++taken[label];
    out.records.push_back(pool.records[i]);
    out.provenance.push_back(pool.provenance[i]);
  }
  for (const auto& [label, count] : plan.per_class_counts) {
    if (taken[label] < count) {
      throw ConfigError("stylized pool has " + std::to_string(taken[label]) + " samples of class '" + label +
                        "', plan needs " + std::to_string(count));
    }
  }
  return out;
}

corpus::DatasetManifest merge(const corpus::DatasetManifest& original, const AugmentedManifest& augmented) {
  auto known = [&](const std::string& label) {
    return std::find(original.classes.begin(), original.classes.end(), label) != original.classes.end();
  };
  corpus::DatasetManifest out = original;
  for (std::size_t i = 0; i < augmented.records.size(); ++i) {
    auto r = augmented.records[i];
    if (!known(r.class_label)) {
      throw ValidationError("stylized record " + r.relative_path + " has class '" + r.class_label +
                            "' outside the original classes");
    }
    if (i < augmented.provenance.size()) {
      const auto& p = augmented.provenance[i];
      if (p.content.class_label != r.class_label || p.style.class_label != r.class_label) {
        throw ValidationError("stylized record " + r.relative_path + " mixes classes");
      }
    }
    r.split = corpus::Split::train;
    r.origin = corpus::Origin::stylized;
    out.records.push_back(std::move(r));
  }
  return out;
}

void write_provenance(const AugmentedManifest& augmented, const fs::path& path) {
  std::ostringstream os;
  os << "stylized_path,content_path,style_path,blend,seed\n";
  for (std::size_t i = 0; i < augmented.records.size(); ++i) {
    const auto& p = augmented.provenance.at(i);
    const auto rel = fs::path(augmented.records[i].relative_path).lexically_relative(augmented.out_dir);
    os << rel.generic_string() << ',' << p.content.relative_path << ',' << p.style.relative_path << ','
       << format_double(p.blend) << ',' << p.seed << '\n';
  }
  write_text(path, os.str());
}

AugmentedManifest read_provenance(const fs::path& out_dir) {
  const auto root = fs::absolute(out_dir);
  const auto file = root / "provenance.csv";
  if (!fs::exists(file)) throw IngestionError("missing provenance file: " + file.string());
  auto rows = read_csv(file);
  if (rows.empty() || rows[0] != std::vector<std::string>{"stylized_path", "content_path", "style_path", "blend", "seed"}) {
    throw IngestionError("provenance.csv has an unexpected header");
  }
  AugmentedManifest m;
  m.out_dir = root;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != 5) throw IngestionError("provenance.csv row " + std::to_string(i) + " has wrong arity");
    const fs::path rel(row[0]);
    const auto label = rel.parent_path().generic_string();
    const auto abs = root / rel;
    if (!fs::exists(abs)) throw IngestionError("stylized image missing: " + abs.string());
    m.records.push_back({abs.string(), label, corpus::Split::train, corpus::Origin::stylized});
    Provenance p;
    p.content = {row[1], label, corpus::Split::train, corpus::Origin::original};
    p.style = {row[2], label, corpus::Split::train, corpus::Origin::original};
    try {
      p.blend = std::stod(row[3]);
      p.seed = std::stoull(row[4]);
    } catch (const std::exception&) {
      throw IngestionError("provenance.csv row " + std::to_string(i) + " has malformed numbers");
    }
    m.provenance.push_back(std::move(p));
  }
  return m;
}

}  // namespace artclf::augment
