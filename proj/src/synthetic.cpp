#include "artclf/synthetic.hpp"

#include <cmath>
#include <numbers>

#include "artclf/error.hpp"
#include "artclf/image_io.hpp"

namespace artclf::synthetic {

torch::Tensor render_texture(std::size_t class_index, std::size_t num_classes, int size, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double theta = std::numbers::pi * static_cast<double>(class_index) / static_cast<double>(num_classes) +
                       (unit(gen) - 0.5) * 0.15;
  const double freq = 3.0 + 3.0 * unit(gen);
  const double phase = 2.0 * std::numbers::pi * unit(gen);
  const double noise_level = 0.04 + 0.08 * unit(gen);
  std::array<double, 3> fg{}, bg{};
  for (int c = 0; c < 3; ++c) {
    fg[static_cast<std::size_t>(c)] = unit(gen);
    bg[static_cast<std::size_t>(c)] = unit(gen);
  }

  auto coords = torch::arange(size, torch::kDouble).div(static_cast<double>(size));
  auto ys = coords.view({size, 1}).expand({size, size});
  auto xs = coords.view({1, size}).expand({size, size});
  auto wave = torch::sin((xs * std::cos(theta) + ys * std::sin(theta)) * (2.0 * std::numbers::pi * freq) + phase)
                  .mul(0.5)
                  .add(0.5);

  // Noise comes from the same generator so the whole image is seed-determined.
  std::normal_distribution<double> normal(0.0, noise_level);
  std::vector<double> noise(static_cast<std::size_t>(3 * size * size));
  for (auto& v : noise) v = normal(gen);
  auto noise_t = torch::tensor(noise, torch::kDouble).view({3, size, size});

  auto img = torch::empty({3, size, size}, torch::kDouble);
  for (int c = 0; c < 3; ++c) {
    const auto idx = static_cast<std::size_t>(c);
    img[c] = wave * fg[idx] + (1.0 - wave) * bg[idx];
  }
  return (img + noise_t).clamp(0.0, 1.0).to(torch::kFloat);
}

corpus::DatasetManifest write_texture_dataset(const std::filesystem::path& root, const TextureDatasetSpec& spec) {
  if (spec.classes.size() != spec.counts.size()) throw ConfigError("texture spec: classes and counts differ in length");
  if (spec.classes.size() < 2) throw ConfigError("texture spec: need at least 2 classes");
  std::mt19937_64 gen(spec.seed);
  corpus::DatasetManifest m;
  m.root = root;
  m.classes = spec.classes;
  std::sort(m.classes.begin(), m.classes.end());
  for (std::size_t k = 0; k < spec.classes.size(); ++k) {
    for (std::size_t i = 0; i < spec.counts[k]; ++i) {
      auto img = render_texture(k, spec.classes.size(), spec.image_size, gen);
      char name[32];
      std::snprintf(name, sizeof(name), "%05zu.png", i);
      corpus::ImageRecord r;
      r.relative_path = (std::filesystem::path("images") / spec.classes[k] / name).string();
      r.class_label = spec.classes[k];
      save_png(img, m.resolve(r));
      m.records.push_back(std::move(r));
    }
  }
  m = corpus::stratified_split(m, spec.fractions, spec.seed);
  corpus::write_generic_manifest(m, root / "manifest.csv");
  return corpus::load_manifest(root, corpus::ManifestFormat::generic_csv, corpus::Task::status);
}

}  // namespace artclf::synthetic
