#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "artclf/corpus.hpp"

namespace artclf::synthetic {

// Procedural texture datasets for offline runs. Each class is a family of
// oriented gratings; colours, frequency, phase and noise vary per image, so
// class identity lives in structure while "style" (palette, contrast) is
// free to change under stylization.

struct TextureDatasetSpec {
  std::vector<std::string> classes{"grating_a", "grating_b", "grating_c", "grating_d"};
  std::vector<std::size_t> counts{400, 200, 100, 50};
  int image_size = 64;
  std::uint64_t seed = 0;
  corpus::SplitFractions fractions{0.7, 0.15, 0.15};
};

/// Render one [3,size,size] texture of class `class_index` out of `num_classes`.
torch::Tensor render_texture(std::size_t class_index, std::size_t num_classes, int size, std::mt19937_64& gen);

/// Write PNGs under `<root>/images/<class>/` and a generic `manifest.csv`,
/// stratified-split by `spec.fractions`. Returns the loaded manifest.
corpus::DatasetManifest write_texture_dataset(const std::filesystem::path& root, const TextureDatasetSpec& spec);

}  // namespace artclf::synthetic
