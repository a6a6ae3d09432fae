#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace artclf {

// Raster images travel through the toolkit as float tensors of shape
// [3, H, W], RGB, values nominally in [0, 1].

/// Decode an image file. When `size` is set the image is resized to
/// size x size (bilinear). Throws IoError if the file cannot be decoded.
torch::Tensor load_image(const std::filesystem::path& path, std::optional<int> size = std::nullopt);

/// Decode many images into one [N, 3, size, size] batch, fanning the decode
/// out over `workers` threads.
torch::Tensor load_images(const std::vector<std::filesystem::path>& paths, int size, int workers = 8);

/// Clamp to [0, 1] and write as 8-bit RGB PNG. Throws IoError on failure.
void save_png(const torch::Tensor& image, const std::filesystem::path& path);

cv::Mat to_bgr8(const torch::Tensor& image);
torch::Tensor from_bgr8(const cv::Mat& mat);

}  // namespace artclf
