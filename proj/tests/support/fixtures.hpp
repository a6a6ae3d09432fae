#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace artclf::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// Central finite differences of a scalar function with respect to every
/// element of `param` (modified in place and restored). Independent of
/// autograd: only forward evaluations are used.
torch::Tensor central_difference(const std::function<double()>& f, torch::Tensor param, double h = 1e-4);

/// ||a - b|| / max(||a||, ||b||, floor)
double relative_error(const torch::Tensor& a, const torch::Tensor& b, double floor = 1e-12);

void write_solid_png(const std::filesystem::path& path, int size, float r, float g, float b);

}  // namespace artclf::testing
