#include "support/fixtures.hpp"

#include <atomic>
#include <random>

#include "artclf/image_io.hpp"

namespace artclf::testing {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          ("artclf_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

torch::Tensor central_difference(const std::function<double()>& f, torch::Tensor param, double h) {
  torch::NoGradGuard no_grad;
  auto flat = param.view({-1});
  auto grad = torch::zeros_like(flat);
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double up = f();
    flat[i] = orig - h;
    const double down = f();
    flat[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad.view(param.sizes());
}

double relative_error(const torch::Tensor& a, const torch::Tensor& b, double floor) {
  const double diff = (a - b).norm().item<double>();
  const double scale = std::max({a.norm().item<double>(), b.norm().item<double>(), floor});
  return diff / scale;
}

void write_solid_png(const std::filesystem::path& path, int size, float r, float g, float b) {
  auto img = torch::empty({3, size, size});
  img[0].fill_(r);
  img[1].fill_(g);
  img[2].fill_(b);
  save_png(img, path);
}

}  // namespace artclf::testing
