#include "artclf/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "artclf/error.hpp"
#include "artclf/util.hpp"

namespace artclf {

cv::Mat to_bgr8(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw ShapeError("expected a [3,H,W] image tensor");
  }
  auto hwc = image.detach()
                 .to(torch::kCPU, torch::kFloat)
                 .clamp(0.0, 1.0)
                 .mul(255.0)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .flip({2})  // RGB -> BGR
                 .contiguous();
  cv::Mat mat(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr());
  return mat.clone();
}

torch::Tensor from_bgr8(const cv::Mat& mat) {
  cv::Mat rgb;
  if (mat.channels() == 1) {
    cv::cvtColor(mat, rgb, cv::COLOR_GRAY2RGB);
  } else if (mat.channels() == 4) {
    cv::cvtColor(mat, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(mat, rgb, cv::COLOR_BGR2RGB);
  }
  if (rgb.depth() != CV_8U) rgb.convertTo(rgb, CV_8U);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat).div(255.0).contiguous();
}

torch::Tensor load_image(const std::filesystem::path& path, std::optional<int> size) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (mat.empty()) throw IoError("cannot decode image: " + path.string());
  if (size && (mat.rows != *size || mat.cols != *size)) {
    cv::Mat resized;
    cv::resize(mat, resized, cv::Size(*size, *size), 0, 0, cv::INTER_LINEAR);
    mat = resized;
  }
  return from_bgr8(mat);
}

torch::Tensor load_images(const std::vector<std::filesystem::path>& paths, int size, int workers) {
  auto out = torch::empty({static_cast<std::int64_t>(paths.size()), 3, size, size});
  parallel_for(paths.size(), workers, [&](std::size_t i) {
    out[static_cast<std::int64_t>(i)].copy_(load_image(paths[i], size));
  });
  return out;
}

void save_png(const torch::Tensor& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), to_bgr8(image));
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

}  // namespace artclf
