#include <algorithm>
#include <numeric>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "artclf/bench.hpp"
#include "artclf/error.hpp"
#include "artclf/image_io.hpp"

namespace artclf::bench {

// ---------------------------------------------------------------- metrics

MetricsReport metrics_from_confusion(const std::vector<std::vector<std::int64_t>>& confusion,
                                     const std::vector<std::string>& classes) {
  const auto c = classes.size();
  if (c == 0) throw EvaluationError("no classes");
  if (confusion.size() != c) throw EvaluationError("confusion matrix does not match the class count");
  for (const auto& row : confusion)
    if (row.size() != c) throw EvaluationError("confusion matrix must be square");

  MetricsReport r;
  r.classes = classes;
  r.confusion = confusion;
  std::int64_t trace = 0;
  for (std::size_t i = 0; i < c; ++i) {
    trace += confusion[i][i];
    for (std::size_t j = 0; j < c; ++j) r.total += confusion[i][j];
  }
  if (r.total == 0) throw EvaluationError("cannot evaluate an empty split");
  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.total);

  auto ratio = [&](std::int64_t num, std::int64_t den, const std::string& tag) {
    if (den == 0) {
      r.zero_division.push_back(tag);
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  for (std::size_t k = 0; k < c; ++k) {
    std::int64_t predicted = 0, actual = 0;
    for (std::size_t i = 0; i < c; ++i) {
      predicted += confusion[i][k];
      actual += confusion[k][i];
    }
    const auto tp = confusion[k][k];
    const double p = ratio(tp, predicted, classes[k] + ".precision");
    const double rc = ratio(tp, actual, classes[k] + ".recall");
    double f = 0.0;
    if (p + rc > 0.0) {
      f = 2.0 * p * rc / (p + rc);
    } else {
      r.zero_division.push_back(classes[k] + ".f1");
    }
    r.precision.push_back(p);
    r.recall.push_back(rc);
    r.f1.push_back(f);
    r.support.push_back(actual);
  }
  const double n = static_cast<double>(c);
  r.macro_precision = std::accumulate(r.precision.begin(), r.precision.end(), 0.0) / n;
  r.macro_recall = std::accumulate(r.recall.begin(), r.recall.end(), 0.0) / n;
  r.macro_f1 = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / n;
  return r;
}

MetricsReport compute_metrics(const torch::Tensor& predicted, const torch::Tensor& labels,
                              const std::vector<std::string>& classes) {
  if (predicted.numel() != labels.numel()) throw EvaluationError("prediction and label counts differ");
  const auto c = static_cast<std::int64_t>(classes.size());
  std::vector<std::vector<std::int64_t>> confusion(classes.size(), std::vector<std::int64_t>(classes.size(), 0));
  auto p = predicted.to(torch::kInt64).contiguous();
  auto l = labels.to(torch::kInt64).contiguous();
  const auto* pp = p.data_ptr<std::int64_t>();
  const auto* lp = l.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < p.numel(); ++i) {
    if (pp[i] < 0 || pp[i] >= c || lp[i] < 0 || lp[i] >= c) throw EvaluationError("class index out of range");
    ++confusion[static_cast<std::size_t>(lp[i])][static_cast<std::size_t>(pp[i])];
  }
  return metrics_from_confusion(confusion, classes);
}

MetricsReport evaluate(attnclf::AttentionClassifier& model, const corpus::LabeledImages& split,
                       const std::vector<std::string>& classes, int batch_size) {
  if (split.size() == 0) throw EvaluationError("cannot evaluate an empty split");
  auto logits = optim::predict(model, split.images, batch_size);
  return compute_metrics(logits.argmax(1), split.labels, classes);
}

json to_json(const MetricsReport& r) {
  json per_class = json::object();
  for (std::size_t k = 0; k < r.classes.size(); ++k) {
    per_class[r.classes[k]] = {
        {"precision", r.precision[k]}, {"recall", r.recall[k]}, {"f1", r.f1[k]}, {"support", r.support[k]}};
  }
  return {{"accuracy", r.accuracy},
          {"macro", {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}}},
          {"per_class", per_class},
          {"classes", r.classes},
          {"confusion", r.confusion},
          {"total", r.total},
          {"zero_division", r.zero_division}};
}

MetricsReport metrics_from_json(const json& j) {
  return metrics_from_confusion(j.at("confusion").get<std::vector<std::vector<std::int64_t>>>(),
                                j.at("classes").get<std::vector<std::string>>());
}

// ---------------------------------------------------------------- confidence ranking

ConfidenceRanking confidence_ranking(attnclf::AttentionClassifier& model, const corpus::LabeledImages& split,
                                     std::size_t k, const attnclf::LossConfig& loss, int batch_size) {
  if (split.size() == 0) throw EvaluationError("cannot rank an empty split");
  ConfidenceRanking out;
  const auto n = static_cast<std::size_t>(split.size());
  if (k > n) {
    out.warnings.push_back("k=" + std::to_string(k) + " exceeds the split size " + std::to_string(n) + "; clipped");
    k = n;
  }
  auto logits = optim::predict(model, split.images, batch_size);
  auto losses = attnclf::focal_loss_per_sample(logits, split.labels, loss).to(torch::kFloat64).contiguous();
  auto predicted = logits.argmax(1).contiguous();
  std::vector<RankedSample> all(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<std::int64_t>(i);
    all[i] = {i, i < split.records.size() ? split.records[i] : corpus::ImageRecord{}, losses[ii].item<double>(),
              predicted[ii].item<std::int64_t>(), split.labels[ii].item<std::int64_t>()};
  }
  // total order on (loss, index): most confident first
  std::sort(all.begin(), all.end(), [](const RankedSample& a, const RankedSample& b) {
    return a.loss != b.loss ? a.loss < b.loss : a.index < b.index;
  });
  out.most_confident.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
  out.least_confident.assign(all.rbegin(), all.rbegin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

json to_json(const ConfidenceRanking& ranking, const std::vector<std::string>& classes) {
  auto list = [&](const std::vector<RankedSample>& xs) {
    json a = json::array();
    for (const auto& s : xs) {
      a.push_back({{"index", s.index},
                   {"path", s.record.relative_path},
                   {"loss", s.loss},
                   {"predicted", classes.at(static_cast<std::size_t>(s.predicted))},
                   {"true", classes.at(static_cast<std::size_t>(s.truth))}});
    }
    return a;
  };
  return {{"least_confident", list(ranking.least_confident)},
          {"most_confident", list(ranking.most_confident)},
          {"warnings", ranking.warnings}};
}

// ---------------------------------------------------------------- heatmaps

torch::Tensor normalized_heatmap(const torch::Tensor& map, std::int64_t height, std::int64_t width) {
  if (map.dim() != 2) throw ShapeError("attention map must be [h,w]");
  auto up = torch::nn::functional::interpolate(
                map.detach().to(torch::kFloat32).unsqueeze(0).unsqueeze(0),
                torch::nn::functional::InterpolateFuncOptions()
                    .size(std::vector<std::int64_t>{height, width})
                    .mode(torch::kBilinear)
                    .align_corners(false))
                .squeeze(0)
                .squeeze(0);
  const auto lo = up.min().item<float>();
  const auto hi = up.max().item<float>();
  // relative test: softmax maps are tiny, so an absolute epsilon would not do
  if (!(hi - lo > 1e-6f * std::max(std::abs(hi), 1e-30f))) return torch::full({height, width}, 0.5f);
  return (up - lo) / (hi - lo);
}

cv::Mat overlay_heatmap(const torch::Tensor& image, const torch::Tensor& heat) {
  cv::Mat base = to_bgr8(image);
  auto h8 = (heat.clamp(0, 1) * 255.0).round().to(torch::kUInt8).contiguous();
  cv::Mat gray(static_cast<int>(h8.size(0)), static_cast<int>(h8.size(1)), CV_8UC1, h8.data_ptr<std::uint8_t>());
  cv::Mat colored;
  cv::applyColorMap(gray, colored, cv::COLORMAP_JET);
  cv::Mat out;
  cv::addWeighted(base, 0.5, colored, 0.5, 0.0, out);
  return out;
}

std::vector<fs::path> export_heatmaps(attnclf::AttentionClassifier& model, const torch::Tensor& images,
                                      const std::vector<std::string>& ids, const fs::path& out_dir) {
  if (images.dim() != 4) throw ShapeError("expected an image batch [N,3,H,W]");
  if (static_cast<std::size_t>(images.size(0)) != ids.size()) throw InputError("one id per image is required");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create heatmap directory " + out_dir.string());

  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  auto out = model->forward(images);
  model->train(was_training);

  const auto h = images.size(2), w = images.size(3);
  std::vector<fs::path> written;
  auto write = [&](const fs::path& path, const cv::Mat& mat) {
    std::vector<uchar> bytes;
    if (!cv::imencode(".png", mat, bytes)) throw IoError("PNG encoding failed for " + path.string());
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("cannot write " + path.string());
    written.push_back(path);
  };
  for (std::int64_t i = 0; i < images.size(0); ++i) {
    const auto& id = ids[static_cast<std::size_t>(i)];
    std::vector<cv::Mat> row{to_bgr8(images[i])};
    for (std::size_t t = 0; t < out.attention.maps.size(); ++t) {
      auto overlay = overlay_heatmap(images[i], normalized_heatmap(out.attention.maps[t][i], h, w));
      write(out_dir / (id + "_tap" + std::to_string(t) + ".png"), overlay);
      row.push_back(overlay);
    }
    cv::Mat montage;
    cv::hconcat(row, montage);
    write(out_dir / (id + "_montage.png"), montage);
  }
  return written;
}

}  // namespace artclf::bench
