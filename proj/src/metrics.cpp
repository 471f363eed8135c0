#include "s3net/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace s3net {

ConfusionMatrix::ConfusionMatrix(int class_count)
    : classes_(class_count), counts_(static_cast<std::size_t>(class_count) * static_cast<std::size_t>(class_count), 0) {
  if (class_count < 0) throw std::invalid_argument("negative class count");
}

void ConfusionMatrix::add(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("prediction count " + std::to_string(predictions.size()) + " differs from label count " +
                                std::to_string(truth.size()));
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kIgnoreLabel) continue;
    if (truth[i] < 0 || truth[i] >= classes_ || predictions[i] < 0 || predictions[i] >= classes_) {
      throw std::invalid_argument("class id out of range at point " + std::to_string(i));
    }
    ++counts_[index(truth[i], predictions[i])];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::optional<double> ConfusionMatrix::iou(int cls) const {
  std::uint64_t row = 0, col = 0;
  for (int k = 0; k < classes_; ++k) {
    row += at(cls, k);
    col += at(k, cls);
  }
  const std::uint64_t tp = at(cls, cls);
  const std::uint64_t denom = row + col - tp;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

std::vector<std::optional<double>> ConfusionMatrix::ious() const {
  std::vector<std::optional<double>> out;
  out.reserve(static_cast<std::size_t>(classes_));
  for (int c = 0; c < classes_; ++c) out.push_back(iou(c));
  return out;
}

double ConfusionMatrix::miou() const {
  double sum = 0.0;
  int included = 0;
  for (const auto& v : ious()) {
    if (!v) continue;
    sum += *v;
    ++included;
  }
  return included == 0 ? 0.0 : sum / included;
}

Evaluation evaluate(std::span<const int> predictions, std::span<const int> truth, int class_count) {
  Evaluation result{ConfusionMatrix(class_count), {}, 0.0};
  result.confusion.add(predictions, truth);
  result.iou = result.confusion.ious();
  result.miou = result.confusion.miou();
  return result;
}

template <typename Scalar>
AttentionExport export_attention(const Matrix<Scalar>& features, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("attention fraction must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(features.rows());
  AttentionExport out;
  out.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.scores[i] = static_cast<double>(features.row(static_cast<Eigen::Index>(i)).norm());
  if (n == 0) return out;

  const auto [lo, hi] = std::minmax_element(out.scores.begin(), out.scores.end());
  const double min = *lo, range = *hi - *lo;
  for (auto& s : out.scores) s = range > 0.0 ? (s - min) / range : 0.0;

  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), [&](int a, int b) {
    const double sa = out.scores[static_cast<std::size_t>(a)], sb = out.scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  });
  order.resize(keep);
  out.indices = std::move(order);
  return out;
}

template AttentionExport export_attention(const Matrix<float>&, double);
template AttentionExport export_attention(const Matrix<double>&, double);

void write_attention_indices(const std::filesystem::path& path, std::span<const int> indices) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (int i : indices) out << i << '\n';
}

void write_attention_points(const std::filesystem::path& path, const Eigen::Ref<const Eigen::MatrixX3d>& positions,
                            const AttentionExport& attention) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.precision(9);
  for (int i : attention.indices) {
    if (i < 0 || i >= positions.rows()) throw std::out_of_range("attention index outside the point set");
    out << positions(i, 0) << ' ' << positions(i, 1) << ' ' << positions(i, 2) << ' '
        << attention.scores[static_cast<std::size_t>(i)] << '\n';
  }
}

}  // namespace s3net
