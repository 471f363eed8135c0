#pragma once

#include "s3net/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace s3net {

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(int class_count = 0);

  int class_count() const { return classes_; }
  std::uint64_t at(int truth, int pred) const { return counts_[index(truth, pred)]; }

  /// Points whose truth is kIgnoreLabel are skipped. Throws std::invalid_argument on
  /// length mismatch or ids outside [0, class_count).
  void add(std::span<const int> predictions, std::span<const int> truth);
  void merge(const ConfusionMatrix& other);

  std::uint64_t total() const;
  /// TP / (TP + FP + FN); empty when the denominator is zero.
  std::optional<double> iou(int cls) const;
  std::vector<std::optional<double>> ious() const;
  /// Mean over classes with a defined IoU (0 if none).
  double miou() const;

private:
  std::size_t index(int truth, int pred) const {
    return static_cast<std::size_t>(truth) * static_cast<std::size_t>(classes_) + static_cast<std::size_t>(pred);
  }

  int classes_;
  std::vector<std::uint64_t> counts_;
};

struct Evaluation {
  ConfusionMatrix confusion;
  std::vector<std::optional<double>> iou;
  double miou = 0.0;
};

Evaluation evaluate(std::span<const int> predictions, std::span<const int> truth, int class_count);

struct AttentionExport {
  std::vector<int> indices;  // highest score first
  std::vector<double> scores;  // min-max normalized row norms, one per row
};

/// Top ceil(fraction * n) rows by feature norm, ties broken toward the lower index.
template <typename Scalar>
AttentionExport export_attention(const Matrix<Scalar>& features, double fraction = 0.02);

/// Newline-separated indices.
void write_attention_indices(const std::filesystem::path& path, std::span<const int> indices);
/// ASCII "x y z score" per selected point.
void write_attention_points(const std::filesystem::path& path, const Eigen::Ref<const Eigen::MatrixX3d>& positions,
                            const AttentionExport& attention);

}  // namespace s3net
