#pragma once

#include "s3net/coordinates.hpp"
#include "s3net/types.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace s3net {

/// Fraction of labeled points per class over a whole training split.
/// Only classes with a non-zero count are stored; absent classes are untrainable.
struct ClassFrequency {
  std::map<int, double> fraction;

  static ClassFrequency from_counts(std::span<const std::uint64_t> counts);
};

/// alpha_c = 1 / sqrt(f_c) per stored class. Throws DataError listing every class with f_c <= 0.
std::map<int, double> class_weights(const ClassFrequency& freqs);

/// Dense alpha vector of length class_count; classes absent from `weights` get 0.
std::vector<double> class_weight_vector(const std::map<int, double>& weights, int class_count);

template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  Matrix<Scalar> grad;  // d value / d logits
};

/// Row-wise log-softmax, max-shifted.
template <typename Scalar>
Matrix<Scalar> log_softmax(const Matrix<Scalar>& logits);

/// Mean over non-ignored rows of -alpha[label] * log softmax(logits)[label].
/// Throws DataError("no supervised points") when every row is ignored.
template <typename Scalar>
LossValue<Scalar> wce_loss(const Matrix<Scalar>& logits, std::span<const int> labels, std::span<const double> alpha);

/// Per-voxel local geometric anisotropy over the 26-neighbourhood (offsets scaled by `stride`).
/// Only occupied, labeled neighbours count toward `occupied` (Phi); `mismatched` (M_LGA) counts
/// those whose class differs from the centre voxel.
struct Anisotropy {
  std::vector<int> mismatched;
  std::vector<int> occupied;

  /// M_LGA / Phi, or 0 when Phi is 0.
  double weight(std::size_t row) const {
    return occupied[row] == 0 ? 0.0 : static_cast<double>(mismatched[row]) / occupied[row];
  }
};

Anisotropy compute_mlga(const CoordinateMap& coords, std::span<const int> labels, int stride = 1);

/// Ground-truth labels and predicted class distributions over one voxel set.
template <typename Scalar>
struct VoxelLabelGrid {
  const CoordinateMap* coords = nullptr;
  std::span<const int> labels;
  Matrix<Scalar> predictions;  // rows sum to 1
  int stride = 1;
};

/// Geo-aware anisotropic loss from probabilities: mean over labeled voxels of
/// weight * -log p[label]. Throws ShapeError if a prediction row does not sum to 1 within 1e-5.
template <typename Scalar>
Scalar geo_loss(const VoxelLabelGrid<Scalar>& grid);

/// Same loss evaluated from logits through a softmax, with its gradient.
template <typename Scalar>
LossValue<Scalar> geo_loss(const Matrix<Scalar>& logits, std::span<const int> labels, const Anisotropy& anisotropy);

struct LossWeights {
  double wce = 0.75;
  double geo = 0.25;
};

template <typename Scalar>
struct TotalLoss {
  LossValue<Scalar> total;
  Scalar wce = 0;
  Scalar geo = 0;
};

/// weights.wce * wce_loss + weights.geo * geo_loss.
template <typename Scalar>
TotalLoss<Scalar> total_loss(const Matrix<Scalar>& logits, std::span<const int> labels, std::span<const double> alpha,
                             const Anisotropy& anisotropy, const LossWeights& weights = {});

}  // namespace s3net
