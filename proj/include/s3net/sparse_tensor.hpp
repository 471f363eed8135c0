#pragma once

#include "s3net/coordinates.hpp"
#include "s3net/types.hpp"

#include <vector>

namespace s3net {

/// Coordinates plus a row-aligned feature matrix at a given tensor stride.
template <typename Scalar>
struct SparseTensor {
  CoordinateMapPtr coords;
  Matrix<Scalar> features;
  int stride = 1;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index channels() const { return features.cols(); }

  /// Throws ShapeError if the row count, stride alignment or finiteness invariant is broken.
  void validate() const;
};

template <typename Scalar>
struct QuantizedCloud {
  SparseTensor<Scalar> tensor;
  std::vector<int> point_to_row;  // voxel row of every input point
};

/// Voxelizes points (one row of `positions` per point, meters) with coordinate
/// floor(p / voxel_size). Points sharing a voxel are merged into the mean of their features.
/// Voxel rows are sorted by coordinate, so the result does not depend on point order.
template <typename Scalar>
QuantizedCloud<Scalar> quantize_points(const Eigen::Ref<const Eigen::MatrixX3d>& positions,
                                       const Matrix<Scalar>& features, double voxel_size, int batch = 0);

/// Stacks stride-1 tensors into one tensor; tensor b gets batch index b.
/// `row_offsets` receives the first row of each input in the result.
template <typename Scalar>
SparseTensor<Scalar> concatenate_batches(const std::vector<SparseTensor<Scalar>>& parts,
                                         std::vector<Eigen::Index>* row_offsets = nullptr);

}  // namespace s3net
