#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace s3net {

// Feature storage is row-major: one row per voxel (or point), one column per channel.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Train-id assigned to points that carry no supervision.
inline constexpr int kIgnoreLabel = -1;

/// Raised when input data (files, point clouds, labels) violates its format or preconditions.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised when tensor shapes or coordinate maps disagree between operands.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace s3net
