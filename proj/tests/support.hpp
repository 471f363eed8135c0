#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include "s3net/coordinates.hpp"
#include "s3net/ops.hpp"
#include "s3net/sparse_tensor.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <random>
#include <set>
#include <vector>

namespace s3net::support {

inline Matrix<double> random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix<double> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
  return m;
}

/// Every voxel of an edge^3 cube, in i-major order.
inline CoordinateMapPtr dense_grid(int edge, int batch = 0) {
  std::vector<Coordinate> coords;
  for (int i = 0; i < edge; ++i)
    for (int j = 0; j < edge; ++j)
      for (int k = 0; k < edge; ++k) coords.push_back({batch, i, j, k});
  return std::make_shared<CoordinateMap>(std::move(coords));
}

/// `count` distinct coordinates drawn uniformly from [lo, hi)^3.
inline CoordinateMapPtr random_coords(std::mt19937_64& rng, std::size_t count, int lo, int hi, int batches = 1) {
  std::uniform_int_distribution<int> axis(lo, hi - 1), b(0, batches - 1);
  std::set<Coordinate> seen;
  std::vector<Coordinate> coords;
  while (coords.size() < count) {
    const Coordinate c{b(rng), axis(rng), axis(rng), axis(rng)};
    if (seen.insert(c).second) coords.push_back(c);
  }
  return std::make_shared<CoordinateMap>(std::move(coords));
}

/// Dense zero-padded convolution over an edge^3 volume, evaluated at grid point (i, j, k).
/// `kernel` uses the stacked layout of ConvWeights with lexicographic offsets.
inline RowVector<double> dense_conv_at(const std::vector<Matrix<double>>& volume, int edge, const Matrix<double>& kernel,
                                       int size, int i, int j, int k) {
  const int half = size / 2;
  const Eigen::Index in = kernel.rows() / (size * size * size);
  RowVector<double> out = RowVector<double>::Zero(kernel.cols());
  int o = 0;
  for (int di = -half; di <= half; ++di)
    for (int dj = -half; dj <= half; ++dj)
      for (int dk = -half; dk <= half; ++dk, ++o) {
        const int a = i + di, b = j + dj, c = k + dk;
        if (a < 0 || b < 0 || c < 0 || a >= edge || b >= edge || c >= edge) continue;
        const RowVector<double>& x = volume[static_cast<std::size_t>((a * edge + b) * edge + c)];
        out += x * kernel.middleRows(o * in, in);
      }
  return out;
}

/// Largest entry of |a - b| relative to the largest entry of |b|.
inline double relative_error(const Matrix<double>& a, const Matrix<double>& b) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace s3net::support
