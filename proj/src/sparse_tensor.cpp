#include "s3net/sparse_tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace s3net {

template <typename Scalar>
void SparseTensor<Scalar>::validate() const {
  if (!coords) throw ShapeError("sparse tensor has no coordinate map");
  if (static_cast<std::size_t>(features.rows()) != coords->size()) {
    throw ShapeError("feature rows (" + std::to_string(features.rows()) + ") != coordinate count (" +
                     std::to_string(coords->size()) + ")");
  }
  if (stride < 1 || !coords->aligned_to(stride)) {
    throw ShapeError("coordinates not aligned to tensor stride " + std::to_string(stride));
  }
  if (!features.allFinite()) throw ShapeError("non-finite feature value");
}

template <typename Scalar>
QuantizedCloud<Scalar> quantize_points(const Eigen::Ref<const Eigen::MatrixX3d>& positions,
                                       const Matrix<Scalar>& features, double voxel_size, int batch) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("voxel size must be positive");
  const Eigen::Index n = positions.rows();
  if (n == 0) throw DataError("empty point cloud");
  if (features.rows() != n) throw ShapeError("feature rows do not match point count");

  std::vector<Coordinate> voxel(static_cast<std::size_t>(n));
  for (Eigen::Index p = 0; p < n; ++p) {
    if (!positions.row(p).allFinite()) throw DataError("non-finite coordinate at point " + std::to_string(p));
    const Eigen::RowVector3d cell = (positions.row(p) / voxel_size).array().floor();
    voxel[static_cast<std::size_t>(p)] = {batch, static_cast<std::int32_t>(cell[0]), static_cast<std::int32_t>(cell[1]),
                                          static_cast<std::int32_t>(cell[2])};
  }

  std::vector<Coordinate> unique = voxel;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  auto coords = std::make_shared<const CoordinateMap>(std::move(unique));

  QuantizedCloud<Scalar> result;
  result.point_to_row.resize(static_cast<std::size_t>(n));
  Matrix<Scalar> sums = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(coords->size()), features.cols());
  std::vector<int> counts(coords->size(), 0);
  for (Eigen::Index p = 0; p < n; ++p) {
    const int row = coords->find(voxel[static_cast<std::size_t>(p)]);
    result.point_to_row[static_cast<std::size_t>(p)] = row;
    sums.row(row) += features.row(p);
    ++counts[static_cast<std::size_t>(row)];
  }
  for (Eigen::Index row = 0; row < sums.rows(); ++row) sums.row(row) /= static_cast<Scalar>(counts[static_cast<std::size_t>(row)]);

  result.tensor = {std::move(coords), std::move(sums), 1};
  return result;
}

template <typename Scalar>
SparseTensor<Scalar> concatenate_batches(const std::vector<SparseTensor<Scalar>>& parts,
                                         std::vector<Eigen::Index>* row_offsets) {
  if (parts.empty()) throw std::invalid_argument("no tensors to concatenate");
  Eigen::Index total = 0;
  for (const auto& part : parts) {
    if (part.stride != 1) throw ShapeError("only stride-1 tensors can be batched");
    if (part.channels() != parts.front().channels()) throw ShapeError("channel mismatch between batch parts");
    total += part.rows();
  }

  std::vector<Coordinate> coords;
  coords.reserve(static_cast<std::size_t>(total));
  Matrix<Scalar> features(total, parts.front().channels());
  if (row_offsets) row_offsets->clear();
  Eigen::Index offset = 0;
  for (std::size_t b = 0; b < parts.size(); ++b) {
    if (row_offsets) row_offsets->push_back(offset);
    for (const auto& c : parts[b].coords->coordinates()) coords.push_back({static_cast<std::int32_t>(b), c.i, c.j, c.k});
    features.middleRows(offset, parts[b].rows()) = parts[b].features;
    offset += parts[b].rows();
  }
  return {std::make_shared<const CoordinateMap>(std::move(coords)), std::move(features), 1};
}

template struct SparseTensor<float>;
template struct SparseTensor<double>;
template QuantizedCloud<float> quantize_points(const Eigen::Ref<const Eigen::MatrixX3d>&, const Matrix<float>&, double, int);
template QuantizedCloud<double> quantize_points(const Eigen::Ref<const Eigen::MatrixX3d>&, const Matrix<double>&, double, int);
template SparseTensor<float> concatenate_batches(const std::vector<SparseTensor<float>>&, std::vector<Eigen::Index>*);
template SparseTensor<double> concatenate_batches(const std::vector<SparseTensor<double>>&, std::vector<Eigen::Index>*);

}  // namespace s3net
