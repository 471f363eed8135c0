#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <vector>

namespace s3net {

/// Spherical projection geometry (HDL-64E defaults).
struct RangeImageConfig {
  int height = 64;
  int width = 2048;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;
};

struct PixelIndex {
  int row = 0;
  int col = 0;

  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

struct RangeImage {
  int height = 0;
  int width = 0;
  Eigen::MatrixXd depth;                  // meters, 0 where empty
  Eigen::MatrixXi owner;                  // point kept at each pixel, -1 where empty
  std::vector<PixelIndex> mapping;        // pixel of every input point

  bool occupied(int row, int col) const { return owner(row, col) >= 0; }
  std::size_t occupied_count() const;
};

/// Column from azimuth, row from elevation over the vertical field of view (both clamped).
/// Colliding points keep the nearer one; equal ranges keep the lower index.
/// Throws DataError naming a point at the exact origin or with non-finite coordinates.
RangeImage project_to_range(const Eigen::Ref<const Eigen::MatrixX3d>& points, const RangeImageConfig& config = {});

/// Per-pixel (n_x, n_y, n_z), pixel (r, c) stored at row r * width + c.
struct NormalMap {
  int height = 0;
  int width = 0;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> normals;

  Eigen::RowVector3d at(int row, int col) const { return normals.row(static_cast<Eigen::Index>(row) * width + col); }
};

/// n = (d_x, d_y, 1) / sqrt(d_x^2 + d_y^2 + 1), with d_x along columns and d_y along rows.
/// Derivatives are central where both neighbours are occupied, one-sided where only one is,
/// and zero where neither is. Empty pixels get (0, 0, 0).
NormalMap compute_normals(const RangeImage& image);

/// Gives every point the normal of its pixel.
Eigen::MatrixX3d lift_to_points(const NormalMap& normals, std::span<const PixelIndex> mapping);

/// Debug dump: uint32 height, width, channels (little-endian), then float32 values in
/// row-major pixel order, channels interleaved.
void write_image_dump(const std::filesystem::path& path, const RangeImage& image);
void write_image_dump(const std::filesystem::path& path, const NormalMap& normals);

}  // namespace s3net
