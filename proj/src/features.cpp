#include "s3net/features.hpp"

#include "s3net/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>

namespace s3net {

std::size_t RangeImage::occupied_count() const {
  return static_cast<std::size_t>((owner.array() >= 0).count());
}

RangeImage project_to_range(const Eigen::Ref<const Eigen::MatrixX3d>& points, const RangeImageConfig& config) {
  if (points.rows() == 0) throw DataError("empty point cloud");
  if (config.height < 1 || config.width < 1) throw std::invalid_argument("range image size must be positive");
  const double fov_up = config.fov_up_deg * std::numbers::pi / 180.0;
  const double fov_down = config.fov_down_deg * std::numbers::pi / 180.0;
  const double fov = fov_up - fov_down;
  if (!(fov > 0.0)) throw std::invalid_argument("vertical field of view must be positive");

  RangeImage image;
  image.height = config.height;
  image.width = config.width;
  image.depth = Eigen::MatrixXd::Zero(config.height, config.width);
  image.owner = Eigen::MatrixXi::Constant(config.height, config.width, -1);
  image.mapping.resize(static_cast<std::size_t>(points.rows()));

  for (Eigen::Index p = 0; p < points.rows(); ++p) {
    const Eigen::RowVector3d pt = points.row(p);
    if (!pt.allFinite()) throw DataError("non-finite coordinate at point " + std::to_string(p));
    const double range = pt.norm();
    if (range == 0.0) throw DataError("point " + std::to_string(p) + " lies at the sensor origin");

    const double yaw = std::atan2(pt.y(), pt.x());
    const double pitch = std::asin(std::clamp(pt.z() / range, -1.0, 1.0));
    const double u = 0.5 * (1.0 - yaw / std::numbers::pi);
    const double v = 1.0 - (pitch - fov_down) / fov;
    const int col = std::clamp(static_cast<int>(std::floor(u * config.width)), 0, config.width - 1);
    const int row = std::clamp(static_cast<int>(std::floor(v * config.height)), 0, config.height - 1);
    image.mapping[static_cast<std::size_t>(p)] = {row, col};

    const int current = image.owner(row, col);
    if (current < 0 || range < image.depth(row, col)) {
      image.owner(row, col) = static_cast<int>(p);
      image.depth(row, col) = range;
    }
  }
  return image;
}

namespace {

// Derivative of depth at `centre` along one image axis given its two neighbours.
double axis_gradient(const RangeImage& img, int row, int col, int dr, int dc) {
  const int r0 = row - dr, c0 = col - dc, r1 = row + dr, c1 = col + dc;
  const bool has_prev = r0 >= 0 && c0 >= 0 && img.occupied(r0, c0);
  const bool has_next = r1 < img.height && c1 < img.width && img.occupied(r1, c1);
  if (has_prev && has_next) return 0.5 * (img.depth(r1, c1) - img.depth(r0, c0));
  if (has_next) return img.depth(r1, c1) - img.depth(row, col);
  if (has_prev) return img.depth(row, col) - img.depth(r0, c0);
  return 0.0;
}

}  // namespace

NormalMap compute_normals(const RangeImage& image) {
  NormalMap out;
  out.height = image.height;
  out.width = image.width;
  out.normals.setZero(static_cast<Eigen::Index>(image.height) * image.width, 3);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      if (!image.occupied(r, c)) continue;
      const double dx = axis_gradient(image, r, c, 0, 1);
      const double dy = axis_gradient(image, r, c, 1, 0);
      out.normals.row(static_cast<Eigen::Index>(r) * image.width + c) =
          Eigen::RowVector3d(dx, dy, 1.0) / std::sqrt(dx * dx + dy * dy + 1.0);
    }
  }
  return out;
}

Eigen::MatrixX3d lift_to_points(const NormalMap& normals, std::span<const PixelIndex> mapping) {
  Eigen::MatrixX3d out(static_cast<Eigen::Index>(mapping.size()), 3);
  for (std::size_t p = 0; p < mapping.size(); ++p) {
    const auto [row, col] = mapping[p];
    if (row < 0 || row >= normals.height || col < 0 || col >= normals.width) {
      throw DataError("mapping of point " + std::to_string(p) + " lies outside the image");
    }
    out.row(static_cast<Eigen::Index>(p)) = normals.at(row, col);
  }
  return out;
}

namespace {

void write_dump(const std::filesystem::path& path, int height, int width, int channels, const std::vector<float>& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(height), static_cast<std::uint32_t>(width),
                                   static_cast<std::uint32_t>(channels)};
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

void write_image_dump(const std::filesystem::path& path, const RangeImage& image) {
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(image.height) * image.width);
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) data.push_back(static_cast<float>(image.depth(r, c)));
  write_dump(path, image.height, image.width, 1, data);
}

void write_image_dump(const std::filesystem::path& path, const NormalMap& normals) {
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(normals.normals.size()));
  for (Eigen::Index p = 0; p < normals.normals.rows(); ++p)
    for (int ch = 0; ch < 3; ++ch) data.push_back(static_cast<float>(normals.normals(p, ch)));
  write_dump(path, normals.height, normals.width, 3, data);
}

}  // namespace s3net
