#include "s3net/loss.hpp"

#include <cmath>
#include <string>

namespace s3net {

namespace {

const std::array<std::array<int, 3>, 26>& neighbour_offsets() {
  static const auto offsets = [] {
    std::array<std::array<int, 3>, 26> out{};
    std::size_t n = 0;
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b)
        for (int c = -1; c <= 1; ++c)
          if (a != 0 || b != 0 || c != 0) out[n++] = {a, b, c};
    return out;
  }();
  return offsets;
}

void check_labels(Eigen::Index rows, Eigen::Index classes, std::span<const int> labels) {
  if (static_cast<std::size_t>(rows) != labels.size()) {
    throw ShapeError("logits have " + std::to_string(rows) + " rows but " + std::to_string(labels.size()) + " labels");
  }
  for (int label : labels) {
    if (label != kIgnoreLabel && (label < 0 || label >= classes)) {
      throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

}  // namespace

ClassFrequency ClassFrequency::from_counts(std::span<const std::uint64_t> counts) {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  ClassFrequency f;
  if (total == 0) return f;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0) f.fraction[static_cast<int>(c)] = static_cast<double>(counts[c]) / static_cast<double>(total);
  }
  return f;
}

std::map<int, double> class_weights(const ClassFrequency& freqs) {
  std::string zero;
  std::map<int, double> alpha;
  for (const auto& [cls, f] : freqs.fraction) {
    if (!(f > 0.0)) {
      zero += (zero.empty() ? "" : ", ") + std::to_string(cls);
      continue;
    }
    alpha[cls] = 1.0 / std::sqrt(f);
  }
  if (!zero.empty()) throw DataError("zero class frequency for class(es): " + zero);
  return alpha;
}

std::vector<double> class_weight_vector(const std::map<int, double>& weights, int class_count) {
  std::vector<double> alpha(static_cast<std::size_t>(class_count), 0.0);
  for (const auto& [cls, a] : weights) {
    if (cls >= 0 && cls < class_count) alpha[static_cast<std::size_t>(cls)] = a;
  }
  return alpha;
}

template <typename Scalar>
Matrix<Scalar> log_softmax(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out = logits.colwise() - logits.rowwise().maxCoeff();
  const Vector<Scalar> lse = out.array().exp().rowwise().sum().log().matrix();
  out.colwise() -= lse;
  return out;
}

template <typename Scalar>
LossValue<Scalar> wce_loss(const Matrix<Scalar>& logits, std::span<const int> labels, std::span<const double> alpha) {
  check_labels(logits.rows(), logits.cols(), labels);
  if (alpha.size() != static_cast<std::size_t>(logits.cols())) throw ShapeError("alpha length != class count");

  const Matrix<Scalar> logp = log_softmax(logits);
  std::size_t supervised = 0;
  for (int label : labels) supervised += label != kIgnoreLabel;
  if (supervised == 0) throw DataError("no supervised points");

  const auto inv_n = Scalar(1) / static_cast<Scalar>(supervised);
  LossValue<Scalar> out;
  out.grad = Matrix<Scalar>::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label == kIgnoreLabel) continue;
    const auto a = static_cast<Scalar>(alpha[static_cast<std::size_t>(label)]);
    out.value -= a * logp(r, label) * inv_n;
    out.grad.row(r) = a * inv_n * logp.row(r).array().exp().matrix();
    out.grad(r, label) -= a * inv_n;
  }
  return out;
}

Anisotropy compute_mlga(const CoordinateMap& coords, std::span<const int> labels, int stride) {
  if (labels.size() != coords.size()) throw ShapeError("label count does not match voxel count");
  Anisotropy a;
  a.mismatched.assign(coords.size(), 0);
  a.occupied.assign(coords.size(), 0);
  for (std::size_t row = 0; row < coords.size(); ++row) {
    const int centre = labels[row];
    if (centre == kIgnoreLabel) continue;
    const Coordinate& p = coords.coordinate(row);
    for (const auto& o : neighbour_offsets()) {
      const int q = coords.find(p.shifted(o, stride));
      if (q < 0 || labels[static_cast<std::size_t>(q)] == kIgnoreLabel) continue;
      ++a.occupied[row];
      a.mismatched[row] += labels[static_cast<std::size_t>(q)] != centre;
    }
  }
  return a;
}

template <typename Scalar>
Scalar geo_loss(const VoxelLabelGrid<Scalar>& grid) {
  if (!grid.coords) throw ShapeError("voxel grid has no coordinates");
  check_labels(grid.predictions.rows(), grid.predictions.cols(), grid.labels);
  if (grid.coords->size() != grid.labels.size()) throw ShapeError("label count does not match voxel count");
  for (Eigen::Index r = 0; r < grid.predictions.rows(); ++r) {
    if (std::abs(grid.predictions.row(r).sum() - Scalar(1)) > Scalar(1e-5)) {
      throw ShapeError("prediction row " + std::to_string(r) + " does not sum to 1");
    }
  }
  const Anisotropy a = compute_mlga(*grid.coords, grid.labels, grid.stride);
  Scalar sum = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < grid.labels.size(); ++r) {
    const int label = grid.labels[r];
    if (label == kIgnoreLabel) continue;
    ++n;
    const double w = a.weight(r);
    if (w != 0.0) sum -= static_cast<Scalar>(w) * std::log(grid.predictions(static_cast<Eigen::Index>(r), label));
  }
  return n == 0 ? Scalar(0) : sum / static_cast<Scalar>(n);
}

template <typename Scalar>
LossValue<Scalar> geo_loss(const Matrix<Scalar>& logits, std::span<const int> labels, const Anisotropy& anisotropy) {
  check_labels(logits.rows(), logits.cols(), labels);
  if (anisotropy.occupied.size() != labels.size()) throw ShapeError("anisotropy does not match label count");

  LossValue<Scalar> out;
  out.grad = Matrix<Scalar>::Zero(logits.rows(), logits.cols());
  std::size_t n = 0;
  for (int label : labels) n += label != kIgnoreLabel;
  if (n == 0) return out;

  const Matrix<Scalar> logp = log_softmax(logits);
  const auto inv_n = Scalar(1) / static_cast<Scalar>(n);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label == kIgnoreLabel) continue;
    const auto w = static_cast<Scalar>(anisotropy.weight(static_cast<std::size_t>(r)));
    if (w == Scalar(0)) continue;
    out.value -= w * logp(r, label) * inv_n;
    out.grad.row(r) = w * inv_n * logp.row(r).array().exp().matrix();
    out.grad(r, label) -= w * inv_n;
  }
  return out;
}

template <typename Scalar>
TotalLoss<Scalar> total_loss(const Matrix<Scalar>& logits, std::span<const int> labels, std::span<const double> alpha,
                             const Anisotropy& anisotropy, const LossWeights& weights) {
  const LossValue<Scalar> wce = wce_loss(logits, labels, alpha);
  const LossValue<Scalar> geo = geo_loss(logits, labels, anisotropy);
  const auto l1 = static_cast<Scalar>(weights.wce);
  const auto l2 = static_cast<Scalar>(weights.geo);
  TotalLoss<Scalar> out;
  out.wce = wce.value;
  out.geo = geo.value;
  out.total.value = l1 * wce.value + l2 * geo.value;
  out.total.grad = l1 * wce.grad + l2 * geo.grad;
  return out;
}

#define S3NET_INSTANTIATE_LOSS(S)                                                                               \
  template Matrix<S> log_softmax(const Matrix<S>&);                                                             \
  template LossValue<S> wce_loss(const Matrix<S>&, std::span<const int>, std::span<const double>);              \
  template S geo_loss(const VoxelLabelGrid<S>&);                                                                \
  template LossValue<S> geo_loss(const Matrix<S>&, std::span<const int>, const Anisotropy&);                    \
  template TotalLoss<S> total_loss(const Matrix<S>&, std::span<const int>, std::span<const double>,             \
                                   const Anisotropy&, const LossWeights&);

S3NET_INSTANTIATE_LOSS(float)
S3NET_INSTANTIATE_LOSS(double)

#undef S3NET_INSTANTIATE_LOSS

}  // namespace s3net
