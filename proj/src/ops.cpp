#include "s3net/ops.hpp"

#include <string>

namespace s3net {

namespace {

template <typename Scalar>
void check_kernel(const Matrix<Scalar>& x, const Matrix<Scalar>& kernel, const KernelMap& kmap, Eigen::Index in_channels) {
  const auto volume = static_cast<Eigen::Index>(kmap.pairs.size());
  if (volume == 0 || kernel.rows() != volume * in_channels) {
    throw ShapeError("kernel has " + std::to_string(kernel.rows()) + " rows, expected " + std::to_string(volume) +
                     " offsets x " + std::to_string(in_channels) + " channels");
  }
  (void)x;
}

void check_pairs(const KernelMap& kmap) {
  for (const auto& list : kmap.pairs) {
    for (const auto& p : list) {
      if (p.in_row < 0 || static_cast<std::size_t>(p.in_row) >= kmap.in_count || p.out_row < 0 ||
          static_cast<std::size_t>(p.out_row) >= kmap.out_count) {
        throw ShapeError("kernel map references row outside (" + std::to_string(kmap.in_count) + ", " +
                         std::to_string(kmap.out_count) + ")");
      }
    }
  }
}

template <typename Scalar>
Matrix<Scalar> gather(const Matrix<Scalar>& src, const std::vector<KernelPair>& list, bool from_input) {
  Matrix<Scalar> out(static_cast<Eigen::Index>(list.size()), src.cols());
  for (std::size_t n = 0; n < list.size(); ++n) {
    out.row(static_cast<Eigen::Index>(n)) = src.row(from_input ? list[n].in_row : list[n].out_row);
  }
  return out;
}

template <typename Scalar>
void scatter_add(Matrix<Scalar>& dst, const Matrix<Scalar>& rows, const std::vector<KernelPair>& list, bool to_input) {
  for (std::size_t n = 0; n < list.size(); ++n) {
    dst.row(to_input ? list[n].in_row : list[n].out_row) += rows.row(static_cast<Eigen::Index>(n));
  }
}

}  // namespace

void require_same_coordinates(const CoordinateMapPtr& a, const CoordinateMapPtr& b) {
  if (a == b) return;
  if (!a || !b || !(*a == *b)) throw ShapeError("coordinate maps of operands differ");
}

template <typename Scalar>
Matrix<Scalar> conv_forward(const Matrix<Scalar>& x, const Matrix<Scalar>& kernel, const RowVector<Scalar>& bias,
                            const KernelMap& kmap) {
  if (static_cast<std::size_t>(x.rows()) != kmap.in_count) {
    throw ShapeError("input has " + std::to_string(x.rows()) + " rows, kernel map expects " +
                     std::to_string(kmap.in_count));
  }
  const Eigen::Index in_ch = x.cols();
  check_kernel(x, kernel, kmap, in_ch);
  check_pairs(kmap);
  if (bias.size() != 0 && bias.size() != kernel.cols()) throw ShapeError("bias length does not match output channels");

  Matrix<Scalar> out = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(kmap.out_count), kernel.cols());
  if (bias.size() != 0) out.rowwise() = bias;
  for (std::size_t o = 0; o < kmap.pairs.size(); ++o) {
    const auto& list = kmap.pairs[o];
    if (list.empty()) continue;
    const Matrix<Scalar> contrib = gather(x, list, true) * kernel.middleRows(static_cast<Eigen::Index>(o) * in_ch, in_ch);
    scatter_add(out, contrib, list, false);
  }
  return out;
}

template <typename Scalar>
ConvGradients<Scalar> conv_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& x,
                                    const Matrix<Scalar>& kernel, const KernelMap& kmap, bool has_bias) {
  if (static_cast<std::size_t>(grad_out.rows()) != kmap.out_count || grad_out.cols() != kernel.cols()) {
    throw ShapeError("output gradient shape does not match convolution output");
  }
  if (static_cast<std::size_t>(x.rows()) != kmap.in_count) throw ShapeError("input rows do not match kernel map");
  const Eigen::Index in_ch = x.cols();
  check_kernel(x, kernel, kmap, in_ch);

  ConvGradients<Scalar> g;
  g.input = Matrix<Scalar>::Zero(x.rows(), in_ch);
  g.kernel = Matrix<Scalar>::Zero(kernel.rows(), kernel.cols());
  for (std::size_t o = 0; o < kmap.pairs.size(); ++o) {
    const auto& list = kmap.pairs[o];
    if (list.empty()) continue;
    const auto block = static_cast<Eigen::Index>(o) * in_ch;
    const Matrix<Scalar> g_rows = gather(grad_out, list, false);
    const Matrix<Scalar> x_rows = gather(x, list, true);
    g.kernel.middleRows(block, in_ch).noalias() += x_rows.transpose() * g_rows;
    const Matrix<Scalar> back = g_rows * kernel.middleRows(block, in_ch).transpose();
    scatter_add(g.input, back, list, true);
  }
  if (has_bias) g.bias = grad_out.colwise().sum();
  return g;
}

template <typename Scalar>
Matrix<Scalar> conv_transpose_forward(const Matrix<Scalar>& y, const Matrix<Scalar>& kernel, const KernelMap& kmap) {
  if (static_cast<std::size_t>(y.rows()) != kmap.out_count || y.cols() != kernel.cols()) {
    throw ShapeError("transpose input shape does not match kernel map output side");
  }
  const auto volume = static_cast<Eigen::Index>(kmap.pairs.size());
  if (volume == 0 || kernel.rows() % volume != 0) throw ShapeError("kernel rows not divisible by kernel volume");
  check_pairs(kmap);
  const Eigen::Index fine_ch = kernel.rows() / volume;

  Matrix<Scalar> out = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(kmap.in_count), fine_ch);
  for (std::size_t o = 0; o < kmap.pairs.size(); ++o) {
    const auto& list = kmap.pairs[o];
    if (list.empty()) continue;
    const Matrix<Scalar> contrib =
        gather(y, list, false) * kernel.middleRows(static_cast<Eigen::Index>(o) * fine_ch, fine_ch).transpose();
    scatter_add(out, contrib, list, true);
  }
  return out;
}

template <typename Scalar>
ConvGradients<Scalar> conv_transpose_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& y,
                                              const Matrix<Scalar>& kernel, const KernelMap& kmap) {
  const auto volume = static_cast<Eigen::Index>(kmap.pairs.size());
  const Eigen::Index fine_ch = kernel.rows() / volume;
  if (static_cast<std::size_t>(grad_out.rows()) != kmap.in_count || grad_out.cols() != fine_ch) {
    throw ShapeError("output gradient shape does not match transpose output");
  }
  ConvGradients<Scalar> g;
  g.input = Matrix<Scalar>::Zero(y.rows(), y.cols());
  g.kernel = Matrix<Scalar>::Zero(kernel.rows(), kernel.cols());
  for (std::size_t o = 0; o < kmap.pairs.size(); ++o) {
    const auto& list = kmap.pairs[o];
    if (list.empty()) continue;
    const auto block = static_cast<Eigen::Index>(o) * fine_ch;
    const Matrix<Scalar> g_rows = gather(grad_out, list, true);
    const Matrix<Scalar> y_rows = gather(y, list, false);
    g.kernel.middleRows(block, fine_ch).noalias() += g_rows.transpose() * y_rows;
    const Matrix<Scalar> back = g_rows * kernel.middleRows(block, fine_ch);
    scatter_add(g.input, back, list, false);
  }
  return g;
}

template <typename Scalar>
SparseTensor<Scalar> sparse_conv_forward(const SparseTensor<Scalar>& x, const ConvWeights<Scalar>& w,
                                         const KernelMap& kmap, CoordinateMapPtr out_coords, int out_stride) {
  if (x.channels() != w.in_channels()) {
    throw ShapeError("input has " + std::to_string(x.channels()) + " channels, weights expect " +
                     std::to_string(w.in_channels()));
  }
  if (!out_coords || out_coords->size() != kmap.out_count) throw ShapeError("output coordinates do not match kernel map");
  return {std::move(out_coords), conv_forward(x.features, w.kernel, w.bias, kmap), out_stride};
}

template <typename Scalar>
ConvGradients<Scalar> sparse_conv_backward(const Matrix<Scalar>& grad_out, const SparseTensor<Scalar>& x,
                                           const ConvWeights<Scalar>& w, const KernelMap& kmap) {
  if (x.channels() != w.in_channels()) throw ShapeError("input channels do not match weights");
  return conv_backward(grad_out, x.features, w.kernel, kmap, w.bias.size() != 0);
}

template <typename Scalar>
SparseTensor<Scalar> sparse_conv_transpose(const SparseTensor<Scalar>& x, const ConvWeights<Scalar>& w,
                                           const KernelMap& kmap, CoordinateMapPtr target_coords, int target_stride) {
  if (!target_coords || target_coords->size() != kmap.in_count) {
    throw ShapeError("target coordinates do not match kernel map input side");
  }
  return {std::move(target_coords), conv_transpose_forward(x.features, w.kernel, kmap), target_stride};
}

template <typename Scalar>
PooledFeatures<Scalar> global_avg_pool(const SparseTensor<Scalar>& x) {
  if (x.rows() == 0) throw ShapeError("cannot pool an empty tensor");
  const CoordinateMap& coords = *x.coords;
  PooledFeatures<Scalar> pooled;
  pooled.batches.assign(coords.batches().begin(), coords.batches().end());
  pooled.values = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(pooled.batches.size()), x.channels());
  for (Eigen::Index row = 0; row < x.rows(); ++row) {
    pooled.values.row(coords.batch_slot(static_cast<std::size_t>(row))) += x.features.row(row);
  }
  for (Eigen::Index s = 0; s < pooled.values.rows(); ++s) {
    pooled.values.row(s) /= static_cast<Scalar>(coords.batch_counts()[static_cast<std::size_t>(s)]);
  }
  return pooled;
}

template <typename Scalar>
Matrix<Scalar> global_avg_pool_backward(const Matrix<Scalar>& grad_pooled, const CoordinateMap& coords) {
  if (static_cast<std::size_t>(grad_pooled.rows()) != coords.batches().size()) {
    throw ShapeError("pooled gradient rows do not match batch count");
  }
  Matrix<Scalar> g(static_cast<Eigen::Index>(coords.size()), grad_pooled.cols());
  for (std::size_t row = 0; row < coords.size(); ++row) {
    const int slot = coords.batch_slot(row);
    g.row(static_cast<Eigen::Index>(row)) =
        grad_pooled.row(slot) / static_cast<Scalar>(coords.batch_counts()[static_cast<std::size_t>(slot)]);
  }
  return g;
}

template <typename Scalar>
Matrix<Scalar> linear_forward(const Matrix<Scalar>& x, const Matrix<Scalar>& weight, const RowVector<Scalar>& bias) {
  if (x.cols() != weight.rows()) throw ShapeError("linear input channels do not match weight rows");
  Matrix<Scalar> out = x * weight;
  if (bias.size() != 0) out.rowwise() += bias;
  return out;
}

template <typename Scalar>
LinearGradients<Scalar> linear_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& x,
                                        const Matrix<Scalar>& weight) {
  return {grad_out * weight.transpose(), x.transpose() * grad_out, grad_out.colwise().sum()};
}

template <typename Scalar>
Matrix<Scalar> batch_norm_forward(const Matrix<Scalar>& x, const RowVector<Scalar>& gamma,
                                  const RowVector<Scalar>& beta, BatchNormState<Scalar>& state,
                                  const BatchNormOptions& options, BatchNormCache<Scalar>* cache) {
  const Eigen::Index channels = x.cols();
  if (gamma.size() != channels || beta.size() != channels || state.running_mean.size() != channels ||
      state.running_var.size() != channels) {
    throw ShapeError("batch norm parameters do not match channel count");
  }
  const auto eps = static_cast<Scalar>(options.eps);
  RowVector<Scalar> mean;
  RowVector<Scalar> var;
  if (options.training) {
    if (x.rows() == 0) throw ShapeError("batch norm in training mode needs at least one row");
    const auto n = static_cast<Scalar>(x.rows());
    mean = x.colwise().mean();
    var = (x.rowwise() - mean).array().square().colwise().sum().matrix() / n;
    const auto m = static_cast<Scalar>(options.momentum);
    const RowVector<Scalar> unbiased = x.rows() > 1 ? RowVector<Scalar>(var * (n / (n - Scalar(1)))) : var;
    state.running_mean = (Scalar(1) - m) * state.running_mean + m * mean;
    state.running_var = (Scalar(1) - m) * state.running_var + m * unbiased;
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }
  const RowVector<Scalar> inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix<Scalar> normalized = ((x.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  Matrix<Scalar> out = ((normalized.array().rowwise() * gamma.array()).rowwise() + beta.array()).matrix();
  if (cache) *cache = {std::move(normalized), inv_std, options.training};
  return out;
}

template <typename Scalar>
BatchNormGradients<Scalar> batch_norm_backward(const Matrix<Scalar>& grad_out, const RowVector<Scalar>& gamma,
                                               const BatchNormCache<Scalar>& cache) {
  BatchNormGradients<Scalar> g;
  g.beta = grad_out.colwise().sum();
  g.gamma = (grad_out.array() * cache.normalized.array()).colwise().sum().matrix();
  const RowVector<Scalar> scale = (gamma.array() * cache.inv_std.array()).matrix();
  if (!cache.training) {
    g.input = (grad_out.array().rowwise() * scale.array()).matrix();
    return g;
  }
  const auto n = static_cast<Scalar>(grad_out.rows());
  const RowVector<Scalar> mean_g = g.beta / n;
  const RowVector<Scalar> mean_gx = g.gamma / n;
  g.input = (((grad_out.rowwise() - mean_g).array() - (cache.normalized.array().rowwise() * mean_gx.array()))
                 .rowwise() *
             scale.array())
                .matrix();
  return g;
}

template <typename Scalar>
SparseTensor<Scalar> add(const SparseTensor<Scalar>& a, const SparseTensor<Scalar>& b) {
  require_same_coordinates(a.coords, b.coords);
  if (a.channels() != b.channels()) throw ShapeError("channel mismatch in add");
  return {a.coords, a.features + b.features, a.stride};
}

template <typename Scalar>
SparseTensor<Scalar> mul(const SparseTensor<Scalar>& a, const SparseTensor<Scalar>& b) {
  require_same_coordinates(a.coords, b.coords);
  if (a.channels() != b.channels()) throw ShapeError("channel mismatch in mul");
  return {a.coords, a.features.cwiseProduct(b.features), a.stride};
}

template <typename Scalar>
Matrix<Scalar> broadcast_mul(const Matrix<Scalar>& x, const Matrix<Scalar>& scale, const CoordinateMap& coords) {
  if (static_cast<std::size_t>(scale.rows()) != coords.batches().size() || scale.cols() != x.cols()) {
    throw ShapeError("broadcast scale needs one row per batch and one column per channel");
  }
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index row = 0; row < x.rows(); ++row) {
    out.row(row) = x.row(row).cwiseProduct(scale.row(coords.batch_slot(static_cast<std::size_t>(row))));
  }
  return out;
}

template <typename Scalar>
BroadcastMulGradients<Scalar> broadcast_mul_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& x,
                                                     const Matrix<Scalar>& scale, const CoordinateMap& coords) {
  BroadcastMulGradients<Scalar> g{broadcast_mul(grad_out, scale, coords), Matrix<Scalar>::Zero(scale.rows(), scale.cols())};
  for (Eigen::Index row = 0; row < x.rows(); ++row) {
    g.scale.row(coords.batch_slot(static_cast<std::size_t>(row))) += grad_out.row(row).cwiseProduct(x.row(row));
  }
  return g;
}

#define S3NET_INSTANTIATE_OPS(S)                                                                                      \
  template Matrix<S> conv_forward(const Matrix<S>&, const Matrix<S>&, const RowVector<S>&, const KernelMap&);         \
  template ConvGradients<S> conv_backward(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&, const KernelMap&,     \
                                          bool);                                                                      \
  template Matrix<S> conv_transpose_forward(const Matrix<S>&, const Matrix<S>&, const KernelMap&);                    \
  template ConvGradients<S> conv_transpose_backward(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&,             \
                                                    const KernelMap&);                                                \
  template SparseTensor<S> sparse_conv_forward(const SparseTensor<S>&, const ConvWeights<S>&, const KernelMap&,       \
                                               CoordinateMapPtr, int);                                                \
  template ConvGradients<S> sparse_conv_backward(const Matrix<S>&, const SparseTensor<S>&, const ConvWeights<S>&,     \
                                                 const KernelMap&);                                                   \
  template SparseTensor<S> sparse_conv_transpose(const SparseTensor<S>&, const ConvWeights<S>&, const KernelMap&,     \
                                                 CoordinateMapPtr, int);                                              \
  template PooledFeatures<S> global_avg_pool(const SparseTensor<S>&);                                                 \
  template Matrix<S> global_avg_pool_backward(const Matrix<S>&, const CoordinateMap&);                                \
  template Matrix<S> linear_forward(const Matrix<S>&, const Matrix<S>&, const RowVector<S>&);                         \
  template LinearGradients<S> linear_backward(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&);                  \
  template Matrix<S> batch_norm_forward(const Matrix<S>&, const RowVector<S>&, const RowVector<S>&,                   \
                                        BatchNormState<S>&, const BatchNormOptions&, BatchNormCache<S>*);             \
  template BatchNormGradients<S> batch_norm_backward(const Matrix<S>&, const RowVector<S>&, const BatchNormCache<S>&); \
  template SparseTensor<S> add(const SparseTensor<S>&, const SparseTensor<S>&);                                       \
  template SparseTensor<S> mul(const SparseTensor<S>&, const SparseTensor<S>&);                                       \
  template Matrix<S> broadcast_mul(const Matrix<S>&, const Matrix<S>&, const CoordinateMap&);                         \
  template BroadcastMulGradients<S> broadcast_mul_backward(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&,      \
                                                           const CoordinateMap&);

S3NET_INSTANTIATE_OPS(float)
S3NET_INSTANTIATE_OPS(double)

#undef S3NET_INSTANTIATE_OPS

}  // namespace s3net
