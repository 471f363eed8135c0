#pragma once

// Differentiable primitives on sparse tensors. Each forward has a matching
// backward taking the upstream gradient and whatever the forward needs saved;
// the tape in graph.hpp strings them together.

#include "s3net/sparse_tensor.hpp"

#include <vector>

namespace s3net {

/// Stacked per-offset weights: rows [o * in, (o + 1) * in) hold W_o (in x out).
template <typename Scalar>
struct ConvWeights {
  Matrix<Scalar> kernel;
  RowVector<Scalar> bias;  // empty when the convolution has no bias
  Eigen::Index volume = 1;

  Eigen::Index in_channels() const { return kernel.rows() / volume; }
  Eigen::Index out_channels() const { return kernel.cols(); }
  auto offset(Eigen::Index o) const { return kernel.middleRows(o * in_channels(), in_channels()); }
};

template <typename Scalar>
struct ConvGradients {
  Matrix<Scalar> input;
  Matrix<Scalar> kernel;
  RowVector<Scalar> bias;
};

// Gather-multiply-scatter convolution: out[b] = bias + sum over pairs (a, b) of offset o of x[a] * W_o.
template <typename Scalar>
Matrix<Scalar> conv_forward(const Matrix<Scalar>& x, const Matrix<Scalar>& kernel, const RowVector<Scalar>& bias,
                            const KernelMap& kmap);

template <typename Scalar>
ConvGradients<Scalar> conv_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& x,
                                    const Matrix<Scalar>& kernel, const KernelMap& kmap, bool has_bias);

// Adjoint of conv_forward (without bias): out[a] += y[b] * W_o^T, producing kmap.in_count rows.
template <typename Scalar>
Matrix<Scalar> conv_transpose_forward(const Matrix<Scalar>& y, const Matrix<Scalar>& kernel, const KernelMap& kmap);

/// `input` is the gradient w.r.t. the coarse tensor y; `bias` stays empty.
template <typename Scalar>
ConvGradients<Scalar> conv_transpose_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& y,
                                              const Matrix<Scalar>& kernel, const KernelMap& kmap);

template <typename Scalar>
SparseTensor<Scalar> sparse_conv_forward(const SparseTensor<Scalar>& x, const ConvWeights<Scalar>& w,
                                         const KernelMap& kmap, CoordinateMapPtr out_coords, int out_stride);

template <typename Scalar>
ConvGradients<Scalar> sparse_conv_backward(const Matrix<Scalar>& grad_out, const SparseTensor<Scalar>& x,
                                           const ConvWeights<Scalar>& w, const KernelMap& kmap);

/// Scatters a coarse tensor back onto `target_coords`, the input side of `kmap`.
template <typename Scalar>
SparseTensor<Scalar> sparse_conv_transpose(const SparseTensor<Scalar>& x, const ConvWeights<Scalar>& w,
                                           const KernelMap& kmap, CoordinateMapPtr target_coords, int target_stride);

template <typename Scalar>
struct PooledFeatures {
  Matrix<Scalar> values;  // one row per present batch
  std::vector<int> batches;
};

template <typename Scalar>
PooledFeatures<Scalar> global_avg_pool(const SparseTensor<Scalar>& x);

template <typename Scalar>
Matrix<Scalar> global_avg_pool_backward(const Matrix<Scalar>& grad_pooled, const CoordinateMap& coords);

template <typename Scalar>
Matrix<Scalar> linear_forward(const Matrix<Scalar>& x, const Matrix<Scalar>& weight, const RowVector<Scalar>& bias);

template <typename Scalar>
struct LinearGradients {
  Matrix<Scalar> input;
  Matrix<Scalar> weight;
  RowVector<Scalar> bias;
};

template <typename Scalar>
LinearGradients<Scalar> linear_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& x,
                                        const Matrix<Scalar>& weight);

template <typename Scalar>
Matrix<Scalar> relu(const Matrix<Scalar>& x) {
  return x.cwiseMax(Scalar(0));
}

template <typename Scalar>
Matrix<Scalar> relu_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& x) {
  return (x.array() > Scalar(0)).select(grad_out.array(), Scalar(0)).matrix();
}

template <typename Scalar>
Matrix<Scalar> sigmoid(const Matrix<Scalar>& x) {
  return (Scalar(1) + (-x.array()).exp()).inverse().matrix();
}

/// Takes the sigmoid output, not its input.
template <typename Scalar>
Matrix<Scalar> sigmoid_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& y) {
  return (grad_out.array() * y.array() * (Scalar(1) - y.array())).matrix();
}

template <typename Scalar>
struct BatchNormState {
  RowVector<Scalar> running_mean;
  RowVector<Scalar> running_var;

  static BatchNormState identity(Eigen::Index channels) {
    return {RowVector<Scalar>::Zero(channels), RowVector<Scalar>::Ones(channels)};
  }
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename Scalar>
struct BatchNormCache {
  Matrix<Scalar> normalized;
  RowVector<Scalar> inv_std;
  bool training = true;
};

/// Training mode normalizes with the statistics of all rows and folds them into `state`
/// (unbiased variance, PyTorch-style momentum); eval mode reads `state` only.
template <typename Scalar>
Matrix<Scalar> batch_norm_forward(const Matrix<Scalar>& x, const RowVector<Scalar>& gamma,
                                  const RowVector<Scalar>& beta, BatchNormState<Scalar>& state,
                                  const BatchNormOptions& options, BatchNormCache<Scalar>* cache = nullptr);

template <typename Scalar>
struct BatchNormGradients {
  Matrix<Scalar> input;
  RowVector<Scalar> gamma;
  RowVector<Scalar> beta;
};

template <typename Scalar>
BatchNormGradients<Scalar> batch_norm_backward(const Matrix<Scalar>& grad_out, const RowVector<Scalar>& gamma,
                                               const BatchNormCache<Scalar>& cache);

/// Binary ops require identical coordinate maps; no implicit union or intersection.
template <typename Scalar>
SparseTensor<Scalar> add(const SparseTensor<Scalar>& a, const SparseTensor<Scalar>& b);

template <typename Scalar>
SparseTensor<Scalar> mul(const SparseTensor<Scalar>& a, const SparseTensor<Scalar>& b);

/// Scales each row by the row of `scale` belonging to its batch (one row per coords->batches()).
template <typename Scalar>
Matrix<Scalar> broadcast_mul(const Matrix<Scalar>& x, const Matrix<Scalar>& scale, const CoordinateMap& coords);

template <typename Scalar>
struct BroadcastMulGradients {
  Matrix<Scalar> input;
  Matrix<Scalar> scale;
};

template <typename Scalar>
BroadcastMulGradients<Scalar> broadcast_mul_backward(const Matrix<Scalar>& grad_out, const Matrix<Scalar>& x,
                                                     const Matrix<Scalar>& scale, const CoordinateMap& coords);

/// Throws ShapeError unless both maps are the same object or compare equal.
void require_same_coordinates(const CoordinateMapPtr& a, const CoordinateMapPtr& b);

}  // namespace s3net
