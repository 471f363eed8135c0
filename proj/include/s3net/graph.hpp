#pragma once

// Tape-recording wrappers around the primitives in ops.hpp and loss.hpp.

#include "s3net/autodiff.hpp"
#include "s3net/loss.hpp"
#include "s3net/ops.hpp"

#include <optional>
#include <vector>

namespace s3net::graph {

template <typename Scalar>
Var conv(Tape<Scalar>& tape, Var x, Var kernel, std::optional<Var> bias, KernelMapPtr kmap,
         CoordinateMapPtr out_coords, int out_stride);

/// Scatters `y` onto `target` (the input side of `kmap`).
template <typename Scalar>
Var conv_transpose(Tape<Scalar>& tape, Var y, Var kernel, KernelMapPtr kmap, CoordinateMapPtr target,
                   int target_stride);

/// Row-wise x * weight + bias; keeps x's coordinates (if any).
template <typename Scalar>
Var linear(Tape<Scalar>& tape, Var x, Var weight, Var bias);

template <typename Scalar>
Var relu(Tape<Scalar>& tape, Var x);

template <typename Scalar>
Var sigmoid(Tape<Scalar>& tape, Var x);

/// Running statistics in `state` are updated in place in training mode.
template <typename Scalar>
Var batch_norm(Tape<Scalar>& tape, Var x, Var gamma, Var beta, BatchNormState<Scalar>& state,
               const BatchNormOptions& options);

template <typename Scalar>
Var add(Tape<Scalar>& tape, Var a, Var b);

template <typename Scalar>
Var mul(Tape<Scalar>& tape, Var a, Var b);

template <typename Scalar>
Var scale(Tape<Scalar>& tape, Var x, Scalar factor);

/// Per-batch mean; result has one row per batch present in x and no coordinates.
template <typename Scalar>
Var global_avg_pool(Tape<Scalar>& tape, Var x);

/// Multiplies each row of x by the `per_batch` row of its batch.
template <typename Scalar>
Var broadcast_mul(Tape<Scalar>& tape, Var x, Var per_batch);

/// Sum of all entries, as a 1x1 value.
template <typename Scalar>
Var sum(Tape<Scalar>& tape, Var x);

template <typename Scalar>
Var sum_of_squares(Tape<Scalar>& tape, Var x);

/// sum(x .* weights) for a constant weight matrix.
template <typename Scalar>
Var inner_product(Tape<Scalar>& tape, Var x, Matrix<Scalar> weights);

template <typename Scalar>
Var wce_loss(Tape<Scalar>& tape, Var logits, std::vector<int> labels, std::vector<double> alpha);

template <typename Scalar>
Var geo_loss(Tape<Scalar>& tape, Var logits, std::vector<int> labels, Anisotropy anisotropy);

template <typename Scalar>
struct LossTerms {
  Var total;
  Scalar wce = 0;
  Scalar geo = 0;
};

template <typename Scalar>
LossTerms<Scalar> total_loss(Tape<Scalar>& tape, Var logits, std::vector<int> labels, std::vector<double> alpha,
                             Anisotropy anisotropy, const LossWeights& weights);

}  // namespace s3net::graph
