#include "s3net/graph.hpp"

namespace s3net::graph {

namespace {

template <typename Scalar>
RowVector<Scalar> as_row(const Matrix<Scalar>& m) {
  if (m.rows() != 1) throw ShapeError("expected a single-row parameter");
  return m.row(0);
}

template <typename Scalar>
Matrix<Scalar> scalar_matrix(Scalar v) {
  Matrix<Scalar> m(1, 1);
  m(0, 0) = v;
  return m;
}

template <typename Scalar>
void check_binary(const Tape<Scalar>& tape, Var a, Var b) {
  const auto& ca = tape.coords(a);
  const auto& cb = tape.coords(b);
  if (ca || cb) require_same_coordinates(ca, cb);
  if (tape.value(a).rows() != tape.value(b).rows() || tape.value(a).cols() != tape.value(b).cols()) {
    throw ShapeError("operand shapes differ");
  }
}

}  // namespace

template <typename Scalar>
Var conv(Tape<Scalar>& tape, Var x, Var kernel, std::optional<Var> bias, KernelMapPtr kmap,
         CoordinateMapPtr out_coords, int out_stride) {
  if (!kmap) throw ShapeError("missing kernel map");
  if (!out_coords || out_coords->size() != kmap->out_count) throw ShapeError("output coordinates do not match kernel map");
  const RowVector<Scalar> b = bias ? as_row(tape.value(*bias)) : RowVector<Scalar>();
  Matrix<Scalar> out = conv_forward(tape.value(x), tape.value(kernel), b, *kmap);
  auto backward = [x, kernel, bias, kmap](Tape<Scalar>& t, Var self) {
    const auto g = conv_backward(t.grad(self), t.value(x), t.value(kernel), *kmap, bias.has_value());
    t.accumulate(x, g.input);
    t.accumulate(kernel, g.kernel);
    if (bias) t.accumulate(*bias, g.bias);
  };
  if (bias) return tape.record(std::move(out), std::move(out_coords), out_stride, {x, kernel, *bias}, backward);
  return tape.record(std::move(out), std::move(out_coords), out_stride, {x, kernel}, backward);
}

template <typename Scalar>
Var conv_transpose(Tape<Scalar>& tape, Var y, Var kernel, KernelMapPtr kmap, CoordinateMapPtr target,
                   int target_stride) {
  if (!kmap) throw ShapeError("missing kernel map");
  if (!target || target->size() != kmap->in_count) throw ShapeError("target coordinates do not match kernel map");
  Matrix<Scalar> out = conv_transpose_forward(tape.value(y), tape.value(kernel), *kmap);
  return tape.record(std::move(out), std::move(target), target_stride, {y, kernel},
                     [y, kernel, kmap](Tape<Scalar>& t, Var self) {
                       const auto g = conv_transpose_backward(t.grad(self), t.value(y), t.value(kernel), *kmap);
                       t.accumulate(y, g.input);
                       t.accumulate(kernel, g.kernel);
                     });
}

template <typename Scalar>
Var linear(Tape<Scalar>& tape, Var x, Var weight, Var bias) {
  Matrix<Scalar> out = linear_forward(tape.value(x), tape.value(weight), as_row(tape.value(bias)));
  return tape.record(std::move(out), tape.coords(x), tape.stride(x), {x, weight, bias},
                     [x, weight, bias](Tape<Scalar>& t, Var self) {
                       const auto g = linear_backward(t.grad(self), t.value(x), t.value(weight));
                       t.accumulate(x, g.input);
                       t.accumulate(weight, g.weight);
                       t.accumulate(bias, g.bias);
                     });
}

template <typename Scalar>
Var relu(Tape<Scalar>& tape, Var x) {
  const Matrix<Scalar>& in = tape.value(x);
  std::uint64_t pattern = 0xcbf29ce484222325ull;
  for (Eigen::Index i = 0; i < in.size(); ++i) pattern = (pattern ^ (in.data()[i] > 0 ? 1u : 2u)) * 0x100000001b3ull;
  tape.note_branch(pattern);
  return tape.record(s3net::relu(tape.value(x)), tape.coords(x), tape.stride(x), {x}, [x](Tape<Scalar>& t, Var self) {
    t.accumulate(x, relu_backward(t.grad(self), t.value(x)));
  });
}

template <typename Scalar>
Var sigmoid(Tape<Scalar>& tape, Var x) {
  return tape.record(s3net::sigmoid(tape.value(x)), tape.coords(x), tape.stride(x), {x},
                     [x](Tape<Scalar>& t, Var self) { t.accumulate(x, sigmoid_backward(t.grad(self), t.value(self))); });
}

template <typename Scalar>
Var batch_norm(Tape<Scalar>& tape, Var x, Var gamma, Var beta, BatchNormState<Scalar>& state,
               const BatchNormOptions& options) {
  auto cache = std::make_shared<BatchNormCache<Scalar>>();
  Matrix<Scalar> out = batch_norm_forward(tape.value(x), as_row(tape.value(gamma)), as_row(tape.value(beta)), state,
                                          options, cache.get());
  return tape.record(std::move(out), tape.coords(x), tape.stride(x), {x, gamma, beta},
                     [x, gamma, beta, cache](Tape<Scalar>& t, Var self) {
                       const auto g = batch_norm_backward(t.grad(self), as_row(t.value(gamma)), *cache);
                       t.accumulate(x, g.input);
                       t.accumulate(gamma, g.gamma);
                       t.accumulate(beta, g.beta);
                     });
}

template <typename Scalar>
Var add(Tape<Scalar>& tape, Var a, Var b) {
  check_binary(tape, a, b);
  return tape.record(tape.value(a) + tape.value(b), tape.coords(a), tape.stride(a), {a, b},
                     [a, b](Tape<Scalar>& t, Var self) {
                       t.accumulate(a, t.grad(self));
                       t.accumulate(b, t.grad(self));
                     });
}

template <typename Scalar>
Var mul(Tape<Scalar>& tape, Var a, Var b) {
  check_binary(tape, a, b);
  return tape.record(tape.value(a).cwiseProduct(tape.value(b)), tape.coords(a), tape.stride(a), {a, b},
                     [a, b](Tape<Scalar>& t, Var self) {
                       t.accumulate(a, t.grad(self).cwiseProduct(t.value(b)));
                       t.accumulate(b, t.grad(self).cwiseProduct(t.value(a)));
                     });
}

template <typename Scalar>
Var scale(Tape<Scalar>& tape, Var x, Scalar factor) {
  return tape.record(tape.value(x) * factor, tape.coords(x), tape.stride(x), {x},
                     [x, factor](Tape<Scalar>& t, Var self) { t.accumulate(x, t.grad(self) * factor); });
}

template <typename Scalar>
Var global_avg_pool(Tape<Scalar>& tape, Var x) {
  auto coords = tape.coords(x);
  if (!coords) throw ShapeError("pooling needs a sparse tensor");
  auto pooled = s3net::global_avg_pool(tape.tensor(x));
  return tape.record(std::move(pooled.values), nullptr, 1, {x}, [x, coords](Tape<Scalar>& t, Var self) {
    t.accumulate(x, global_avg_pool_backward(t.grad(self), *coords));
  });
}

template <typename Scalar>
Var broadcast_mul(Tape<Scalar>& tape, Var x, Var per_batch) {
  auto coords = tape.coords(x);
  if (!coords) throw ShapeError("broadcast_mul needs a sparse tensor");
  Matrix<Scalar> out = s3net::broadcast_mul(tape.value(x), tape.value(per_batch), *coords);
  return tape.record(std::move(out), coords, tape.stride(x), {x, per_batch},
                     [x, per_batch, coords](Tape<Scalar>& t, Var self) {
                       const auto g = broadcast_mul_backward(t.grad(self), t.value(x), t.value(per_batch), *coords);
                       t.accumulate(x, g.input);
                       t.accumulate(per_batch, g.scale);
                     });
}

template <typename Scalar>
Var sum(Tape<Scalar>& tape, Var x) {
  return tape.record(scalar_matrix(tape.value(x).sum()), nullptr, 1, {x}, [x](Tape<Scalar>& t, Var self) {
    const Scalar g = t.grad(self)(0, 0);
    t.accumulate(x, Matrix<Scalar>::Constant(t.value(x).rows(), t.value(x).cols(), g));
  });
}

template <typename Scalar>
Var sum_of_squares(Tape<Scalar>& tape, Var x) {
  return tape.record(scalar_matrix(tape.value(x).squaredNorm()), nullptr, 1, {x}, [x](Tape<Scalar>& t, Var self) {
    t.accumulate(x, Scalar(2) * t.grad(self)(0, 0) * t.value(x));
  });
}

template <typename Scalar>
Var inner_product(Tape<Scalar>& tape, Var x, Matrix<Scalar> weights) {
  if (weights.rows() != tape.value(x).rows() || weights.cols() != tape.value(x).cols()) {
    throw ShapeError("inner product weights do not match value shape");
  }
  const Scalar v = tape.value(x).cwiseProduct(weights).sum();
  return tape.record(scalar_matrix(v), nullptr, 1, {x}, [x, w = std::move(weights)](Tape<Scalar>& t, Var self) {
    t.accumulate(x, t.grad(self)(0, 0) * w);
  });
}

template <typename Scalar>
Var wce_loss(Tape<Scalar>& tape, Var logits, std::vector<int> labels, std::vector<double> alpha) {
  auto result = std::make_shared<LossValue<Scalar>>(s3net::wce_loss(tape.value(logits), labels, alpha));
  return tape.record(scalar_matrix(result->value), nullptr, 1, {logits}, [logits, result](Tape<Scalar>& t, Var self) {
    t.accumulate(logits, t.grad(self)(0, 0) * result->grad);
  });
}

template <typename Scalar>
Var geo_loss(Tape<Scalar>& tape, Var logits, std::vector<int> labels, Anisotropy anisotropy) {
  auto result = std::make_shared<LossValue<Scalar>>(s3net::geo_loss(tape.value(logits), labels, anisotropy));
  return tape.record(scalar_matrix(result->value), nullptr, 1, {logits}, [logits, result](Tape<Scalar>& t, Var self) {
    t.accumulate(logits, t.grad(self)(0, 0) * result->grad);
  });
}

template <typename Scalar>
LossTerms<Scalar> total_loss(Tape<Scalar>& tape, Var logits, std::vector<int> labels, std::vector<double> alpha,
                             Anisotropy anisotropy, const LossWeights& weights) {
  auto result = std::make_shared<TotalLoss<Scalar>>(
      s3net::total_loss(tape.value(logits), labels, alpha, anisotropy, weights));
  LossTerms<Scalar> terms;
  terms.wce = result->wce;
  terms.geo = result->geo;
  terms.total = tape.record(scalar_matrix(result->total.value), nullptr, 1, {logits},
                            [logits, result](Tape<Scalar>& t, Var self) {
                              t.accumulate(logits, t.grad(self)(0, 0) * result->total.grad);
                            });
  return terms;
}

#define S3NET_INSTANTIATE_GRAPH(S)                                                                                  \
  template Var conv(Tape<S>&, Var, Var, std::optional<Var>, KernelMapPtr, CoordinateMapPtr, int);                   \
  template Var conv_transpose(Tape<S>&, Var, Var, KernelMapPtr, CoordinateMapPtr, int);                             \
  template Var linear(Tape<S>&, Var, Var, Var);                                                                     \
  template Var relu(Tape<S>&, Var);                                                                                 \
  template Var sigmoid(Tape<S>&, Var);                                                                              \
  template Var batch_norm(Tape<S>&, Var, Var, Var, BatchNormState<S>&, const BatchNormOptions&);                    \
  template Var add(Tape<S>&, Var, Var);                                                                             \
  template Var mul(Tape<S>&, Var, Var);                                                                             \
  template Var scale(Tape<S>&, Var, S);                                                                             \
  template Var global_avg_pool(Tape<S>&, Var);                                                                      \
  template Var broadcast_mul(Tape<S>&, Var, Var);                                                                   \
  template Var sum(Tape<S>&, Var);                                                                                  \
  template Var sum_of_squares(Tape<S>&, Var);                                                                       \
  template Var inner_product(Tape<S>&, Var, Matrix<S>);                                                             \
  template Var wce_loss(Tape<S>&, Var, std::vector<int>, std::vector<double>);                                      \
  template Var geo_loss(Tape<S>&, Var, std::vector<int>, Anisotropy);                                               \
  template LossTerms<S> total_loss(Tape<S>&, Var, std::vector<int>, std::vector<double>, Anisotropy,                \
                                   const LossWeights&);

S3NET_INSTANTIATE_GRAPH(float)
S3NET_INSTANTIATE_GRAPH(double)

#undef S3NET_INSTANTIATE_GRAPH

}  // namespace s3net::graph
