#pragma once

#include "s3net/sparse_tensor.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace s3net {

using ParamId = int;

/// Named matrix with its gradient and Adam moments. Buffers (trainable == false) are
/// stored and checkpointed like parameters but never receive updates from the optimizer.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  Matrix<Scalar> first_moment;
  Matrix<Scalar> second_moment;
  long step = 0;
  bool trainable = true;
};

template <typename Scalar>
class ParameterStore {
public:
  /// Throws std::invalid_argument if `name` is taken.
  ParamId add(std::string name, Matrix<Scalar> value, bool trainable = true);

  Parameter<Scalar>& operator[](ParamId id) { return params_.at(static_cast<std::size_t>(id)); }
  const Parameter<Scalar>& operator[](ParamId id) const { return params_.at(static_cast<std::size_t>(id)); }

  std::optional<ParamId> find(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::vector<Parameter<Scalar>>& all() { return params_; }
  const std::vector<Parameter<Scalar>>& all() const { return params_; }

  void zero_grad();
  /// Number of trainable scalars.
  std::size_t trainable_count() const;

private:
  std::vector<Parameter<Scalar>> params_;
};

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0005;
};

/// Bias-corrected Adam with decoupled weight decay (value -= lr * wd * value, then the Adam delta).
template <typename Scalar>
void adam_step(ParameterStore<Scalar>& store, const AdamConfig& config);

/// Step-wise exponential decay: base_lr * decay^floor(epoch / period).
double exp_lr(int epoch, double base_lr = 0.001, double decay = 0.9, int period = 10);

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Values are appended in execution order, which makes the node
/// list topologically sorted by construction; backward() walks it once in reverse.
template <typename Scalar>
class Tape {
public:
  using BackwardFn = std::function<void(Tape&, Var self)>;

  /// Leaf holding a sparse tensor's features.
  Var input(const SparseTensor<Scalar>& tensor, bool requires_grad = false);
  /// Leaf holding a dense matrix (no coordinates).
  Var input(Matrix<Scalar> value, bool requires_grad = false);
  /// Leaf bound to a stored parameter; backward() accumulates into its grad field.
  Var parameter(ParameterStore<Scalar>& store, ParamId id);

  /// Appends an op result. `backward` runs only if some input requires a gradient.
  Var record(Matrix<Scalar> value, CoordinateMapPtr coords, int stride, std::initializer_list<Var> inputs,
             BackwardFn backward);

  const Matrix<Scalar>& value(Var v) const { return node(v).value; }
  const CoordinateMapPtr& coords(Var v) const { return node(v).coords; }
  int stride(Var v) const { return node(v).stride; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  SparseTensor<Scalar> tensor(Var v) const { return {node(v).coords, node(v).value, node(v).stride}; }

  /// Gradient of `v`, allocated as zeros on first access.
  Matrix<Scalar>& grad(Var v);
  /// Adds `g` to the gradient of `v` when `v` requires one.
  void accumulate(Var v, const Matrix<Scalar>& g);
  /// Gradient if one was produced, nullptr otherwise.
  const Matrix<Scalar>* grad_if_any(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and propagates. Throws ShapeError for non-scalar losses.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return visits_; }

  /// Folds the outcome of a non-differentiable branch (e.g. ReLU signs) into a running hash.
  /// Two evaluations with equal signatures took the same piecewise-smooth branch.
  void note_branch(std::uint64_t outcome) { branch_signature_ = (branch_signature_ ^ outcome) * 0x100000001b3ull; }
  std::uint64_t branch_signature() const { return branch_signature_; }

private:
  struct Node {
    Matrix<Scalar> value;
    Matrix<Scalar> grad;
    CoordinateMapPtr coords;
    int stride = 1;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    ParameterStore<Scalar>* store = nullptr;
    ParamId param = -1;
  };

  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
  std::uint64_t branch_signature_ = 0xcbf29ce484222325ull;
};

}  // namespace s3net
