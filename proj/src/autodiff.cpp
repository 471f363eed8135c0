#include "s3net/autodiff.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace s3net {

template <typename Scalar>
ParamId ParameterStore<Scalar>::add(std::string name, Matrix<Scalar> value, bool trainable) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Parameter<Scalar> p;
  p.name = std::move(name);
  p.grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
  p.first_moment = Matrix<Scalar>::Zero(value.rows(), value.cols());
  p.second_moment = Matrix<Scalar>::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  p.trainable = trainable;
  params_.push_back(std::move(p));
  return static_cast<ParamId>(params_.size() - 1);
}

template <typename Scalar>
std::optional<ParamId> ParameterStore<Scalar>::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<ParamId>(i);
  }
  return std::nullopt;
}

template <typename Scalar>
void ParameterStore<Scalar>::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

template <typename Scalar>
std::size_t ParameterStore<Scalar>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += static_cast<std::size_t>(p.value.size());
  }
  return n;
}

template <typename Scalar>
void adam_step(ParameterStore<Scalar>& store, const AdamConfig& config) {
  const auto lr = static_cast<Scalar>(config.learning_rate);
  const auto b1 = static_cast<Scalar>(config.beta1);
  const auto b2 = static_cast<Scalar>(config.beta2);
  const auto eps = static_cast<Scalar>(config.eps);
  const auto wd = static_cast<Scalar>(config.weight_decay);
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    ++p.step;
    if (wd != Scalar(0)) p.value -= lr * wd * p.value;
    p.first_moment = b1 * p.first_moment + (Scalar(1) - b1) * p.grad;
    p.second_moment = b2 * p.second_moment + (Scalar(1) - b2) * p.grad.cwiseAbs2();
    const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(p.step));
    const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(p.step));
    p.value.array() -= lr * (p.first_moment.array() / c1) / ((p.second_moment.array() / c2).sqrt() + eps);
  }
}

double exp_lr(int epoch, double base_lr, double decay, int period) {
  if (epoch < 0) throw std::invalid_argument("epoch must be non-negative");
  if (period < 1) throw std::invalid_argument("scheduler period must be positive");
  const double raw = base_lr * std::pow(decay, epoch / period);
  // Hyperparameters are decimal; drop the binary product error below 15 significant digits
  // so that e.g. 0.001 * 0.9^2 yields the same double as the literal 0.00081.
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, raw, std::chars_format::scientific, 14);
  double snapped = raw;
  if (ec == std::errc{}) std::from_chars(buf, end, snapped);
  return snapped;
}

template <typename Scalar>
Var Tape<Scalar>::input(const SparseTensor<Scalar>& tensor, bool requires_grad) {
  Node n;
  n.value = tensor.features;
  n.coords = tensor.coords;
  n.stride = tensor.stride;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size() - 1)};
}

template <typename Scalar>
Var Tape<Scalar>::input(Matrix<Scalar> value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size() - 1)};
}

template <typename Scalar>
Var Tape<Scalar>::parameter(ParameterStore<Scalar>& store, ParamId id) {
  Node n;
  n.value = store[id].value;
  n.requires_grad = store[id].trainable;
  n.store = &store;
  n.param = id;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size() - 1)};
}

template <typename Scalar>
Var Tape<Scalar>::record(Matrix<Scalar> value, CoordinateMapPtr coords, int stride, std::initializer_list<Var> inputs,
                         BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.coords = std::move(coords);
  n.stride = stride;
  for (Var in : inputs) {
    if (in.id < 0 || static_cast<std::size_t>(in.id) >= nodes_.size()) throw std::out_of_range("unknown tape value");
    n.requires_grad = n.requires_grad || node(in).requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size() - 1)};
}

template <typename Scalar>
Matrix<Scalar>& Tape<Scalar>::grad(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad = Matrix<Scalar>::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename Scalar>
void Tape<Scalar>::accumulate(Var v, const Matrix<Scalar>& g) {
  if (!node(v).requires_grad) return;
  Matrix<Scalar>& target = grad(v);
  if (target.rows() != g.rows() || target.cols() != g.cols()) {
    throw ShapeError("gradient shape " + std::to_string(g.rows()) + "x" + std::to_string(g.cols()) +
                     " does not match value shape " + std::to_string(target.rows()) + "x" +
                     std::to_string(target.cols()));
  }
  target += g;
}

template <typename Scalar>
const Matrix<Scalar>* Tape<Scalar>::grad_if_any(Var v) const {
  const Node& n = node(v);
  return n.has_grad ? &n.grad : nullptr;
}

template <typename Scalar>
void Tape<Scalar>::backward(Var loss) {
  const Node& l = node(loss);
  if (l.value.rows() != 1 || l.value.cols() != 1) {
    throw ShapeError("loss must be a scalar, got " + std::to_string(l.value.rows()) + "x" +
                     std::to_string(l.value.cols()));
  }
  grad(loss)(0, 0) = Scalar(1);
  visits_ = 0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.requires_grad) continue;
    ++visits_;
    if (n.backward) {
      n.backward(*this, Var{id});
    } else if (n.store) {
      (*n.store)[n.param].grad += n.grad;
    }
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;
template void adam_step(ParameterStore<float>&, const AdamConfig&);
template void adam_step(ParameterStore<double>&, const AdamConfig&);

}  // namespace s3net
