#include "s3net/modules.hpp"

#include <cmath>
#include <stdexcept>

namespace s3net {

int NetworkConfig::level_input_channels(int level) const {
  return level == 0 ? stem_channels : encoder_channels.at(static_cast<std::size_t>(level - 1));
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid network config: " + what); };
  if (input_channels < 1) fail("input_channels must be positive");
  if (class_count < 1) fail("class_count must be positive");
  if (stem_channels < 1) fail("stem_channels must be positive");
  if (encoder_channels.empty()) fail("at least one encoder level is required");
  if (kernel_size < 1 || kernel_size % 2 == 0) fail("kernel_size must be odd");
  if (!(damping > 0.0 && damping <= 1.0)) fail("damping must lie in (0, 1]");
  if (reduction < 1) fail("reduction must be positive");
  if (encoder_tower_depth < 1 || decoder_tower_depth < 1) fail("tower depth must be positive");
  for (const auto* flags : {&encoder_inter, &encoder_intra, &decoder_inter}) {
    if (!flags->empty() && static_cast<int>(flags->size()) != levels()) fail("attention flags must have one entry per level");
  }
  for (int l = 0; l < levels(); ++l) {
    if (encoder_channels[static_cast<std::size_t>(l)] < 1) fail("encoder channels must be positive");
    const int c = level_input_channels(l);
    if ((has_encoder_inter(l) || has_decoder_inter(l)) && c % reduction != 0) {
      fail("reduction " + std::to_string(reduction) + " does not divide " + std::to_string(c) + " channels at level " +
           std::to_string(l));
    }
  }
}

KernelMapPtr KernelMapCache::kernel_map(const CoordinateMapPtr& in, const CoordinateMapPtr& out, int kernel_size,
                                        int in_stride) {
  const Key key{in.get(), out.get(), kernel_size, in_stride};
  if (auto it = maps_.find(key); it != maps_.end()) return it->second;
  auto kmap = std::make_shared<const KernelMap>(
      build_kernel_map(*in, *out, build_kernel_offsets(kernel_size), in_stride, workers_));
  keep_alive_.push_back(in);
  keep_alive_.push_back(out);
  maps_.emplace(key, kmap);
  return kmap;
}

CoordinateMapPtr KernelMapCache::strided(const CoordinateMapPtr& in, int in_stride, int factor) {
  const Key key{in.get(), nullptr, in_stride, factor};
  if (auto it = strided_.find(key); it != strided_.end()) return it->second;
  auto out = std::make_shared<const CoordinateMap>(stride_coordinates(*in, in_stride, factor));
  keep_alive_.push_back(in);
  strided_.emplace(key, out);
  return out;
}

const CoordinateMapPtr& CoordinateCache::level(int l) const {
  if (l < 0 || static_cast<std::size_t>(l) >= coords.size() || !coords[static_cast<std::size_t>(l)]) {
    throw std::out_of_range("no cached coordinate map for level " + std::to_string(l));
  }
  return coords[static_cast<std::size_t>(l)];
}

const KernelMapPtr& CoordinateCache::down_map(int l) const {
  if (l < 0 || static_cast<std::size_t>(l) >= down_maps.size() || !down_maps[static_cast<std::size_t>(l)]) {
    throw std::out_of_range("no cached kernel map for level " + std::to_string(l));
  }
  return down_maps[static_cast<std::size_t>(l)];
}

template <typename Scalar>
Var ForwardContext<Scalar>::param(ParamId id) {
  if (auto it = bound_.find(id); it != bound_.end()) return it->second;
  const Var v = tape.parameter(store, id);
  bound_.emplace(id, v);
  return v;
}

template <typename Scalar>
Matrix<Scalar> LayerBuilder<Scalar>::normal(Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<Scalar>(dist(rng_));
  return m;
}

template <typename Scalar>
ConvLayer LayerBuilder<Scalar>::conv(const std::string& name, int in, int out, int kernel_size, int stride_factor,
                                     bool bias) {
  const int volume = kernel_size * kernel_size * kernel_size;
  ConvLayer layer;
  layer.in_channels = in;
  layer.out_channels = out;
  layer.kernel_size = kernel_size;
  layer.stride_factor = stride_factor;
  layer.kernel = store_.add(name + ".kernel", normal(volume * in, out, std::sqrt(2.0 / (volume * in))));
  if (bias) layer.bias = store_.add(name + ".bias", Matrix<Scalar>::Zero(1, out));
  return layer;
}

template <typename Scalar>
ConvLayer LayerBuilder<Scalar>::conv_transpose(const std::string& name, int in, int out, int kernel_size) {
  const int volume = kernel_size * kernel_size * kernel_size;
  ConvLayer layer;
  layer.in_channels = in;
  layer.out_channels = out;
  layer.kernel_size = kernel_size;
  layer.kernel = store_.add(name + ".kernel", normal(volume * out, in, std::sqrt(2.0 / (volume * in))));
  return layer;
}

template <typename Scalar>
BatchNormLayer LayerBuilder<Scalar>::batch_norm(const std::string& name, int channels) {
  BatchNormLayer layer;
  layer.gamma = store_.add(name + ".gamma", Matrix<Scalar>::Ones(1, channels));
  layer.beta = store_.add(name + ".beta", Matrix<Scalar>::Zero(1, channels));
  layer.running_mean = store_.add(name + ".running_mean", Matrix<Scalar>::Zero(1, channels), false);
  layer.running_var = store_.add(name + ".running_var", Matrix<Scalar>::Ones(1, channels), false);
  return layer;
}

template <typename Scalar>
LinearLayer LayerBuilder<Scalar>::linear(const std::string& name, int in, int out) {
  LinearLayer layer;
  layer.weight = store_.add(name + ".weight", normal(in, out, std::sqrt(2.0 / in)));
  layer.bias = store_.add(name + ".bias", Matrix<Scalar>::Zero(1, out));
  return layer;
}

template <typename Scalar>
SIntraAMLayer LayerBuilder<Scalar>::sintra_am(const std::string& name, int channels, int kernel_size) {
  return {conv(name + ".conv_a", channels, channels, kernel_size), conv(name + ".conv_b", channels, channels, kernel_size)};
}

template <typename Scalar>
SInterAMLayer LayerBuilder<Scalar>::sinter_am(const std::string& name, int channels, int reduction, double damping) {
  if (reduction < 1 || channels % reduction != 0) {
    throw std::invalid_argument("reduction " + std::to_string(reduction) + " does not divide " +
                                std::to_string(channels) + " channels");
  }
  const int hidden = channels / reduction;
  return {linear(name + ".squeeze", channels, hidden), linear(name + ".excite", hidden, channels), damping};
}

template <typename Scalar>
ResModuleLayer LayerBuilder<Scalar>::sres_module(const std::string& name, int in, int out, int kernel_size,
                                                 int stride_factor) {
  ResModuleLayer layer;
  layer.conv1 = conv(name + ".conv1", in, out, kernel_size, stride_factor);
  layer.bn1 = batch_norm(name + ".bn1", out);
  layer.conv2 = conv(name + ".conv2", out, out, kernel_size);
  layer.bn2 = batch_norm(name + ".bn2", out);
  layer.skip = conv(name + ".skip", in, out, 1, stride_factor);
  return layer;
}

template <typename Scalar>
ResTowerLayer LayerBuilder<Scalar>::sres_tower(const std::string& name, int in, int out, int kernel_size, int count,
                                               int stride_factor) {
  ResTowerLayer tower;
  for (int m = 0; m < count; ++m) {
    tower.modules.push_back(sres_module(name + "." + std::to_string(m), m == 0 ? in : out, out, kernel_size,
                                        m == 0 ? stride_factor : 1));
  }
  return tower;
}

template <typename Scalar>
Var apply_conv(ForwardContext<Scalar>& ctx, const ConvLayer& layer, Var x) {
  const CoordinateMapPtr& in = ctx.tape.coords(x);
  if (!in) throw ShapeError("convolution input has no coordinates");
  if (ctx.tape.value(x).cols() != layer.in_channels) {
    throw ShapeError("convolution expects " + std::to_string(layer.in_channels) + " channels, got " +
                     std::to_string(ctx.tape.value(x).cols()));
  }
  const int in_stride = ctx.tape.stride(x);
  CoordinateMapPtr out = layer.stride_factor > 1 ? ctx.kernels.strided(in, in_stride, layer.stride_factor) : in;
  const KernelMapPtr kmap = ctx.kernels.kernel_map(in, out, layer.kernel_size, in_stride);
  const std::optional<Var> bias = layer.bias >= 0 ? std::optional<Var>(ctx.param(layer.bias)) : std::nullopt;
  return graph::conv(ctx.tape, x, ctx.param(layer.kernel), bias, kmap, out, in_stride * layer.stride_factor);
}

template <typename Scalar>
Var apply_batch_norm(ForwardContext<Scalar>& ctx, const BatchNormLayer& layer, Var x) {
  auto& mean = ctx.store[layer.running_mean].value;
  auto& var = ctx.store[layer.running_var].value;
  BatchNormState<Scalar> state{mean.row(0), var.row(0)};
  BatchNormOptions options = ctx.batch_norm;
  options.training = ctx.training;
  const Var out = graph::batch_norm(ctx.tape, x, ctx.param(layer.gamma), ctx.param(layer.beta), state, options);
  if (ctx.training) {
    mean.row(0) = state.running_mean;
    var.row(0) = state.running_var;
  }
  return out;
}

template <typename Scalar>
Var apply_linear(ForwardContext<Scalar>& ctx, const LinearLayer& layer, Var x) {
  return graph::linear(ctx.tape, x, ctx.param(layer.weight), ctx.param(layer.bias));
}

template <typename Scalar>
Var sintra_am(ForwardContext<Scalar>& ctx, const SIntraAMLayer& layer, Var x) {
  const Var hidden = graph::relu(ctx.tape, apply_conv(ctx, layer.conv_a, x));
  const Var mask = graph::sigmoid(ctx.tape, apply_conv(ctx, layer.conv_b, hidden));
  return graph::add(ctx.tape, x, graph::mul(ctx.tape, x, mask));
}

template <typename Scalar>
Var sinter_am(ForwardContext<Scalar>& ctx, const SInterAMLayer& layer, Var x) {
  const Var pooled = graph::global_avg_pool(ctx.tape, x);
  const Var hidden = graph::relu(ctx.tape, apply_linear(ctx, layer.squeeze, pooled));
  const Var weights = graph::sigmoid(ctx.tape, apply_linear(ctx, layer.excite, hidden));
  return graph::scale(ctx.tape, graph::broadcast_mul(ctx.tape, x, weights), static_cast<Scalar>(layer.damping));
}

template <typename Scalar>
Var sres_module(ForwardContext<Scalar>& ctx, const ResModuleLayer& layer, Var x) {
  Var main = apply_batch_norm(ctx, layer.bn1, graph::relu(ctx.tape, apply_conv(ctx, layer.conv1, x)));
  main = apply_batch_norm(ctx, layer.bn2, graph::relu(ctx.tape, apply_conv(ctx, layer.conv2, main)));
  return graph::add(ctx.tape, main, apply_conv(ctx, layer.skip, x));
}

template <typename Scalar>
Var sres_tower(ForwardContext<Scalar>& ctx, const ResTowerLayer& layer, Var x) {
  for (std::size_t m = 0; m < layer.modules.size(); ++m) {
    if (m > 0 && layer.modules[m].conv1.stride_factor != 1) throw std::invalid_argument("only the first ResModule may stride");
    x = sres_module(ctx, layer.modules[m], x);
  }
  return x;
}

template <typename Scalar>
S3Net<Scalar>::S3Net(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  LayerBuilder<Scalar> build(params_, seed);
  const int k = config_.kernel_size;
  stem_ = build.conv("stem.conv", config_.input_channels, config_.stem_channels, k);
  stem_bn_ = build.batch_norm("stem.bn", config_.stem_channels);

  for (int l = 0; l < config_.levels(); ++l) {
    const std::string name = "encoder." + std::to_string(l);
    const int in = config_.level_input_channels(l);
    const int out = config_.encoder_channels[static_cast<std::size_t>(l)];
    EncoderLevel level;
    if (config_.has_encoder_inter(l)) level.inter = build.sinter_am(name + ".inter", in, config_.reduction, config_.damping);
    if (config_.has_encoder_intra(l)) level.intra = build.sintra_am(name + ".intra", in, k);
    level.tower = build.sres_tower(name + ".tower", in, out, k, config_.encoder_tower_depth, 2);
    encoder_.push_back(std::move(level));
  }

  decoder_.resize(static_cast<std::size_t>(config_.levels()));
  for (int l = config_.levels() - 1; l >= 0; --l) {
    const std::string name = "decoder." + std::to_string(l);
    const int in = l == config_.levels() - 1 ? config_.encoder_channels.back() : config_.level_input_channels(l + 1);
    const int out = config_.level_input_channels(l);
    DecoderLevel& level = decoder_[static_cast<std::size_t>(l)];
    level.up = build.conv_transpose(name + ".up", in, out, k);
    level.lateral = build.conv(name + ".lateral", out, out, 1);
    if (config_.has_decoder_inter(l)) level.inter = build.sinter_am(name + ".inter", out, config_.reduction, config_.damping);
    level.tower = build.sres_tower(name + ".tower", out, out, k, config_.decoder_tower_depth, 1);
  }
  classifier_ = build.conv("classifier", config_.stem_channels, config_.class_count, 1);
}

template <typename Scalar>
ForwardResult<Scalar> S3Net<Scalar>::forward(ForwardContext<Scalar>& ctx, Var input) const {
  if (ctx.tape.value(input).cols() != config_.input_channels) {
    throw ShapeError("network expects " + std::to_string(config_.input_channels) + " input channels, got " +
                     std::to_string(ctx.tape.value(input).cols()));
  }
  ForwardResult<Scalar> result;
  CoordinateCache& cache = result.cache;

  Var x = graph::relu(ctx.tape, apply_batch_norm(ctx, stem_bn_, apply_conv(ctx, stem_, input)));
  std::vector<Var> skips;
  for (int l = 0; l < config_.levels(); ++l) {
    const EncoderLevel& level = encoder_[static_cast<std::size_t>(l)];
    const CoordinateMapPtr level_coords = ctx.tape.coords(x);
    const int level_stride = ctx.tape.stride(x);
    cache.coords.push_back(level_coords);
    cache.strides.push_back(level_stride);
    skips.push_back(x);

    if (level.inter) x = sinter_am(ctx, *level.inter, x);
    if (level.intra) x = sintra_am(ctx, *level.intra, x);
    x = sres_tower(ctx, level.tower, x);
    cache.down_maps.push_back(
        ctx.kernels.kernel_map(level_coords, ctx.tape.coords(x), config_.kernel_size, level_stride));
  }

  for (int l = config_.levels() - 1; l >= 0; --l) {
    const DecoderLevel& level = decoder_[static_cast<std::size_t>(l)];
    const Var up = graph::conv_transpose(ctx.tape, x, ctx.param(level.up.kernel), cache.down_map(l), cache.level(l),
                                         cache.strides[static_cast<std::size_t>(l)]);
    x = graph::add(ctx.tape, up, apply_conv(ctx, level.lateral, skips[static_cast<std::size_t>(l)]));
    if (level.inter) x = sinter_am(ctx, *level.inter, x);
    x = sres_tower(ctx, level.tower, x);
  }
  result.decoder_features = x;
  result.logits = apply_conv(ctx, classifier_, x);
  return result;
}

template <typename Scalar>
Matrix<Scalar> S3Net<Scalar>::predict(const SparseTensor<Scalar>& input, bool training_mode) {
  Tape<Scalar> tape;
  KernelMapCache kernels;
  ForwardContext<Scalar> ctx{tape, params_, kernels, training_mode,
                             BatchNormOptions{training_mode, config_.bn_momentum, config_.bn_eps}};
  const auto result = forward(ctx, tape.input(input));
  return tape.value(result.logits);
}

template <typename Scalar>
std::vector<int> argmax_rows(const Matrix<Scalar>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()), 0);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

#define S3NET_INSTANTIATE_MODULES(S)                                                    \
  template struct ForwardContext<S>;                                                    \
  template class LayerBuilder<S>;                                                       \
  template class S3Net<S>;                                                              \
  template Var apply_conv(ForwardContext<S>&, const ConvLayer&, Var);                   \
  template Var apply_batch_norm(ForwardContext<S>&, const BatchNormLayer&, Var);        \
  template Var apply_linear(ForwardContext<S>&, const LinearLayer&, Var);               \
  template Var sintra_am(ForwardContext<S>&, const SIntraAMLayer&, Var);                \
  template Var sinter_am(ForwardContext<S>&, const SInterAMLayer&, Var);                \
  template Var sres_module(ForwardContext<S>&, const ResModuleLayer&, Var);             \
  template Var sres_tower(ForwardContext<S>&, const ResTowerLayer&, Var);               \
  template std::vector<int> argmax_rows(const Matrix<S>&);

S3NET_INSTANTIATE_MODULES(float)
S3NET_INSTANTIATE_MODULES(double)

#undef S3NET_INSTANTIATE_MODULES

}  // namespace s3net
