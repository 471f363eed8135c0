#pragma once

#include "s3net/graph.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

namespace s3net {

struct NetworkConfig {
  int input_channels = 4;  // intensity, n_x, n_y, n_z
  int class_count = 19;
  int stem_channels = 32;
  std::vector<int> encoder_channels{32, 64, 128, 256};
  int kernel_size = 3;
  double damping = 0.35;  // SInterAM lambda
  int reduction = 4;      // SInterAM bottleneck ratio
  int encoder_tower_depth = 3;
  int decoder_tower_depth = 2;
  // Per-level attention placement; empty means "enabled at every level".
  std::vector<bool> encoder_inter;
  std::vector<bool> encoder_intra;
  std::vector<bool> decoder_inter;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  int levels() const { return static_cast<int>(encoder_channels.size()); }
  /// Channels entering encoder level `level` (and leaving decoder level `level`).
  int level_input_channels(int level) const;
  bool has_encoder_inter(int level) const { return flag(encoder_inter, level); }
  bool has_encoder_intra(int level) const { return flag(encoder_intra, level); }
  bool has_decoder_inter(int level) const { return flag(decoder_inter, level); }

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

private:
  static bool flag(const std::vector<bool>& flags, int level) {
    return flags.empty() || flags.at(static_cast<std::size_t>(level));
  }
};

/// Memoizes kernel maps and strided coordinate sets for one forward pass.
class KernelMapCache {
public:
  explicit KernelMapCache(int workers = 1) : workers_(workers) {}

  KernelMapPtr kernel_map(const CoordinateMapPtr& in, const CoordinateMapPtr& out, int kernel_size, int in_stride);
  CoordinateMapPtr strided(const CoordinateMapPtr& in, int in_stride, int factor);

private:
  using Key = std::tuple<const CoordinateMap*, const CoordinateMap*, int, int>;
  int workers_;
  std::map<Key, KernelMapPtr> maps_;
  std::map<Key, CoordinateMapPtr> strided_;
  std::vector<CoordinateMapPtr> keep_alive_;
};

/// Coordinate maps (and their downsampling kernel maps) recorded while encoding.
struct CoordinateCache {
  std::vector<CoordinateMapPtr> coords;  // input coordinates of each encoder level
  std::vector<int> strides;
  std::vector<KernelMapPtr> down_maps;  // level l coords -> level l + 1 coords

  /// Throws std::out_of_range("no cached coordinate map for level N").
  const CoordinateMapPtr& level(int l) const;
  const KernelMapPtr& down_map(int l) const;
};

template <typename Scalar>
struct ForwardContext {
  ForwardContext(Tape<Scalar>& t, ParameterStore<Scalar>& s, KernelMapCache& k, bool train = true,
                 BatchNormOptions bn = {})
      : tape(t), store(s), kernels(k), training(train), batch_norm(bn) {}

  Tape<Scalar>& tape;
  ParameterStore<Scalar>& store;
  KernelMapCache& kernels;
  bool training = true;
  BatchNormOptions batch_norm{};

  /// Binds a parameter to the tape once and returns the same Var on later calls.
  Var param(ParamId id);

private:
  std::map<ParamId, Var> bound_;
};

struct ConvLayer {
  ParamId kernel = -1;
  ParamId bias = -1;  // -1: no bias
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 1;
  int stride_factor = 1;
};

struct BatchNormLayer {
  ParamId gamma = -1;
  ParamId beta = -1;
  ParamId running_mean = -1;
  ParamId running_var = -1;
};

struct LinearLayer {
  ParamId weight = -1;
  ParamId bias = -1;
};

struct SIntraAMLayer {
  ConvLayer conv_a;
  ConvLayer conv_b;
};

struct SInterAMLayer {
  LinearLayer squeeze;
  LinearLayer excite;
  double damping = 0.35;
};

struct ResModuleLayer {
  ConvLayer conv1;
  BatchNormLayer bn1;
  ConvLayer conv2;
  BatchNormLayer bn2;
  ConvLayer skip;
};

struct ResTowerLayer {
  std::vector<ResModuleLayer> modules;
};

struct EncoderLevel {
  std::optional<SInterAMLayer> inter;
  std::optional<SIntraAMLayer> intra;
  ResTowerLayer tower;
};

// Decoder levels carry no intra-channel attention.
struct DecoderLevel {
  ConvLayer up;       // transposed onto the cached encoder coordinates
  ConvLayer lateral;  // size-1 conv aligning skip-feature channels
  std::optional<SInterAMLayer> inter;
  ResTowerLayer tower;
};

/// Parameter factories. Kernels are He-normal, biases and BN shifts zero, BN scales one.
template <typename Scalar>
class LayerBuilder {
public:
  LayerBuilder(ParameterStore<Scalar>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  ConvLayer conv(const std::string& name, int in, int out, int kernel_size, int stride_factor = 1, bool bias = true);
  /// Transposed conv weights are stored like a forward conv from `out` to `in` channels.
  ConvLayer conv_transpose(const std::string& name, int in, int out, int kernel_size);
  BatchNormLayer batch_norm(const std::string& name, int channels);
  LinearLayer linear(const std::string& name, int in, int out);
  SIntraAMLayer sintra_am(const std::string& name, int channels, int kernel_size);
  SInterAMLayer sinter_am(const std::string& name, int channels, int reduction, double damping);
  ResModuleLayer sres_module(const std::string& name, int in, int out, int kernel_size, int stride_factor);
  ResTowerLayer sres_tower(const std::string& name, int in, int out, int kernel_size, int count, int stride_factor);

private:
  Matrix<Scalar> normal(Eigen::Index rows, Eigen::Index cols, double stddev);

  ParameterStore<Scalar>& store_;
  std::mt19937_64 rng_;
};

template <typename Scalar>
Var apply_conv(ForwardContext<Scalar>& ctx, const ConvLayer& layer, Var x);

template <typename Scalar>
Var apply_batch_norm(ForwardContext<Scalar>& ctx, const BatchNormLayer& layer, Var x);

template <typename Scalar>
Var apply_linear(ForwardContext<Scalar>& ctx, const LinearLayer& layer, Var x);

/// x + x * sigmoid(conv_b(relu(conv_a(x)))), coordinates unchanged.
template <typename Scalar>
Var sintra_am(ForwardContext<Scalar>& ctx, const SIntraAMLayer& layer, Var x);

/// damping * x scaled per batch by sigmoid(excite(relu(squeeze(avg_pool(x))))).
template <typename Scalar>
Var sinter_am(ForwardContext<Scalar>& ctx, const SInterAMLayer& layer, Var x);

/// BN(relu(conv2(BN(relu(conv1(x)))))) + skip(x); conv1 and skip carry the stride.
template <typename Scalar>
Var sres_module(ForwardContext<Scalar>& ctx, const ResModuleLayer& layer, Var x);

template <typename Scalar>
Var sres_tower(ForwardContext<Scalar>& ctx, const ResTowerLayer& layer, Var x);

template <typename Scalar>
struct ForwardResult {
  Var logits;
  Var decoder_features;  // output of the last decoder level
  CoordinateCache cache;
};

/// Encoder-decoder segmentation network over sparse voxel tensors.
template <typename Scalar>
class S3Net {
public:
  explicit S3Net(NetworkConfig config, std::uint64_t seed = 0);

  ForwardResult<Scalar> forward(ForwardContext<Scalar>& ctx, Var input) const;

  /// Convenience inference pass (no gradients). Returns per-row logits.
  Matrix<Scalar> predict(const SparseTensor<Scalar>& input, bool training_mode = false);

  const NetworkConfig& config() const { return config_; }
  ParameterStore<Scalar>& parameters() { return params_; }
  const ParameterStore<Scalar>& parameters() const { return params_; }
  const std::vector<EncoderLevel>& encoder() const { return encoder_; }
  const std::vector<DecoderLevel>& decoder() const { return decoder_; }
  const ConvLayer& classifier() const { return classifier_; }

private:
  NetworkConfig config_;
  ParameterStore<Scalar> params_;
  ConvLayer stem_;
  BatchNormLayer stem_bn_;
  std::vector<EncoderLevel> encoder_;
  std::vector<DecoderLevel> decoder_;
  ConvLayer classifier_;
};

/// Argmax per row, ties resolved toward the lowest class index.
template <typename Scalar>
std::vector<int> argmax_rows(const Matrix<Scalar>& logits);

}  // namespace s3net
