#include "s3net/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

namespace s3net {

NetworkConfig GradcheckOptions::toy_network() {
  NetworkConfig n;
  n.input_channels = 4;
  n.class_count = 3;
  n.stem_channels = 8;
  n.encoder_channels = {8, 16, 32, 64};
  return n;
}

namespace {

class Evaluator {
public:
  Evaluator(GradcheckCase& problem, std::uint64_t seed) : problem_(problem), rng_(seed) {}

  // Loss value; with `with_grad`, also runs backward and returns the input gradients.
  double evaluate(bool with_grad, std::vector<Matrix<double>>* input_grads = nullptr,
                  std::uint64_t* branch = nullptr) {
    Tape<double> tape;
    ForwardContext<double> ctx(tape, problem_.params, kernels_, problem_.training, problem_.batch_norm);
    std::vector<Var> inputs;
    for (const auto& t : problem_.inputs) inputs.push_back(tape.input(t, true));
    Var out = problem_.build(ctx, inputs);
    const Matrix<double>& value = tape.value(out);
    if (value.rows() != 1 || value.cols() != 1) {
      if (!projection_) {
        std::normal_distribution<double> dist(0.0, 1.0);
        projection_ = Matrix<double>(value.rows(), value.cols());
        for (Eigen::Index i = 0; i < projection_->size(); ++i) projection_->data()[i] = dist(rng_);
      }
      out = graph::inner_product(tape, out, *projection_);
    }
    if (with_grad) {
      problem_.params.zero_grad();
      tape.backward(out);
      if (input_grads) {
        input_grads->clear();
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          const Matrix<double>* g = tape.grad_if_any(inputs[i]);
          input_grads->push_back(g ? *g : Matrix<double>::Zero(problem_.inputs[i].features.rows(),
                                                                problem_.inputs[i].features.cols()));
        }
      }
    }
    if (branch) *branch = tape.branch_signature();
    return tape.value(out)(0, 0);
  }

  std::mt19937_64& rng() { return rng_; }

private:
  GradcheckCase& problem_;
  KernelMapCache kernels_;
  std::mt19937_64 rng_;
  std::optional<Matrix<double>> projection_;
};

std::vector<Eigen::Index> sample_entries(Eigen::Index size, int samples, std::mt19937_64& rng) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(size));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  if (samples <= 0 || size <= samples) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(samples));
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradcheckResult run_gradcheck(GradcheckCase& problem, const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckResult result;
  result.name = problem.name;
  Evaluator eval(problem, options.seed);

  std::vector<Matrix<double>> input_grads;
  std::uint64_t base_branch = 0;
  result.value = eval.evaluate(true, &input_grads, &base_branch);
  std::vector<Matrix<double>> param_grads;
  for (const auto& p : problem.params.all()) param_grads.push_back(p.grad);

  auto compare = [&](const std::string& label, Eigen::Index index, double& slot, double analytic) {
    const double saved = slot;
    std::uint64_t plus_branch = 0, minus_branch = 0;
    slot = saved + options.step;
    const double plus = eval.evaluate(false, nullptr, &plus_branch);
    slot = saved - options.step;
    const double minus = eval.evaluate(false, nullptr, &minus_branch);
    slot = saved;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double diff = std::abs(analytic - numeric);
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    ++result.checked;
    const bool crossed_kink = plus_branch != base_branch || minus_branch != base_branch;
    const bool mismatch = diff > options.tolerance * scale + options.abs_floor;
    if (mismatch && crossed_kink) {
      ++result.kinked;
      return;
    }
    if (mismatch) {
      ++result.failed;
      if (result.failures.size() < 10) {
        std::ostringstream entry;
        entry << label << '[' << index << "] analytic " << analytic << " numeric " << numeric;
        result.failures.push_back(entry.str());
      }
    }
    if (scale > options.abs_floor && diff / scale > result.max_relative_error) {
      result.max_relative_error = diff / scale;
      std::ostringstream where;
      where << label << '[' << index << "] analytic " << analytic << " numeric " << numeric;
      result.worst = where.str();
    }
  };

  for (std::size_t i = 0; i < problem.inputs.size(); ++i) {
    Matrix<double>& features = problem.inputs[i].features;
    for (Eigen::Index e : sample_entries(features.size(), options.samples_per_tensor, eval.rng())) {
      compare("input" + std::to_string(i), e, features.data()[e], input_grads[i].data()[e]);
    }
  }
  for (std::size_t p = 0; p < problem.params.size(); ++p) {
    auto& param = problem.params.all()[p];
    if (!param.trainable) continue;
    for (Eigen::Index e : sample_entries(param.value.size(), options.samples_per_tensor, eval.rng())) {
      compare(param.name, e, param.value.data()[e], param_grads[p].data()[e]);
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

namespace {

// Random voxels inside a box (one batch by default), features ~ N(0, 1).
SparseTensor<double> random_tensor(std::mt19937_64& rng, int count, std::array<int, 3> extent, int channels,
                                   int batches = 1, int stride = 1) {
  std::uniform_int_distribution<int> cx(0, extent[0] - 1), cy(0, extent[1] - 1), cz(0, extent[2] - 1);
  std::set<Coordinate> picked;
  for (int b = 0; b < batches; ++b) {
    std::set<Coordinate> batch;
    while (static_cast<int>(batch.size()) < count) batch.insert({b, cx(rng) * stride, cy(rng) * stride, cz(rng) * stride});
    picked.insert(batch.begin(), batch.end());
  }
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix<double> features(static_cast<Eigen::Index>(picked.size()), channels);
  for (Eigen::Index i = 0; i < features.size(); ++i) features.data()[i] = dist(rng);
  auto coords = std::make_shared<const CoordinateMap>(std::vector<Coordinate>(picked.begin(), picked.end()));
  return {coords, features, stride};
}

std::vector<int> random_labels(std::mt19937_64& rng, Eigen::Index n, int classes, bool with_ignore) {
  std::uniform_int_distribution<int> dist(with_ignore ? -1 : 0, classes - 1);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (auto& l : labels) l = dist(rng);
  if (with_ignore && !labels.empty()) labels[0] = 0;
  return labels;
}

// Random offsets on top of the initializer, so zero-initialized biases and unit BN scales
// do not hide mistakes. Shifts move ReLU inputs away from their kinks.
void perturb_parameters(ParameterStore<double>& store, std::mt19937_64& rng, double shift_stddev, double scale_stddev) {
  std::normal_distribution<double> unit(0.0, 1.0);
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    const bool shift = p.name.ends_with(".bias") || p.name.ends_with(".beta");
    const double stddev = shift ? shift_stddev : scale_stddev;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += stddev * unit(rng);
  }
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options,
                                                 const std::function<void(const GradcheckResult&)>& on_result) {
  std::mt19937_64 rng(options.seed);
  std::vector<GradcheckResult> results;
  auto run = [&](GradcheckCase& c, double scale_stddev = 0.3) {
    perturb_parameters(c.params, rng, 0.3, scale_stddev);
    results.push_back(run_gradcheck(c, options));
    if (on_result) on_result(results.back());
  };

  {
    GradcheckCase c;
    c.name = "sparse conv";
    LayerBuilder<double> build(c.params, options.seed);
    const ConvLayer layer = build.conv("conv", 3, 4, 3);
    c.inputs.push_back(random_tensor(rng, 40, {5, 5, 5}, 3));
    c.build = [layer](ForwardContext<double>& ctx, std::span<const Var> x) { return apply_conv(ctx, layer, x[0]); };
    run(c);
  }
  {
    GradcheckCase c;
    c.name = "sparse conv (stride 2)";
    LayerBuilder<double> build(c.params, options.seed + 1);
    const ConvLayer layer = build.conv("conv", 3, 4, 3, 2);
    c.inputs.push_back(random_tensor(rng, 40, {6, 6, 6}, 3));
    c.build = [layer](ForwardContext<double>& ctx, std::span<const Var> x) { return apply_conv(ctx, layer, x[0]); };
    run(c);
  }
  {
    GradcheckCase c;
    c.name = "conv transpose";
    LayerBuilder<double> build(c.params, options.seed + 2);
    const ConvLayer layer = build.conv_transpose("up", 4, 3, 3);
    const SparseTensor<double> fine = random_tensor(rng, 40, {6, 6, 6}, 3);
    auto coarse_coords = std::make_shared<const CoordinateMap>(stride_coordinates(*fine.coords, 1, 2));
    SparseTensor<double> coarse{coarse_coords, Matrix<double>::Random(static_cast<Eigen::Index>(coarse_coords->size()), 4), 2};
    const auto kmap = std::make_shared<const KernelMap>(build_kernel_map(*fine.coords, *coarse_coords, build_kernel_offsets(3), 1));
    c.inputs.push_back(coarse);
    const CoordinateMapPtr target = fine.coords;
    c.build = [layer, kmap, target](ForwardContext<double>& ctx, std::span<const Var> x) {
      return graph::conv_transpose(ctx.tape, x[0], ctx.param(layer.kernel), kmap, target, 1);
    };
    run(c);
  }
  {
    GradcheckCase c;
    c.name = "batch norm";
    LayerBuilder<double> build(c.params, options.seed + 3);
    const BatchNormLayer layer = build.batch_norm("bn", 4);
    c.inputs.push_back(random_tensor(rng, 30, {6, 6, 6}, 4));
    c.build = [layer](ForwardContext<double>& ctx, std::span<const Var> x) { return apply_batch_norm(ctx, layer, x[0]); };
    run(c);
  }
  {
    GradcheckCase c;
    c.name = "SIntraAM";
    LayerBuilder<double> build(c.params, options.seed + 4);
    const SIntraAMLayer layer = build.sintra_am("intra", 4, 3);
    c.inputs.push_back(random_tensor(rng, 40, {5, 5, 5}, 4));
    c.build = [layer](ForwardContext<double>& ctx, std::span<const Var> x) { return sintra_am(ctx, layer, x[0]); };
    run(c);
  }
  {
    GradcheckCase c;
    c.name = "SInterAM";
    LayerBuilder<double> build(c.params, options.seed + 5);
    const SInterAMLayer layer = build.sinter_am("inter", 8, 4, 0.35);
    c.inputs.push_back(random_tensor(rng, 20, {5, 5, 5}, 8, 2));
    c.build = [layer](ForwardContext<double>& ctx, std::span<const Var> x) { return sinter_am(ctx, layer, x[0]); };
    run(c);
  }
  {
    GradcheckCase c;
    c.name = "ResModule";
    LayerBuilder<double> build(c.params, options.seed + 6);
    const ResModuleLayer layer = build.sres_module("res", 3, 4, 3, 2);
    c.inputs.push_back(random_tensor(rng, 60, {6, 6, 6}, 3));
    c.build = [layer](ForwardContext<double>& ctx, std::span<const Var> x) { return sres_module(ctx, layer, x[0]); };
    run(c);
  }

  const std::vector<double> alpha{0.7, 1.3, 2.1, 0.9, 1.6};
  {
    GradcheckCase c;
    c.name = "wce loss";
    c.inputs.push_back(random_tensor(rng, 30, {5, 5, 5}, 5));
    auto labels = random_labels(rng, c.inputs[0].rows(), 5, true);
    c.build = [labels, alpha](ForwardContext<double>& ctx, std::span<const Var> x) {
      return graph::wce_loss(ctx.tape, x[0], labels, alpha);
    };
    run(c);
  }
  {
    GradcheckCase c;
    c.name = "geo loss";
    c.inputs.push_back(random_tensor(rng, 60, {4, 4, 4}, 3));
    auto labels = random_labels(rng, c.inputs[0].rows(), 3, true);
    Anisotropy anisotropy = compute_mlga(*c.inputs[0].coords, labels);
    c.build = [labels, anisotropy](ForwardContext<double>& ctx, std::span<const Var> x) {
      return graph::geo_loss(ctx.tape, x[0], labels, anisotropy);
    };
    run(c);
  }
  {
    GradcheckCase c;
    c.name = "total loss";
    c.inputs.push_back(random_tensor(rng, 60, {4, 4, 4}, 5));
    auto labels = random_labels(rng, c.inputs[0].rows(), 5, true);
    Anisotropy anisotropy = compute_mlga(*c.inputs[0].coords, labels);
    c.build = [labels, alpha, anisotropy](ForwardContext<double>& ctx, std::span<const Var> x) {
      return graph::total_loss(ctx.tape, x[0], labels, alpha, anisotropy, LossWeights{}).total;
    };
    run(c);
  }
  // Batch-statistics BN over only a handful of rows is nearly singular (1 / sigma with sigma
  // close to 0 after a ReLU), which puts central differences at this step off by more than the
  // tolerance. The compact patch keeps deep levels at one or many rows; the spread cloud has
  // many rows everywhere and runs BN on running statistics.
  auto network_case = [&](const std::string& name, bool training, std::array<int, 3> extent, std::uint64_t offset) {
    GradcheckCase c;
    c.name = name;
    c.training = training;
    c.batch_norm = {training, options.network.bn_momentum, options.network.bn_eps};
    auto net = std::make_shared<S3Net<double>>(options.network, options.seed + offset);
    c.params = net->parameters();
    c.inputs.push_back(random_tensor(rng, options.network_voxels, extent, options.network.input_channels));
    auto labels = random_labels(rng, c.inputs[0].rows(), options.network.class_count, false);
    Anisotropy anisotropy = compute_mlga(*c.inputs[0].coords, labels);
    const std::vector<double> net_alpha(static_cast<std::size_t>(options.network.class_count), 1.0);
    // The network reads parameters through ctx.store, which is c.params here.
    c.build = [net, labels, net_alpha, anisotropy](ForwardContext<double>& ctx, std::span<const Var> x) {
      const auto out = net->forward(ctx, x[0]);
      return graph::total_loss(ctx.tape, out.logits, labels, net_alpha, anisotropy, LossWeights{}).total;
    };
    run(c, 0.05);
  };
  network_case("S3Net (4 levels, batch statistics)", true, {6, 6, 6}, 7);
  network_case("S3Net (4 levels, running statistics)", false, {20, 20, 20}, 8);
  return results;
}

}  // namespace s3net
