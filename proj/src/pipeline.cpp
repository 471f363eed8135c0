#include "s3net/pipeline.hpp"

#include "s3net/checkpoint.hpp"
#include "s3net/features.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>

namespace s3net {

std::vector<int> voxel_majority_labels(std::span<const int> point_to_row, std::span<const int> point_labels,
                                       std::size_t voxel_count) {
  if (point_to_row.size() != point_labels.size()) throw std::invalid_argument("label count differs from point count");
  std::vector<std::map<int, std::size_t>> votes(voxel_count);
  for (std::size_t p = 0; p < point_labels.size(); ++p) {
    if (point_labels[p] == kIgnoreLabel) continue;
    ++votes.at(static_cast<std::size_t>(point_to_row[p]))[point_labels[p]];
  }
  std::vector<int> out(voxel_count, kIgnoreLabel);
  for (std::size_t v = 0; v < voxel_count; ++v) {
    std::size_t best = 0;
    for (const auto& [label, n] : votes[v]) {  // ascending label order keeps the lowest id on ties
      if (n > best) {
        best = n;
        out[v] = label;
      }
    }
  }
  return out;
}

template <typename Scalar>
Sample<Scalar> preprocess_scan(const Scan& scan, std::vector<int> point_labels, double voxel_size,
                               const RangeImageConfig& range, std::string id) {
  if (!point_labels.empty() && static_cast<Eigen::Index>(point_labels.size()) != scan.size()) {
    throw DataError("scan " + id + " has " + std::to_string(scan.size()) + " points but " +
                    std::to_string(point_labels.size()) + " labels");
  }
  Sample<Scalar> sample;
  sample.id = std::move(id);
  sample.positions = scan.positions();
  const RangeImage image = project_to_range(sample.positions, range);
  const Eigen::MatrixX3d normals = lift_to_points(compute_normals(image), image.mapping);

  Matrix<Scalar> features(scan.size(), 4);
  features.col(0) = scan.remission().cast<Scalar>();
  features.rightCols(3) = normals.cast<Scalar>();
  sample.cloud = quantize_points<Scalar>(sample.positions, features, voxel_size);
  if (!point_labels.empty()) {
    sample.voxel_labels = voxel_majority_labels(sample.cloud.point_to_row, point_labels,
                                                static_cast<std::size_t>(sample.cloud.tensor.rows()));
  }
  sample.point_labels = std::move(point_labels);
  return sample;
}

SyntheticScene make_synthetic_scene(std::uint64_t seed, double voxel_size, int cells) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-0.3, 0.3);
  // Cell-aligned patch origins, so every patch voxel holds its own points.
  const auto snap = [voxel_size](double v) { return std::floor(v / voxel_size) * voxel_size; };
  const double gx = snap(4.0 + shift(rng)), gy = snap(-0.35 + shift(rng)), gz = snap(-1.5);
  const double wx = snap(6.0 + shift(rng)), wy = snap(-0.35 + shift(rng)), wz = snap(-1.0);

  std::vector<std::array<float, 4>> points;
  SyntheticScene scene;
  const auto jitter = [&] { return (0.1 + 0.8 * unit(rng)) * voxel_size; };
  for (int a = 0; a < cells; ++a) {
    for (int b = 0; b < cells; ++b) {
      for (int rep = 0; rep < 2; ++rep) {
        points.push_back({static_cast<float>(gx + a * voxel_size + jitter()), static_cast<float>(gy + b * voxel_size + jitter()),
                          static_cast<float>(gz + jitter()), static_cast<float>(unit(rng))});
        scene.labels.push_back(0);
        scene.raw_labels.push_back(40);
        points.push_back({static_cast<float>(wx + jitter()), static_cast<float>(wy + a * voxel_size + jitter()),
                          static_cast<float>(wz + b * voxel_size + jitter()), static_cast<float>(unit(rng))});
        scene.labels.push_back(1);
        scene.raw_labels.push_back(50);
      }
    }
  }
  scene.scan.points.resize(static_cast<Eigen::Index>(points.size()), 4);
  for (std::size_t p = 0; p < points.size(); ++p)
    for (int c = 0; c < 4; ++c) scene.scan.points(static_cast<Eigen::Index>(p), c) = points[p][static_cast<std::size_t>(c)];
  return scene;
}

void write_synthetic_dataset(const std::filesystem::path& root, const std::vector<std::string>& sequences,
                             int scans_per_sequence, std::uint64_t seed, double voxel_size) {
  std::uint64_t index = 0;
  for (const auto& seq : sequences) {
    const auto dir = root / "sequences" / seq;
    for (int s = 0; s < scans_per_sequence; ++s) {
      const SyntheticScene scene = make_synthetic_scene(seed + index++, voxel_size);
      char frame[16];
      std::snprintf(frame, sizeof frame, "%06d", s);
      write_scan(dir / "velodyne" / (std::string(frame) + ".bin"), scene.scan);
      write_raw_labels(dir / "labels" / (std::string(frame) + ".label"), scene.raw_labels);
    }
  }
}

template <typename Scalar>
std::vector<Sample<Scalar>> load_samples(const RunConfig& config, const LabelMap& labels,
                                         const std::vector<std::string>& sequences) {
  std::vector<ScanEntry> entries = list_scans(config.dataset_root, sequences);
  if (config.max_scans > 0 && entries.size() > static_cast<std::size_t>(config.max_scans)) {
    entries.resize(static_cast<std::size_t>(config.max_scans));
  }
  std::vector<Sample<Scalar>> samples;
  samples.reserve(entries.size());
  for (const auto& e : entries) {
    const Scan scan = read_scan(e.scan);
    std::vector<int> point_labels;
    if (std::filesystem::exists(e.labels)) point_labels = labels.remap(read_labels(e.labels, scan.size()));
    samples.push_back(preprocess_scan<Scalar>(scan, std::move(point_labels), config.voxel_size, config.range_image,
                                              e.sequence + "/" + e.frame));
  }
  return samples;
}

TrainOptions train_options(const RunConfig& config, std::vector<double> alpha) {
  TrainOptions o;
  o.epochs = config.epochs;
  o.batch_size = config.batch_size;
  o.optimizer = config.optimizer;
  o.lr_decay = config.lr_decay;
  o.lr_period = config.lr_period;
  o.loss = config.loss;
  o.alpha = std::move(alpha);
  o.seed = config.seed;
  return o;
}

template <typename Scalar>
StepResult Trainer<Scalar>::step(std::span<const Sample<Scalar>* const> batch, double lr) {
  std::vector<SparseTensor<Scalar>> parts;
  std::vector<int> labels;
  for (const Sample<Scalar>* s : batch) {
    if (s->voxel_labels.empty()) throw DataError("training scan " + s->id + " has no labels");
    parts.push_back(s->cloud.tensor);
    labels.insert(labels.end(), s->voxel_labels.begin(), s->voxel_labels.end());
  }
  const SparseTensor<Scalar> input = concatenate_batches(parts);
  const Anisotropy anisotropy = compute_mlga(*input.coords, labels);

  const NetworkConfig& nc = net_.config();
  Tape<Scalar> tape;
  KernelMapCache kernels;
  ForwardContext<Scalar> ctx(tape, net_.parameters(), kernels, true, BatchNormOptions{true, nc.bn_momentum, nc.bn_eps});
  const auto out = net_.forward(ctx, tape.input(input));
  const auto terms = graph::total_loss(tape, out.logits, labels, options_.alpha, anisotropy, options_.loss);

  net_.parameters().zero_grad();
  tape.backward(terms.total);
  AdamConfig adam = options_.optimizer;
  adam.learning_rate = lr;
  adam_step(net_.parameters(), adam);

  StepResult r;
  r.loss = static_cast<double>(tape.value(terms.total)(0, 0));
  r.wce = static_cast<double>(terms.wce);
  r.geo = static_cast<double>(terms.geo);
  const std::vector<int> pred = argmax_rows<Scalar>(tape.value(out.logits));
  std::size_t correct = 0, supervised = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    ++supervised;
    correct += pred[i] == labels[i] ? 1 : 0;
  }
  r.accuracy = supervised == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(supervised);
  return r;
}

template <typename Scalar>
std::vector<EpochSummary> Trainer<Scalar>::fit(const std::vector<Sample<Scalar>>& train,
                                               const std::vector<Sample<Scalar>>& val,
                                               const std::function<void(const std::string&)>& log) {
  if (train.empty()) throw DataError("no training scans");
  std::mt19937_64 rng(options_.seed);
  std::vector<const Sample<Scalar>*> order;
  for (const auto& s : train) order.push_back(&s);

  std::vector<EpochSummary> summaries;
  int step_index = 0;
  for (int epoch = 0; epoch < options_.epochs; ++epoch) {
    const double lr = exp_lr(epoch, options_.optimizer.learning_rate, options_.lr_decay, options_.lr_period);
    if (options_.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(options_.batch_size)) {
      const std::size_t count = std::min(order.size() - first, static_cast<std::size_t>(options_.batch_size));
      const StepResult r = step(std::span<const Sample<Scalar>* const>(order.data() + first, count), lr);
      loss_sum += r.loss;
      ++batches;
      if (log) {
        log(nlohmann::json{{"event", "step"}, {"epoch", epoch}, {"step", step_index}, {"lr", lr}, {"loss", r.loss},
                           {"wce", r.wce}, {"geo", r.geo}, {"accuracy", r.accuracy}}
                .dump());
      }
      ++step_index;
    }
    EpochSummary summary{epoch, lr, loss_sum / batches, std::nullopt};
    if (!val.empty()) summary.val_miou = evaluate_samples(net_, val).miou();
    if (log) {
      nlohmann::json record{{"event", "epoch"}, {"epoch", epoch}, {"lr", lr}, {"mean_loss", summary.mean_loss}};
      record["val_miou"] = summary.val_miou ? nlohmann::json(*summary.val_miou) : nlohmann::json(nullptr);
      log(record.dump());
    }
    summaries.push_back(summary);
  }
  return summaries;
}

template <typename Scalar>
std::vector<int> predict_points(S3Net<Scalar>& net, const Sample<Scalar>& sample) {
  const std::vector<int> voxel = argmax_rows<Scalar>(net.predict(sample.cloud.tensor));
  std::vector<int> out(sample.cloud.point_to_row.size());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = voxel[static_cast<std::size_t>(sample.cloud.point_to_row[p])];
  return out;
}

template <typename Scalar>
ConfusionMatrix evaluate_samples(S3Net<Scalar>& net, const std::vector<Sample<Scalar>>& samples) {
  ConfusionMatrix total(net.config().class_count);
  for (const auto& s : samples) {
    if (s.point_labels.empty()) continue;
    ConfusionMatrix part(net.config().class_count);
    part.add(predict_points(net, s), s.point_labels);
    total.merge(part);
  }
  return total;
}

template <typename Scalar>
void save_checked_checkpoint(const std::filesystem::path& path, S3Net<Scalar>& net,
                             const std::vector<Sample<Scalar>>& probe) {
  std::filesystem::path staging = path;
  staging += ".tmp";
  save_checkpoint(staging, net.parameters());

  S3Net<Scalar> reloaded(net.config());
  try {
    load_checkpoint(staging, reloaded.parameters());
    for (std::size_t p = 0; p < net.parameters().size(); ++p) {
      const auto& a = net.parameters().all()[p];
      const auto& b = reloaded.parameters().all()[p];
      if (a.name != b.name || a.value.template cast<float>() != b.value.template cast<float>()) {
        throw CheckFailure("checkpoint reload changed parameter '" + a.name + "'");
      }
    }
    for (const auto& s : probe) {
      const Matrix<Scalar> expected = net.predict(s.cloud.tensor);
      const Matrix<Scalar> actual = reloaded.predict(s.cloud.tensor);
      const double scale = 1.0 + static_cast<double>(expected.cwiseAbs().maxCoeff());
      const double diff = static_cast<double>((expected - actual).cwiseAbs().maxCoeff());
      if (!(diff <= 1e-3 * scale)) {
        throw CheckFailure("reloaded checkpoint changes logits of scan " + s.id + " by " + std::to_string(diff));
      }
    }
  } catch (...) {
    std::filesystem::remove(staging);
    throw;
  }
  std::filesystem::rename(staging, path);
}

#define S3NET_INSTANTIATE_PIPELINE(S)                                                                          \
  template Sample<S> preprocess_scan(const Scan&, std::vector<int>, double, const RangeImageConfig&, std::string); \
  template std::vector<Sample<S>> load_samples(const RunConfig&, const LabelMap&, const std::vector<std::string>&); \
  template class Trainer<S>;                                                                                   \
  template std::vector<int> predict_points(S3Net<S>&, const Sample<S>&);                                       \
  template ConfusionMatrix evaluate_samples(S3Net<S>&, const std::vector<Sample<S>>&);                         \
  template void save_checked_checkpoint(const std::filesystem::path&, S3Net<S>&, const std::vector<Sample<S>>&);

S3NET_INSTANTIATE_PIPELINE(float)
S3NET_INSTANTIATE_PIPELINE(double)
#undef S3NET_INSTANTIATE_PIPELINE

}  // namespace s3net
