#pragma once

#include "s3net/config.hpp"
#include "s3net/dataset.hpp"
#include "s3net/metrics.hpp"
#include "s3net/modules.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace s3net {

/// A self-check (gradients, checkpoint reload) did not hold.
struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One preprocessed scan: voxel tensor with features [remission, n_x, n_y, n_z].
template <typename Scalar>
struct Sample {
  std::string id;
  QuantizedCloud<Scalar> cloud;
  Eigen::MatrixX3d positions;
  std::vector<int> point_labels;  // empty when the scan has no labels
  std::vector<int> voxel_labels;
};

/// Majority label per voxel; ties go to the lowest class id and voxels whose points are
/// all ignored stay ignored.
std::vector<int> voxel_majority_labels(std::span<const int> point_to_row, std::span<const int> point_labels,
                                       std::size_t voxel_count);

/// Range projection, normals, lifting and quantization. `point_labels` may be empty.
template <typename Scalar>
Sample<Scalar> preprocess_scan(const Scan& scan, std::vector<int> point_labels, double voxel_size,
                               const RangeImageConfig& range = {}, std::string id = {});

/// Two separated plane patches: a horizontal one (class 0, raw id 40) and a vertical one
/// (class 1, raw id 50), `cells` x `cells` voxels each, two jittered points per voxel.
struct SyntheticScene {
  Scan scan;
  std::vector<std::uint32_t> raw_labels;
  std::vector<int> labels;
};

SyntheticScene make_synthetic_scene(std::uint64_t seed, double voxel_size = 0.05, int cells = 14);

/// Writes <root>/sequences/<seq>/{velodyne,labels}/NNNNNN.{bin,label} for each sequence.
void write_synthetic_dataset(const std::filesystem::path& root, const std::vector<std::string>& sequences,
                             int scans_per_sequence, std::uint64_t seed, double voxel_size = 0.05);

/// Loads, remaps and preprocesses the scans of `sequences` (at most `max_scans` if positive).
template <typename Scalar>
std::vector<Sample<Scalar>> load_samples(const RunConfig& config, const LabelMap& labels,
                                         const std::vector<std::string>& sequences);

struct TrainOptions {
  int epochs = 1;
  int batch_size = 2;
  AdamConfig optimizer;
  double lr_decay = 0.9;
  int lr_period = 10;
  LossWeights loss;
  std::vector<double> alpha;  // per-class weights
  std::uint64_t seed = 0;
  bool shuffle = true;
};

TrainOptions train_options(const RunConfig& config, std::vector<double> alpha);

struct StepResult {
  double loss = 0.0;
  double wce = 0.0;
  double geo = 0.0;
  double accuracy = 0.0;  // over supervised voxels, from the training-mode logits
};

struct EpochSummary {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  std::optional<double> val_miou;
};

template <typename Scalar>
class Trainer {
public:
  Trainer(S3Net<Scalar>& net, TrainOptions options) : net_(net), options_(std::move(options)) {}

  /// forward -> total loss -> backward -> Adam step on one mini-batch.
  StepResult step(std::span<const Sample<Scalar>* const> batch, double lr);

  /// Runs all epochs. `log` receives one JSON record per step and per epoch.
  std::vector<EpochSummary> fit(const std::vector<Sample<Scalar>>& train, const std::vector<Sample<Scalar>>& val,
                                const std::function<void(const std::string&)>& log = {});

private:
  S3Net<Scalar>& net_;
  TrainOptions options_;
};

/// Per-voxel argmax broadcast to every point of the scan.
template <typename Scalar>
std::vector<int> predict_points(S3Net<Scalar>& net, const Sample<Scalar>& sample);

/// Point-wise confusion over labeled samples.
template <typename Scalar>
ConfusionMatrix evaluate_samples(S3Net<Scalar>& net, const std::vector<Sample<Scalar>>& samples);

/// Saves a checkpoint only after a fresh network loaded from it reproduces the in-memory
/// parameters (as float32) and logits on `probe`. Throws CheckFailure otherwise.
template <typename Scalar>
void save_checked_checkpoint(const std::filesystem::path& path, S3Net<Scalar>& net,
                             const std::vector<Sample<Scalar>>& probe);

}  // namespace s3net
