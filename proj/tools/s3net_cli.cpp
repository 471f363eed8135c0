#include "s3net/checkpoint.hpp"
#include "s3net/config.hpp"
#include "s3net/dataset.hpp"
#include "s3net/gradcheck.hpp"
#include "s3net/metrics.hpp"
#include "s3net/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace s3net;

namespace {

enum Exit { kOk = 0, kUsage = 1, kDataError = 2, kCheckFailure = 3 };

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
  return code;
}

struct Options {
  fs::path config;
  fs::path checkpoint;
  fs::path scan;
  fs::path output;
  fs::path predictions;
  fs::path labels;
  fs::path log;
  int scans = 4;
  double fraction = 0.02;
  int samples = 8;
};

std::vector<double> load_alpha(const RunConfig& config, int class_count) {
  const fs::path manifest = config.manifest_path();
  if (!fs::exists(manifest)) throw DataError("missing frequency manifest " + manifest.string() + " (run `freqs` first)");
  const std::vector<std::uint64_t> counts = read_frequency_manifest(manifest);
  if (static_cast<int>(counts.size()) != class_count) {
    throw DataError("manifest lists " + std::to_string(counts.size()) + " classes, network has " + std::to_string(class_count));
  }
  return class_weight_vector(class_weights(ClassFrequency::from_counts(counts)), class_count);
}

LabelMap load_label_map(const RunConfig& config) {
  LabelMap map = LabelMap::load(config.label_map);
  if (map.class_count() != config.network.class_count) {
    throw ConfigError("label map defines " + std::to_string(map.class_count()) + " classes, network.class_count is " +
                      std::to_string(config.network.class_count));
  }
  return map;
}

int cmd_synth(const Options& o) {
  const RunConfig config = load_run_config(o.config);
  std::vector<std::string> sequences = config.train_sequences;
  sequences.insert(sequences.end(), config.val_sequences.begin(), config.val_sequences.end());
  write_synthetic_dataset(config.dataset_root, sequences, o.scans, config.seed, config.voxel_size);
  std::cout << nlohmann::json{{"event", "synth"}, {"root", config.dataset_root.string()}, {"scans", o.scans}}.dump() << '\n';
  return kOk;
}

int cmd_freqs(const Options& o) {
  const RunConfig config = load_run_config(o.config);
  const LabelMap labels = load_label_map(config);
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(labels.class_count()), 0);
  for (const auto& e : list_scans(config.dataset_root, config.train_sequences)) {
    const auto ids = labels.remap(read_labels(e.labels));
    const auto part = count_classes(ids, labels.class_count());
    for (std::size_t c = 0; c < counts.size(); ++c) counts[c] += part[c];
  }
  write_frequency_manifest(config.manifest_path(), counts, labels.class_names());
  std::cout << nlohmann::json{{"event", "freqs"}, {"manifest", config.manifest_path().string()}, {"counts", counts}}.dump()
            << '\n';
  return kOk;
}

template <typename Scalar>
int train(const RunConfig& config, const Options& o) {
  const LabelMap labels = load_label_map(config);
  const std::vector<double> alpha = load_alpha(config, labels.class_count());
  const auto train_set = load_samples<Scalar>(config, labels, config.train_sequences);
  const auto val_set = load_samples<Scalar>(config, labels, config.val_sequences);

  std::ofstream log_file;
  if (!o.log.empty()) {
    log_file.open(o.log);
    if (!log_file) throw DataError("cannot open log " + o.log.string());
  }
  S3Net<Scalar> net(config.network, config.seed);
  Trainer<Scalar> trainer(net, train_options(config, alpha));
  trainer.fit(train_set, val_set, [&](const std::string& line) {
    std::cout << line << '\n';
    if (log_file) log_file << line << '\n';
  });
  if (!o.checkpoint.empty()) {
    save_checked_checkpoint(o.checkpoint, net, val_set.empty() ? train_set : val_set);
    std::cout << nlohmann::json{{"event", "checkpoint"}, {"path", o.checkpoint.string()}}.dump() << '\n';
  }
  return kOk;
}

template <typename Scalar>
S3Net<Scalar> load_network(const RunConfig& config, const fs::path& checkpoint) {
  S3Net<Scalar> net(config.network, config.seed);
  load_checkpoint(checkpoint, net.parameters());
  return net;
}

template <typename Scalar>
int infer(const RunConfig& config, const Options& o) {
  const LabelMap labels = load_label_map(config);
  S3Net<Scalar> net = load_network<Scalar>(config, o.checkpoint);
  const Sample<Scalar> sample =
      preprocess_scan<Scalar>(read_scan(o.scan), {}, config.voxel_size, config.range_image, o.scan.string());
  const std::vector<int> pred = predict_points(net, sample);
  std::vector<std::uint32_t> raw(pred.size());
  for (std::size_t p = 0; p < pred.size(); ++p) raw[p] = labels.to_raw(pred[p]);
  write_raw_labels(o.output, raw);
  std::cout << nlohmann::json{{"event", "infer"}, {"points", raw.size()}, {"output", o.output.string()}}.dump() << '\n';
  return kOk;
}

template <typename Scalar>
int attention(const RunConfig& config, const Options& o) {
  S3Net<Scalar> net = load_network<Scalar>(config, o.checkpoint);
  const Sample<Scalar> sample =
      preprocess_scan<Scalar>(read_scan(o.scan), {}, config.voxel_size, config.range_image, o.scan.string());
  Tape<Scalar> tape;
  KernelMapCache kernels(config.workers);
  ForwardContext<Scalar> ctx(tape, net.parameters(), kernels, false,
                             BatchNormOptions{false, config.network.bn_momentum, config.network.bn_eps});
  const auto result = net.forward(ctx, tape.input(sample.cloud.tensor));
  const Matrix<Scalar>& voxel_features = tape.value(result.decoder_features);
  Matrix<Scalar> point_features(static_cast<Eigen::Index>(sample.cloud.point_to_row.size()), voxel_features.cols());
  for (std::size_t p = 0; p < sample.cloud.point_to_row.size(); ++p) {
    point_features.row(static_cast<Eigen::Index>(p)) = voxel_features.row(sample.cloud.point_to_row[p]);
  }
  const AttentionExport top = export_attention(point_features, o.fraction);
  fs::path indices = o.output, points = o.output;
  indices += ".txt";
  points += ".xyz";
  write_attention_indices(indices, top.indices);
  write_attention_points(points, sample.positions, top);
  std::cout << nlohmann::json{{"event", "attention"}, {"selected", top.indices.size()}, {"indices", indices.string()},
                              {"points", points.string()}}
                   .dump()
            << '\n';
  return kOk;
}

std::vector<std::pair<fs::path, fs::path>> label_pairs(const fs::path& pred, const fs::path& truth) {
  if (!fs::is_directory(pred)) return {{pred, truth}};
  std::vector<std::pair<fs::path, fs::path>> pairs;
  for (const auto& f : fs::directory_iterator(pred)) {
    if (f.path().extension() == ".label") pairs.emplace_back(f.path(), truth / f.path().filename());
  }
  std::sort(pairs.begin(), pairs.end());
  if (pairs.empty()) throw DataError("no .label files in " + pred.string());
  return pairs;
}

int cmd_eval(const Options& o) {
  const RunConfig config = load_run_config(o.config);
  const LabelMap labels = load_label_map(config);
  ConfusionMatrix confusion(labels.class_count());
  for (const auto& [pred_path, truth_path] : label_pairs(o.predictions, o.labels)) {
    const auto truth = labels.remap(read_labels(truth_path));
    auto pred = labels.remap(read_labels(pred_path, static_cast<long long>(truth.size())));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == kIgnoreLabel && truth[i] != kIgnoreLabel) {
        throw DataError(pred_path.string() + ": point " + std::to_string(i) + " has no class prediction");
      }
      if (pred[i] == kIgnoreLabel) pred[i] = 0;  // unlabeled truth is skipped anyway
    }
    ConfusionMatrix part(labels.class_count());
    part.add(pred, truth);
    confusion.merge(part);
  }
  std::printf("%-16s %8s\n", "class", "IoU");
  for (int c = 0; c < labels.class_count(); ++c) {
    const auto iou = confusion.iou(c);
    if (iou) std::printf("%-16s %8.4f\n", labels.class_names()[static_cast<std::size_t>(c)].c_str(), *iou);
    else std::printf("%-16s %8s\n", labels.class_names()[static_cast<std::size_t>(c)].c_str(), "n/a");
  }
  std::printf("%-16s %8.4f\n", "mIoU", confusion.miou());
  std::printf("points evaluated: %llu\n", static_cast<unsigned long long>(confusion.total()));
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  GradcheckOptions options;
  options.samples_per_tensor = o.samples;
  if (!o.config.empty()) {
    const RunConfig config = load_run_config(o.config);
    options.network = config.network;
    options.seed = config.seed;
  }
  bool ok = true;
  run_gradcheck_suite(options, [&](const GradcheckResult& r) {
    ok = ok && r.passed();
    std::cout << nlohmann::json{{"check", r.name}, {"value", r.value},         {"passed", r.passed()},  {"entries", r.checked},
                                {"failed", r.failed}, {"kinked", r.kinked},      {"max_rel_error", r.max_relative_error},
                                {"seconds", r.seconds},    {"worst", r.worst},
                                {"failures", r.failures}}
                     .dump()
              << '\n';
  });
  return ok ? kOk : fail(kCheckFailure, "gradcheck", "finite-difference check failed");
}

template <template <typename> class Fn>
int dispatch(const Options& o) {
  const RunConfig config = load_run_config(o.config);
  return config.precision == Precision::Float64 ? Fn<double>::run(config, o) : Fn<float>::run(config, o);
}

template <typename S>
struct TrainCmd {
  static int run(const RunConfig& c, const Options& o) { return train<S>(c, o); }
};
template <typename S>
struct InferCmd {
  static int run(const RunConfig& c, const Options& o) { return infer<S>(c, o); }
};
template <typename S>
struct AttentionCmd {
  static int run(const RunConfig& c, const Options& o) { return attention<S>(c, o); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"S3Net sparse LiDAR segmentation"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "write a synthetic two-class dataset under dataset_root");
  synth->add_option("-c,--config", o.config, "run config")->required()->check(CLI::ExistingFile);
  synth->add_option("--scans", o.scans, "scans per sequence")->check(CLI::PositiveNumber);

  auto* freqs = app.add_subcommand("freqs", "count training labels and write the class-frequency manifest");
  freqs->add_option("-c,--config", o.config, "run config")->required()->check(CLI::ExistingFile);

  auto* train_cmd = app.add_subcommand("train", "train and save a checkpoint");
  train_cmd->add_option("-c,--config", o.config, "run config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint to write");
  train_cmd->add_option("--log", o.log, "also write log records here");

  auto* infer_cmd = app.add_subcommand("infer", "write per-point predictions for one scan");
  infer_cmd->add_option("-c,--config", o.config, "run config")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--scan", o.scan, "scan .bin file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("-o,--output", o.output, "prediction .label file")->required();

  auto* eval_cmd = app.add_subcommand("eval", "per-class IoU of predictions against labels");
  eval_cmd->add_option("-c,--config", o.config, "run config")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--predictions", o.predictions, "prediction file or directory")->required()->check(CLI::ExistingPath);
  eval_cmd->add_option("--labels", o.labels, "label file or directory")->required()->check(CLI::ExistingPath);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  grad->add_option("-c,--config", o.config, "run config (network shape and seed)")->check(CLI::ExistingFile);
  grad->add_option("--samples", o.samples, "entries checked per tensor, 0 for all")->check(CLI::NonNegativeNumber);

  auto* attn = app.add_subcommand("attention", "export the most activated points of a scan");
  attn->add_option("-c,--config", o.config, "run config")->required()->check(CLI::ExistingFile);
  attn->add_option("--checkpoint", o.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  attn->add_option("--scan", o.scan, "scan .bin file")->required()->check(CLI::ExistingFile);
  attn->add_option("-o,--output", o.output, "output prefix (.txt indices, .xyz points)")->required();
  attn->add_option("--fraction", o.fraction, "fraction of points kept")->check(CLI::Range(1e-9, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*freqs) return cmd_freqs(o);
    if (*train_cmd) return dispatch<TrainCmd>(o);
    if (*infer_cmd) return dispatch<InferCmd>(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*grad) return cmd_gradcheck(o);
    if (*attn) return dispatch<AttentionCmd>(o);
  } catch (const CheckFailure& e) {
    return fail(kCheckFailure, "check", e.what());
  } catch (const ConfigError& e) {
    return fail(kDataError, "config", e.what());
  } catch (const DataError& e) {
    return fail(kDataError, "data", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kDataError, "filesystem", e.what());
  } catch (const std::exception& e) {
    return fail(kDataError, "error", e.what());
  }
  return kUsage;
}
