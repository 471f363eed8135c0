#pragma once

#include "s3net/modules.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace s3net {

struct GradcheckOptions {
  double step = 1e-5;        // central-difference step
  double tolerance = 1e-4;   // relative
  double abs_floor = 1e-8;   // |a - n| <= tolerance * max(|a|, |n|) + abs_floor
  int samples_per_tensor = 8;  // 0 checks every entry
  std::uint64_t seed = 7;
  int network_voxels = 100;
  NetworkConfig network = toy_network();

  static NetworkConfig toy_network();
};

struct GradcheckResult {
  std::string name;
  double value = 0.0;  // scalar being differentiated, at the unperturbed point
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::size_t kinked = 0;  // mismatches whose +-step evaluations crossed a ReLU kink (excused)
  double max_relative_error = 0.0;  // over kink-free entries where max(|a|, |n|) > abs_floor
  double seconds = 0.0;
  std::string worst;  // entry with the largest relative error
  std::vector<std::string> failures;  // first few failing entries

  /// Excused kink mismatches may not exceed a tenth of the checked entries.
  bool passed() const { return checked > 0 && failed == 0 && kinked * 10 <= checked; }
};

/// A scalar function of some sparse inputs and a parameter store. `build` may return a
/// non-scalar tensor; it is then reduced with a fixed random projection.
struct GradcheckCase {
  std::string name;
  ParameterStore<double> params;
  std::vector<SparseTensor<double>> inputs;
  std::function<Var(ForwardContext<double>&, std::span<const Var>)> build;
  BatchNormOptions batch_norm{};
  bool training = true;  // false: batch norm uses running statistics
};

/// Compares reverse-mode gradients of every trainable parameter and every input against
/// central differences.
GradcheckResult run_gradcheck(GradcheckCase& problem, const GradcheckOptions& options = {});

/// The standard suite: conv, strided conv, conv transpose, batch norm, SIntraAM, SInterAM,
/// ResModule, wce, geo, total loss and the full network twice: with batch statistics on a
/// compact patch, and with running statistics on a cloud spread over every pyramid level.
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options = {},
                                                 const std::function<void(const GradcheckResult&)>& on_result = {});

}  // namespace s3net
