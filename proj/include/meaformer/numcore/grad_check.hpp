#pragma once

#include <functional>
#include <string>
#include <vector>

#include "meaformer/numcore/tensor.hpp"

namespace meaformer::nc {

struct GradCheckOptions {
  double step = 1e-3;
  /// Entries probed per tensor; 0 probes every entry. Larger tensors are
  /// sampled with a seeded generator.
  int64_t max_entries_per_tensor = 0;
  uint64_t seed = 0;
  /// How probes straddling a non-differentiable point are treated (see
  /// BranchTrace). Freeze replays the base point's branches so both sides
  /// are evaluated on the same smooth piece; Skip discards such probes
  /// (sampled tensors draw a replacement); Ignore uses raw differences.
  enum class Kinks { Freeze, Skip, Ignore };
  Kinks kinks = Kinks::Freeze;
};

struct GradCheckEntry {
  size_t tensor = 0;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  int64_t checked = 0;
  GradCheckEntry worst;
  int64_t crossings = 0;  // probes whose perturbation changed some branch
  int64_t skipped = 0;    // of those, discarded under Kinks::Skip
  std::vector<double> per_tensor_max;
  std::vector<int64_t> per_tensor_checked;
};

/// Compares reverse-mode gradients of the scalar `f` against central finite
/// differences; error is |analytic - numeric| / max(1, |numeric|). `f` must
/// be deterministic.
GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<Tensor<double>>& params,
                           const GradCheckOptions& options = {});

}  // namespace meaformer::nc
