#include "meaformer/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "meaformer/numcore/rng.hpp"

namespace meaformer::nc {

GradCheckResult grad_check(const std::function<Tensor<double>()>& f, const std::vector<Tensor<double>>& params,
                           const GradCheckOptions& options) {
  for (const auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    const auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckResult result;
  result.per_tensor_max.assign(params.size(), 0.0);
  result.per_tensor_checked.assign(params.size(), 0);
  Rng rng(options.seed);
  NoGradGuard no_grad;
  using Kinks = GradCheckOptions::Kinks;
  std::vector<int64_t> tape;
  {
    BranchTrace record;
    f();
    tape = record.tape();
  }
  // Returns the loss and whether any branch differed from the base point.
  auto evaluate = [&](bool& crossed) {
    if (options.kinks == Kinks::Ignore) {
      crossed = false;
      return f().item();
    }
    BranchTrace trace(options.kinks == Kinks::Freeze ? BranchTrace::Mode::Replay : BranchTrace::Mode::Check, &tape);
    const double v = f().item();
    crossed = trace.crossed();
    return v;
  };
  for (size_t t = 0; t < params.size(); ++t) {
    const int64_t n = params[t].numel();
    std::vector<int64_t> indices(static_cast<size_t>(n));
    std::iota(indices.begin(), indices.end(), 0);
    const bool sampled = options.max_entries_per_tensor > 0 && n > options.max_entries_per_tensor;
    if (sampled) std::shuffle(indices.begin(), indices.end(), rng.engine());
    const int64_t wanted = sampled ? options.max_entries_per_tensor : n;
    auto values = params[t].data();
    for (int64_t idx : indices) {
      if (result.per_tensor_checked[t] >= wanted) break;
      const double saved = values[static_cast<size_t>(idx)];
      bool up_crossed = false, down_crossed = false;
      values[static_cast<size_t>(idx)] = saved + options.step;
      const double up = evaluate(up_crossed);
      values[static_cast<size_t>(idx)] = saved - options.step;
      const double down = evaluate(down_crossed);
      values[static_cast<size_t>(idx)] = saved;
      if (up_crossed || down_crossed) {
        ++result.crossings;
        if (options.kinks == Kinks::Skip) {
          ++result.skipped;
          continue;
        }
      }
      ++result.per_tensor_checked[t];
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[t][static_cast<size_t>(idx)];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      ++result.checked;
      result.per_tensor_max[t] = std::max(result.per_tensor_max[t], err);
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = {t, idx, a, numeric, err};
      }
    }
  }
  return result;
}

}  // namespace meaformer::nc
