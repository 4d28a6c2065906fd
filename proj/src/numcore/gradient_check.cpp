#include "biofuse/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "biofuse/errors.hpp"

namespace biofuse {

GradCheckReport gradient_check(const std::function<double()>& loss, std::span<const GradProbe> probes,
                               const GradCheckOptions& options) {
  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  const double h = options.step;
  const double f0 = loss();

  for (const auto& probe : probes) {
    if (probe.values.size() != probe.analytic.size())
      throw DimensionError("gradient_check: probe " + probe.name + " has mismatched gradient length");
    std::vector<std::size_t> idx(probe.values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > options.samples_per_probe) {
      std::vector<std::size_t> pick;
      std::sample(idx.begin(), idx.end(), std::back_inserter(pick), options.samples_per_probe, rng);
      idx = std::move(pick);
    }

    for (auto i : idx) {
      const double orig = probe.values[i];
      probe.values[i] = orig + h;
      const double fp = loss();
      probe.values[i] = orig - h;
      const double fm = loss();
      probe.values[i] = orig;

      const std::string tag = probe.name + "[" + std::to_string(i) + "]";
      const double fwd = (fp - f0) / h;
      const double bwd = (f0 - fm) / h;
      const double gap = std::abs(fwd - bwd);
      if (gap > 1e-6 && gap > options.kink_ratio * std::max(std::abs(fwd), std::abs(bwd))) {
        ++report.skipped;
        report.skipped_entries.push_back(tag);
        continue;
      }

      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = probe.analytic[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), options.abs_floor});
      double rel = std::abs(numeric - analytic) / denom;
      if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
      ++report.checked;
      if (!(rel <= report.max_rel_error)) {
        report.max_rel_error = rel;
        report.worst = tag;
      }
    }
  }
  return report;
}

}  // namespace biofuse
