#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace biofuse {

/// One array to perturb together with the analytic gradient computed at the base point.
struct GradProbe {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t samples_per_probe = 24;  // entries checked per probe; all when the probe is smaller
  std::uint64_t seed = 7;
  // Denominator floor of the relative error; keeps near-zero gradients from
  // amplifying finite-difference roundoff.
  double abs_floor = 1e-6;
  // An entry whose one-sided slopes disagree by more than this fraction is
  // treated as sitting on a kink (relu zero, max-pool tie) and skipped.
  double kink_ratio = 0.5;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst;                  // "<probe>[index]" of the largest error
  std::vector<std::string> skipped_entries;

  bool passed(double tolerance) const noexcept { return checked > 0 && max_rel_error < tolerance; }
};

/// Central-difference check of analytic gradients. `loss` must be a pure function
/// of the probed arrays; every perturbed value is restored bit-exactly.
GradCheckReport gradient_check(const std::function<double()>& loss, std::span<const GradProbe> probes,
                               const GradCheckOptions& options = {});

}  // namespace biofuse
