#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "biofuse/batch_norm.hpp"
#include "biofuse/layers.hpp"

namespace biofuse {

/// Non-owning handle on one trainable array and its gradient.
struct ParamView {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
  bool* fresh = nullptr;  // points into the owning LayerParams/BatchNormState
};

void append_views(std::vector<ParamView>& out, const std::string& prefix, LayerParams& p);
void append_views(std::vector<ParamView>& out, const std::string& prefix, BatchNormState& s);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {});

  /// Applies one bias-corrected Adam update to every view. Throws
  /// StaleGradientError when no view received a backward pass since the last step.
  void step(std::span<const ParamView> params);

  std::size_t step_count() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  AdamConfig cfg_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

void zero_grads(std::span<const ParamView> params);

}  // namespace biofuse
