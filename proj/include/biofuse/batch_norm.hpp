#pragma once

#include <cstddef>
#include <vector>

#include "biofuse/tensor.hpp"

namespace biofuse {

enum class Mode { train, infer };

/// Batch-norm parameters and running statistics for one feature block.
struct BatchNormState {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::vector<double> grad_gamma;
  std::vector<double> grad_beta;
  double momentum = 0.1;
  double epsilon = 1e-5;
  Mode mode = Mode::train;
  bool grads_fresh = false;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t dim, double momentum = 0.1, double epsilon = 1e-5);

  std::size_t dim() const noexcept { return gamma.size(); }
  void zero_grad();
};

/// Values retained by the forward pass for the backward pass.
struct BatchNormCache {
  Mode mode = Mode::train;
  std::vector<bool> present;
  Tensor normalized;               // x-hat; zero on absent rows
  std::vector<double> inv_std;     // per feature
  std::size_t present_count = 0;
};

/// Batch normalization where statistics come only from rows flagged present.
/// Absent rows come out as exact zeros and never touch the running statistics.
Tensor batch_norm_masked(const Tensor& x, const std::vector<bool>& present, BatchNormState& s,
                         BatchNormCache* cache = nullptr);

/// Accumulates dgamma/dbeta into s and returns dL/dx (zero on absent rows).
Tensor batch_norm_masked_backward(const BatchNormCache& cache, BatchNormState& s, const Tensor& dy);

}  // namespace biofuse
