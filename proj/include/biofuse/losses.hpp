#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "biofuse/tensor.hpp"

namespace biofuse {

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // dL/dlogits, same shape as the logits
};

/// Mean categorical cross-entropy over the batch, softmax applied to logits [B, K].
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Mean binary cross-entropy on logits [B, 1] with labels in {0, 1}.
LossResult binary_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Row-wise softmax of [B, K] logits.
Tensor softmax_rows(const Tensor& logits);

double sigmoid(double z) noexcept;

struct JointLossWeights {
  double id = 1.0;
  double gender = 1.0;
};

/// Multitask loss: the two task losses added with equal weight.
double joint_loss(double id_loss, double gender_loss) noexcept;
double joint_loss(double id_loss, double gender_loss, JointLossWeights w) noexcept;

}  // namespace biofuse
