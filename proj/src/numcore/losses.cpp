#include "biofuse/losses.hpp"

#include <algorithm>
#include <cmath>

#include "biofuse/errors.hpp"

namespace biofuse {

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows: expected [B,K], got " + logits.shape_string());
  Tensor p = logits;
  for (std::size_t i = 0; i < p.dim(0); ++i) {
    auto r = p.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (auto& v : r) {
      v = std::exp(v - mx);
      z += v;
    }
    for (auto& v : r) v /= z;
  }
  return p;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw DimensionError("softmax_cross_entropy: expected [B,K], got " + logits.shape_string());
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  if (labels.size() != batch)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
  for (auto l : labels)
    if (l >= k) throw LabelError("label " + std::to_string(l) + " outside [0," + std::to_string(k) + ")");

  LossResult r{0.0, Tensor({batch, k})};
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const auto z = logits.row(i);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    r.loss += log_z - z[labels[i]];
    auto g = r.grad.row(i);
    for (std::size_t j = 0; j < k; ++j) g[j] = std::exp(z[j] - log_z) * inv_b;
    g[labels[i]] -= inv_b;
  }
  r.loss *= inv_b;
  return r;
}

LossResult binary_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(1) != 1)
    throw DimensionError("binary_cross_entropy: expected [B,1], got " + logits.shape_string());
  const std::size_t batch = logits.dim(0);
  if (labels.size() != batch)
    throw DimensionError("binary_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(batch));
  LossResult r{0.0, Tensor({batch, 1})};
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw LabelError("binary label must be 0 or 1, got " + std::to_string(y));
    const double z = logits[i];
    // max(z,0) - z*y + log(1 + exp(-|z|))
    r.loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    r.grad[i] = (sigmoid(z) - y) * inv_b;
  }
  r.loss *= inv_b;
  return r;
}

double joint_loss(double id_loss, double gender_loss) noexcept { return id_loss + gender_loss; }

double joint_loss(double id_loss, double gender_loss, JointLossWeights w) noexcept {
  return w.id * id_loss + w.gender * gender_loss;
}

}  // namespace biofuse
