#include "biofuse/batch_norm.hpp"

#include <algorithm>
#include <cmath>

#include "biofuse/errors.hpp"

namespace biofuse {

BatchNormState::BatchNormState(std::size_t dim, double momentum_, double epsilon_)
    : gamma(dim, 1.0),
      beta(dim, 0.0),
      running_mean(dim, 0.0),
      running_var(dim, 1.0),
      grad_gamma(dim, 0.0),
      grad_beta(dim, 0.0),
      momentum(momentum_),
      epsilon(epsilon_) {
  if (!(momentum > 0.0 && momentum < 1.0)) throw ParameterError("batch-norm momentum must lie in (0,1)");
  if (!(epsilon > 0.0)) throw ParameterError("batch-norm epsilon must be positive");
}

void BatchNormState::zero_grad() {
  std::fill(grad_gamma.begin(), grad_gamma.end(), 0.0);
  std::fill(grad_beta.begin(), grad_beta.end(), 0.0);
}

Tensor batch_norm_masked(const Tensor& x, const std::vector<bool>& present, BatchNormState& s,
                         BatchNormCache* cache) {
  if (x.rank() != 2 || x.dim(1) != s.dim())
    throw DimensionError("batch_norm_masked: input " + x.shape_string() + " vs feature dim " +
                         std::to_string(s.dim()));
  const std::size_t batch = x.dim(0), d = x.dim(1);
  if (present.size() != batch)
    throw DimensionError("batch_norm_masked: mask length " + std::to_string(present.size()) +
                         " vs batch " + std::to_string(batch));
  const auto n = static_cast<std::size_t>(std::count(present.begin(), present.end(), true));

  Tensor y({batch, d});
  Tensor xhat({batch, d});
  std::vector<double> inv_std(d);

  if (s.mode == Mode::train) {
    if (n == 0) throw MaskExhaustedError("batch_norm_masked: no present rows in training batch");
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
      if (!present[i]) continue;
      const double* xr = x.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) mean[j] += xr[j];
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (auto& m : mean) m *= inv_n;
    for (std::size_t i = 0; i < batch; ++i) {
      if (!present[i]) continue;
      const double* xr = x.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = xr[j] - mean[j];
        var[j] += c * c;
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      var[j] *= inv_n;
      inv_std[j] = 1.0 / std::sqrt(var[j] + s.epsilon);
      s.running_mean[j] = (1.0 - s.momentum) * s.running_mean[j] + s.momentum * mean[j];
      s.running_var[j] = (1.0 - s.momentum) * s.running_var[j] + s.momentum * var[j];
    }
    for (std::size_t i = 0; i < batch; ++i) {
      if (!present[i]) continue;
      const double* xr = x.data() + i * d;
      double* hr = xhat.data() + i * d;
      double* yr = y.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        hr[j] = (xr[j] - mean[j]) * inv_std[j];
        yr[j] = s.gamma[j] * hr[j] + s.beta[j];
      }
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(s.running_var[j] + s.epsilon);
    for (std::size_t i = 0; i < batch; ++i) {
      if (!present[i]) continue;
      const double* xr = x.data() + i * d;
      double* hr = xhat.data() + i * d;
      double* yr = y.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        hr[j] = (xr[j] - s.running_mean[j]) * inv_std[j];
        yr[j] = s.gamma[j] * hr[j] + s.beta[j];
      }
    }
  }

  if (cache) {
    cache->mode = s.mode;
    cache->present = present;
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->present_count = n;
  }
  return y;
}

Tensor batch_norm_masked_backward(const BatchNormCache& cache, BatchNormState& s, const Tensor& dy) {
  const Tensor& xhat = cache.normalized;
  if (dy.shape() != xhat.shape())
    throw DimensionError("batch_norm_masked_backward: gradient " + dy.shape_string() + " vs " +
                         xhat.shape_string());
  const std::size_t batch = xhat.dim(0), d = xhat.dim(1);
  Tensor dx({batch, d});
  std::vector<double> sum_dxhat(d, 0.0), sum_dxhat_xhat(d, 0.0);

  for (std::size_t i = 0; i < batch; ++i) {
    if (!cache.present[i]) continue;
    const double* dyr = dy.data() + i * d;
    const double* hr = xhat.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      s.grad_gamma[j] += dyr[j] * hr[j];
      s.grad_beta[j] += dyr[j];
      const double g = dyr[j] * s.gamma[j];
      sum_dxhat[j] += g;
      sum_dxhat_xhat[j] += g * hr[j];
    }
  }
  s.grads_fresh = true;

  if (cache.mode == Mode::train) {
    const double n = static_cast<double>(cache.present_count);
    for (std::size_t i = 0; i < batch; ++i) {
      if (!cache.present[i]) continue;
      const double* dyr = dy.data() + i * d;
      const double* hr = xhat.data() + i * d;
      double* dxr = dx.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double g = dyr[j] * s.gamma[j];
        dxr[j] = cache.inv_std[j] * (g - sum_dxhat[j] / n - hr[j] * sum_dxhat_xhat[j] / n);
      }
    }
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      if (!cache.present[i]) continue;
      const double* dyr = dy.data() + i * d;
      double* dxr = dx.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dxr[j] = dyr[j] * s.gamma[j] * cache.inv_std[j];
    }
  }
  return dx;
}

}  // namespace biofuse
