#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "biofuse/tensor.hpp"

namespace biofuse {

/// Number of samples in one QRS window; the ECG conv layer is fixed to it.
inline constexpr std::size_t kQrsLength = 300;

/// Trainable weights and bias of one layer together with their accumulated gradients.
struct LayerParams {
  Tensor weights;
  Tensor bias;
  Tensor grad_weights;
  Tensor grad_bias;
  // Set by every backward pass, cleared by the optimizer step.
  bool grads_fresh = false;

  LayerParams() = default;
  LayerParams(Tensor w, Tensor b);

  void zero_grad();
};

LayerParams init_dense(std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng);
LayerParams init_conv1d(std::size_t kernel, std::mt19937_64& rng);
LayerParams init_conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                        std::mt19937_64& rng);

// ---- dense: y = x W + b, W is [din, dout] ----
Tensor dense_forward(const Tensor& x, const LayerParams& p);
/// Accumulates dW and db into p and returns dL/dx.
Tensor dense_backward(const Tensor& x, LayerParams& p, const Tensor& dy);

// ---- 1-D convolution along the 300-sample axis of a [B, T, 300] tensor ----
// One odd-length kernel shared by every timestep, same padding, stride 1.
Tensor conv1d_forward(const Tensor& x, const LayerParams& p);
Tensor conv1d_backward(const Tensor& x, LayerParams& p, const Tensor& dy);

// ---- 2-D convolution over [B, C, H, W] images ----
struct Conv2dGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;

  std::size_t out_extent(std::size_t in_extent) const;
};

struct Conv2dCache {
  Shape input_shape;
  // im2col matrices, one [Cin*K*K, Ho*Wo] block per batch item.
  std::vector<double> columns;
};

Tensor conv2d_forward(const Tensor& x, const LayerParams& p, const Conv2dGeometry& g,
                      Conv2dCache* cache = nullptr);
Tensor conv2d_backward(const Conv2dCache& cache, LayerParams& p, const Conv2dGeometry& g,
                       const Tensor& dy);

// ---- elementwise ----
Tensor relu_forward(const Tensor& x);
/// Gradient of relu given its forward output.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

// ---- pooling ----
struct MaxPoolResult {
  Tensor out;                         // [B, C]
  std::vector<std::size_t> argmax_t;  // B*C winning timesteps
};

/// Global max over the time axis of [B, T, C]; ties go to the first timestep.
MaxPoolResult max_pool_time(const Tensor& x);
Tensor max_pool_time_backward(const MaxPoolResult& fwd, const Shape& input_shape, const Tensor& dy);

/// Mean over the spatial axes of [B, C, H, W] -> [B, C].
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& dy);

// ---- per-row L2 normalization; all-zero rows pass through unchanged ----
Tensor l2_normalize_rows(const Tensor& x);
Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& y, const Tensor& dy);

}  // namespace biofuse
