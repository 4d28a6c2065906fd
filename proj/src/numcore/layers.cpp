#include "biofuse/layers.hpp"

#include <algorithm>
#include <cmath>

#include "biofuse/errors.hpp"

namespace biofuse {

LayerParams::LayerParams(Tensor w, Tensor b)
    : weights(std::move(w)),
      bias(std::move(b)),
      grad_weights(weights.shape()),
      grad_bias(bias.shape()) {}

void LayerParams::zero_grad() {
  grad_weights.fill(0.0);
  grad_bias.fill(0.0);
}

namespace {

void fill_normal(Tensor& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank-" + std::to_string(rank) + " input, got " +
                         x.shape_string());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": gradient shape " + b.shape_string() +
                         " does not match " + a.shape_string());
}

}  // namespace

LayerParams init_dense(std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng) {
  LayerParams p(Tensor({in_dim, out_dim}), Tensor({out_dim}));
  fill_normal(p.weights, std::sqrt(2.0 / static_cast<double>(in_dim)), rng);
  return p;
}

LayerParams init_conv1d(std::size_t kernel, std::mt19937_64& rng) {
  if (kernel % 2 == 0) throw ParameterError("conv1d kernel length must be odd, got " + std::to_string(kernel));
  LayerParams p(Tensor({kernel}), Tensor({1}));
  // Start near the identity filter so the raw waveform reaches the trunk.
  fill_normal(p.weights, 0.1 / std::sqrt(static_cast<double>(kernel)), rng);
  p.weights[kernel / 2] += 1.0;
  return p;
}

LayerParams init_conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                        std::mt19937_64& rng) {
  LayerParams p(Tensor({out_channels, in_channels, kernel, kernel}), Tensor({out_channels}));
  fill_normal(p.weights, std::sqrt(2.0 / static_cast<double>(in_channels * kernel * kernel)), rng);
  return p;
}

// ---------------------------------------------------------------- dense

Tensor dense_forward(const Tensor& x, const LayerParams& p) {
  require_rank(x, 2, "dense_forward");
  const std::size_t din = p.weights.dim(0);
  const std::size_t dout = p.weights.dim(1);
  if (x.dim(1) != din)
    throw DimensionError("dense_forward: input " + x.shape_string() + " incompatible with weights " +
                         p.weights.shape_string());
  const std::size_t batch = x.dim(0);
  Tensor y({batch, dout});
  const double* w = p.weights.data();
  for (std::size_t i = 0; i < batch; ++i) {
    double* yr = y.data() + i * dout;
    std::copy_n(p.bias.data(), dout, yr);
    const double* xr = x.data() + i * din;
    for (std::size_t k = 0; k < din; ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      const double* wr = w + k * dout;
      for (std::size_t j = 0; j < dout; ++j) yr[j] += xv * wr[j];
    }
  }
  return y;
}

Tensor dense_backward(const Tensor& x, LayerParams& p, const Tensor& dy) {
  const std::size_t din = p.weights.dim(0);
  const std::size_t dout = p.weights.dim(1);
  const std::size_t batch = x.dim(0);
  if (dy.rank() != 2 || dy.dim(0) != batch || dy.dim(1) != dout)
    throw DimensionError("dense_backward: upstream gradient " + dy.shape_string() + " for output [" +
                         std::to_string(batch) + "," + std::to_string(dout) + "]");
  Tensor dx({batch, din});
  double* gw = p.grad_weights.data();
  const double* w = p.weights.data();
  for (std::size_t i = 0; i < batch; ++i) {
    const double* dyr = dy.data() + i * dout;
    const double* xr = x.data() + i * din;
    double* dxr = dx.data() + i * din;
    for (std::size_t j = 0; j < dout; ++j) p.grad_bias[j] += dyr[j];
    for (std::size_t k = 0; k < din; ++k) {
      const double* wr = w + k * dout;
      double* gwr = gw + k * dout;
      const double xv = xr[k];
      double acc = 0.0;
      for (std::size_t j = 0; j < dout; ++j) {
        gwr[j] += xv * dyr[j];
        acc += wr[j] * dyr[j];
      }
      dxr[k] = acc;
    }
  }
  p.grads_fresh = true;
  return dx;
}

// ---------------------------------------------------------------- conv1d

Tensor conv1d_forward(const Tensor& x, const LayerParams& p) {
  require_rank(x, 3, "conv1d_forward");
  if (x.dim(2) != kQrsLength)
    throw DimensionError("conv1d_forward: expected " + std::to_string(kQrsLength) +
                         " samples along the last axis, got " + x.shape_string());
  const std::size_t k = p.weights.size();
  const std::size_t len = x.dim(2);
  const std::size_t rows = x.dim(0) * x.dim(1);
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor y(x.shape(), p.bias[0]);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * len;
    double* yr = y.data() + r * len;
    for (std::size_t t = 0; t < k; ++t) {
      const double w = p.weights[t];
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(t) - pad;
      const std::size_t lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
      const std::size_t hi = off > 0 ? len - static_cast<std::size_t>(off) : len;
      for (std::size_t i = lo; i < hi; ++i) yr[i] += w * xr[static_cast<std::ptrdiff_t>(i) + off];
    }
  }
  return y;
}

Tensor conv1d_backward(const Tensor& x, LayerParams& p, const Tensor& dy) {
  require_same_shape(x, dy, "conv1d_backward");
  const std::size_t k = p.weights.size();
  const std::size_t len = x.dim(2);
  const std::size_t rows = x.dim(0) * x.dim(1);
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  Tensor dx(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * len;
    const double* dyr = dy.data() + r * len;
    double* dxr = dx.data() + r * len;
    double bsum = 0.0;
    for (std::size_t i = 0; i < len; ++i) bsum += dyr[i];
    p.grad_bias[0] += bsum;
    for (std::size_t t = 0; t < k; ++t) {
      const double w = p.weights[t];
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(t) - pad;
      const std::size_t lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
      const std::size_t hi = off > 0 ? len - static_cast<std::size_t>(off) : len;
      double gw = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto src = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + off);
        gw += dyr[i] * xr[src];
        dxr[src] += w * dyr[i];
      }
      p.grad_weights[t] += gw;
    }
  }
  p.grads_fresh = true;
  return dx;
}

// ---------------------------------------------------------------- conv2d

std::size_t Conv2dGeometry::out_extent(std::size_t in_extent) const {
  const std::size_t padded = in_extent + 2 * padding;
  if (padded < kernel) throw DimensionError("conv2d: input extent smaller than kernel");
  return (padded - kernel) / stride + 1;
}

Tensor conv2d_forward(const Tensor& x, const LayerParams& p, const Conv2dGeometry& g, Conv2dCache* cache) {
  require_rank(x, 4, "conv2d_forward");
  if (x.dim(1) != g.in_channels)
    throw DimensionError("conv2d_forward: expected " + std::to_string(g.in_channels) + " channels, got " +
                         x.shape_string());
  const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = g.out_extent(h), wo = g.out_extent(w);
  const std::size_t kk = g.kernel;
  const std::size_t rows = g.in_channels * kk * kk;
  const std::size_t cols = ho * wo;
  std::vector<double> columns(batch * rows * cols, 0.0);

  for (std::size_t b = 0; b < batch; ++b) {
    double* col = columns.data() + b * rows * cols;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const double* xc = x.data() + (b * g.in_channels + ci) * h * w;
      for (std::size_t kh = 0; kh < kk; ++kh) {
        for (std::size_t kw = 0; kw < kk; ++kw) {
          double* cr = col + ((ci * kk + kh) * kk + kw) * cols;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.padding);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const auto iw =
                  static_cast<std::ptrdiff_t>(ow * g.stride + kw) - static_cast<std::ptrdiff_t>(g.padding);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
              cr[oh * wo + ow] = xc[static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw)];
            }
          }
        }
      }
    }
  }

  Tensor y({batch, g.out_channels, ho, wo});
  const double* wt = p.weights.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* col = columns.data() + b * rows * cols;
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      double* yr = y.data() + (b * g.out_channels + co) * cols;
      std::fill_n(yr, cols, p.bias[co]);
      const double* wr = wt + co * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double wv = wr[r];
        const double* cr = col + r * cols;
        for (std::size_t q = 0; q < cols; ++q) yr[q] += wv * cr[q];
      }
    }
  }
  if (cache) {
    cache->input_shape = x.shape();
    cache->columns = std::move(columns);
  }
  return y;
}

Tensor conv2d_backward(const Conv2dCache& cache, LayerParams& p, const Conv2dGeometry& g, const Tensor& dy) {
  const Shape& in = cache.input_shape;
  const std::size_t batch = in[0], h = in[2], w = in[3];
  const std::size_t ho = g.out_extent(h), wo = g.out_extent(w);
  const std::size_t kk = g.kernel;
  const std::size_t rows = g.in_channels * kk * kk;
  const std::size_t cols = ho * wo;
  if (dy.shape() != Shape{batch, g.out_channels, ho, wo})
    throw DimensionError("conv2d_backward: upstream gradient " + dy.shape_string() + " mismatches output");

  Tensor dx(in);
  std::vector<double> dcol(rows * cols);
  const double* wt = p.weights.data();
  double* gw = p.grad_weights.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* col = cache.columns.data() + b * rows * cols;
    std::fill(dcol.begin(), dcol.end(), 0.0);
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const double* dyr = dy.data() + (b * g.out_channels + co) * cols;
      double bsum = 0.0;
      for (std::size_t q = 0; q < cols; ++q) bsum += dyr[q];
      p.grad_bias[co] += bsum;
      const double* wr = wt + co * rows;
      double* gwr = gw + co * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* cr = col + r * cols;
        double* dcr = dcol.data() + r * cols;
        const double wv = wr[r];
        double acc = 0.0;
        for (std::size_t q = 0; q < cols; ++q) {
          acc += dyr[q] * cr[q];
          dcr[q] += wv * dyr[q];
        }
        gwr[r] += acc;
      }
    }
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      double* dxc = dx.data() + (b * g.in_channels + ci) * h * w;
      for (std::size_t kh = 0; kh < kk; ++kh) {
        for (std::size_t kw = 0; kw < kk; ++kw) {
          const double* dcr = dcol.data() + ((ci * kk + kh) * kk + kw) * cols;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.padding);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const auto iw =
                  static_cast<std::ptrdiff_t>(ow * g.stride + kw) - static_cast<std::ptrdiff_t>(g.padding);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
              dxc[static_cast<std::size_t>(ih) * w + static_cast<std::size_t>(iw)] += dcr[oh * wo + ow];
            }
          }
        }
      }
    }
  }
  p.grads_fresh = true;
  return dx;
}

// ---------------------------------------------------------------- relu

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "relu_backward");
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

// ---------------------------------------------------------------- pooling

MaxPoolResult max_pool_time(const Tensor& x) {
  require_rank(x, 3, "max_pool_time");
  const std::size_t batch = x.dim(0), steps = x.dim(1), ch = x.dim(2);
  MaxPoolResult r{Tensor({batch, ch}), std::vector<std::size_t>(batch * ch, 0)};
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      std::size_t best = 0;
      double v = x.at(b, 0, c);
      for (std::size_t t = 1; t < steps; ++t) {
        if (x.at(b, t, c) > v) {
          v = x.at(b, t, c);
          best = t;
        }
      }
      r.out.at(b, c) = v;
      r.argmax_t[b * ch + c] = best;
    }
  }
  return r;
}

Tensor max_pool_time_backward(const MaxPoolResult& fwd, const Shape& input_shape, const Tensor& dy) {
  require_same_shape(fwd.out, dy, "max_pool_time_backward");
  Tensor dx(input_shape);
  const std::size_t batch = input_shape[0], ch = input_shape[2];
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) dx.at(b, fwd.argmax_t[b * ch + c], c) += dy.at(b, c);
  return dx;
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t batch = x.dim(0), ch = x.dim(1), area = x.dim(2) * x.dim(3);
  Tensor y({batch, ch});
  for (std::size_t i = 0; i < batch * ch; ++i) {
    const double* src = x.data() + i * area;
    double s = 0.0;
    for (std::size_t q = 0; q < area; ++q) s += src[q];
    y[i] = s / static_cast<double>(area);
  }
  return y;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& dy) {
  Tensor dx(input_shape);
  const std::size_t area = input_shape[2] * input_shape[3];
  const double scale = 1.0 / static_cast<double>(area);
  for (std::size_t i = 0; i < dy.size(); ++i) std::fill_n(dx.data() + i * area, area, dy[i] * scale);
  return dx;
}

// ---------------------------------------------------------------- l2 normalize

Tensor l2_normalize_rows(const Tensor& x) {
  require_rank(x, 2, "l2_normalize_rows");
  Tensor y = x;
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    auto r = y.row(i);
    double sq = 0.0;
    for (double v : r) sq += v * v;
    if (sq == 0.0) continue;
    const double norm = std::sqrt(sq);
    for (auto& v : r) v /= norm;
  }
  return y;
}

Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& y, const Tensor& dy) {
  require_same_shape(x, dy, "l2_normalize_rows_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    const auto xr = x.row(i);
    double sq = 0.0;
    for (double v : xr) sq += v * v;
    if (sq == 0.0) continue;
    const double norm = std::sqrt(sq);
    const auto yr = y.row(i);
    const auto dyr = dy.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * dyr[j];
    auto dxr = dx.row(i);
    for (std::size_t j = 0; j < yr.size(); ++j) dxr[j] = (dyr[j] - yr[j] * dot) / norm;
  }
  return dx;
}

}  // namespace biofuse
