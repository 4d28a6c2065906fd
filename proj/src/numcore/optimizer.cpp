#include "biofuse/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "biofuse/errors.hpp"

namespace biofuse {

void append_views(std::vector<ParamView>& out, const std::string& prefix, LayerParams& p) {
  out.push_back({prefix + ".weights", p.weights.values(), p.grad_weights.values(), &p.grads_fresh});
  out.push_back({prefix + ".bias", p.bias.values(), p.grad_bias.values(), &p.grads_fresh});
}

void append_views(std::vector<ParamView>& out, const std::string& prefix, BatchNormState& s) {
  out.push_back({prefix + ".gamma", s.gamma, s.grad_gamma, &s.grads_fresh});
  out.push_back({prefix + ".beta", s.beta, s.grad_beta, &s.grads_fresh});
}

Adam::Adam(AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) throw ParameterError("Adam learning rate must be positive");
  if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0))
    throw ParameterError("Adam betas must lie in [0,1)");
}

void Adam::step(std::span<const ParamView> params) {
  const bool any_fresh = std::any_of(params.begin(), params.end(), [](const ParamView& p) {
    return p.fresh != nullptr && *p.fresh;
  });
  if (!any_fresh) throw StaleGradientError("optimizer step without a backward pass since the previous step");

  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw DimensionError("optimizer parameter list changed between steps");

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != p.value.size()) throw DimensionError("optimizer parameter " + p.name + " changed size");
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = p.grad[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      p.value[j] -= cfg_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.epsilon);
    }
  }
  for (const auto& p : params)
    if (p.fresh) *p.fresh = false;
}

void zero_grads(std::span<const ParamView> params) {
  for (const auto& p : params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

}  // namespace biofuse
