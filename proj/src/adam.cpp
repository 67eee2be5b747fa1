#include "mvrom/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace mvrom {

void adam_step(std::span<Parameter> params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& config) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: parameter/gradient count mismatch");
  if (!(config.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].shape() != params[p].value.shape()) {
      throw std::invalid_argument("adam: gradient shape mismatch for " + params[p].name);
    }
    if (!grads[p].all_finite()) throw std::domain_error("adam: non-finite gradient for parameter " + params[p].name);
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  } else if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam: state does not match parameter list");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p].value.data();
    auto g = grads[p].data();
    auto m = state.m[p].data();
    auto v = state.v[p].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      w[i] -= config.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.eps);
    }
  }
}

}  // namespace mvrom
