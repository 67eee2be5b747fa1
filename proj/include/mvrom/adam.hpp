#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvrom/tensor.hpp"

namespace mvrom {

struct Parameter {
  std::string name;
  Tensor value;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update. State is zero-initialised on the first
// call. A non-finite gradient throws std::domain_error naming the parameter
// and leaves every parameter untouched.
void adam_step(std::span<Parameter> params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& config);

}  // namespace mvrom
