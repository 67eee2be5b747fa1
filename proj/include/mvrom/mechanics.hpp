#pragma once

// Constrained-mechanics observation sets in R^4: a two-segment planar arm
// (configuration space is a torus) and points on an embedded Klein bottle.

#include <array>
#include <cstdint>
#include <utility>

#include "mvrom/dataset.hpp"
#include "mvrom/manifold.hpp"
#include "mvrom/tensor.hpp"

namespace mvrom::mechanics {

struct ArmConfig {
  double L1 = 1.0;
  double L2 = 1.0;

  void validate() const;
};

struct MechData {
  Tensor clean;   // (m, 4)
  Tensor noisy;   // (m, 4), clean + sigma * N(0, 1)
  Tensor angles;  // (m, 2) generating parameters
  double sigma = 0.0;

  std::size_t size() const { return clean.rows(); }
};

// x1 = L1 (cos t1, sin t1), x2 = x1 + L2 (cos t2, sin t2).
std::array<double, 4> arm_configuration(const ArmConfig& config, double theta1, double theta2);

MechData generate_arm_torus(const ArmConfig& config, std::size_t m, std::uint64_t seed);
// (u1, u2) uniform on [0, 2 pi)^2 pushed through the Klein embedding.
MechData generate_klein(const manifold::KleinConfig& config, std::size_t m, std::uint64_t seed);

MechData add_noise(const MechData& data, double sigma, std::uint64_t seed);

// First `fraction` of the samples for training, the rest for testing.
std::pair<MechData, MechData> split(const MechData& data, double fraction = 0.8);

// Dataset view: input = noisy, target = clean, (param, time) = the two
// generating angles.
Dataset to_dataset(const MechData& data);

}  // namespace mvrom::mechanics
