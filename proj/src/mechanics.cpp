#include "mvrom/mechanics.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mvrom/rng.hpp"

namespace mvrom::mechanics {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

MechData empty(std::size_t m) { return MechData{Tensor(Shape{m, 4}), Tensor(Shape{m, 4}), Tensor(Shape{m, 2}), 0.0}; }

MechData take_rows(const MechData& d, std::size_t begin, std::size_t end) {
  MechData out = empty(end - begin);
  out.sigma = d.sigma;
  for (std::size_t i = begin; i < end; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      out.clean.at(i - begin, j) = d.clean.at(i, j);
      out.noisy.at(i - begin, j) = d.noisy.at(i, j);
    }
    out.angles.at(i - begin, 0) = d.angles.at(i, 0);
    out.angles.at(i - begin, 1) = d.angles.at(i, 1);
  }
  return out;
}

}  // namespace

void ArmConfig::validate() const {
  if (!(L1 > 0 && L2 > 0)) throw std::invalid_argument("arm: segment lengths must be positive");
}

std::array<double, 4> arm_configuration(const ArmConfig& c, double t1, double t2) {
  const double x1 = c.L1 * std::cos(t1), y1 = c.L1 * std::sin(t1);
  return {x1, y1, x1 + c.L2 * std::cos(t2), y1 + c.L2 * std::sin(t2)};
}

MechData generate_arm_torus(const ArmConfig& config, std::size_t m, std::uint64_t seed) {
  config.validate();
  if (m == 0) throw std::invalid_argument("arm: need at least one sample");
  Rng rng(seed);
  MechData d = empty(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double t1 = rng.uniform(0, kTwoPi), t2 = rng.uniform(0, kTwoPi);
    const auto x = arm_configuration(config, t1, t2);
    for (std::size_t j = 0; j < 4; ++j) d.clean.at(i, j) = d.noisy.at(i, j) = x[j];
    d.angles.at(i, 0) = t1;
    d.angles.at(i, 1) = t2;
  }
  return d;
}

MechData generate_klein(const manifold::KleinConfig& config, std::size_t m, std::uint64_t seed) {
  config.validate();
  if (m == 0) throw std::invalid_argument("klein: need at least one sample");
  const manifold::KleinMap map(config.a, config.b);
  Rng rng(seed);
  MechData d = empty(m);
  manifold::Vec u(2);
  for (std::size_t i = 0; i < m; ++i) {
    u << rng.uniform(0, kTwoPi), rng.uniform(0, kTwoPi);
    const auto z = map.evaluate(u).point;
    for (std::size_t j = 0; j < 4; ++j) d.clean.at(i, j) = d.noisy.at(i, j) = z[static_cast<Eigen::Index>(j)];
    d.angles.at(i, 0) = u[0];
    d.angles.at(i, 1) = u[1];
  }
  return d;
}

MechData add_noise(const MechData& data, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0)) throw std::invalid_argument("add_noise: sigma must be >= 0");
  MechData out = data;
  out.sigma = sigma;
  Rng rng(seed);
  for (std::size_t i = 0; i < out.clean.size(); ++i) out.noisy[i] = out.clean[i] + sigma * rng.normal();
  return out;
}

std::pair<MechData, MechData> split(const MechData& data, double fraction) {
  if (!(fraction > 0 && fraction < 1)) throw std::invalid_argument("split: fraction must be in (0, 1)");
  const auto cut = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  if (cut == 0 || cut == data.size()) throw std::invalid_argument("split: too few samples");
  return {take_rows(data, 0, cut), take_rows(data, cut, data.size())};
}

Dataset to_dataset(const MechData& data) {
  Dataset d;
  d.dim = 4;
  d.viscosity = 0.0;
  d.tau = 0.0;
  d.pairs.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& p = d.pairs[i];
    p.param = data.angles.at(i, 0);
    p.time = data.angles.at(i, 1);
    p.input.resize(4);
    p.target.resize(4);
    for (std::size_t j = 0; j < 4; ++j) {
      p.input[j] = data.noisy.at(i, j);
      p.target[j] = data.clean.at(i, j);
    }
  }
  return d;
}

}  // namespace mvrom::mechanics
