#pragma once

// Viscous Burgers u_t + u u_x = nu u_xx on the periodic unit interval,
// solved exactly through the Cole-Hopf map u = -2 nu (ln phi)_x, which turns
// it into the heat equation phi_t = nu phi_xx. Fourier modes of phi decay as
// exp(-4 pi^2 k^2 nu t).

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mvrom/dataset.hpp"
#include "mvrom/spectral.hpp"

namespace mvrom::burgers {

struct BurgersConfig {
  double viscosity = 0.02;
  double tau = 0.25;
  std::size_t nx = 100;

  void validate() const;
};

struct FieldSample {
  std::vector<double> values;
  double time = 0.0;

  std::size_t size() const { return values.size(); }
};

class ColeHopfError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// What a truncated evolution does when the truncated phi is not positive
// somewhere. Exact evolutions keep phi > 0; low-mode truncations may not.
enum class PhiSign {
  Strict,     // throw ColeHopfError
  Magnitude,  // use ln|phi| (floored at the smallest positive double)
};

// Validates the grid requirements: even size, at least 16 points.
void check_grid(std::size_t nx);

// phi = exp(-(1/2nu) int_0^x u). Requires mean(u) = 0 within 1e-8.
std::vector<double> cole_hopf_forward(std::span<const double> u, double viscosity);

// u = -2 nu d/dx ln phi. Requires phi > 0 unless `sign` relaxes it.
std::vector<double> cole_hopf_inverse(std::span<const double> phi, double viscosity, PhiSign sign = PhiSign::Strict);

struct EvolveOptions {
  // Keep only |k| <= truncation/2 of phi (the Cole-Hopf-n_f model).
  std::optional<int> truncation;
  PhiSign sign = PhiSign::Strict;
};

FieldSample evolve_exact(const FieldSample& u0, double viscosity, double t, const EvolveOptions& options = {});

// alpha sin(2 pi x) + (1 - alpha) cos^3(2 pi x) on a grid of nx points.
std::vector<double> u1_initial(std::size_t nx, double alpha);
FieldSample sample_u1(std::size_t nx, double alpha, double t, double viscosity);

struct DatasetOptions {
  std::size_t count = 512;
  std::pair<double, double> alpha_range{0.0, 1.0};
  std::pair<double, double> time_range{0.0, 0.75};
  std::uint64_t seed = 0;
};

// Pairs (u(t_i), u(t_i + tau)) with alpha and t_i uniform on their ranges.
// Sample i draws from its own derived stream, so the result does not depend
// on generation order.
Dataset generate_dataset(const BurgersConfig& config, const DatasetOptions& options);

// Trajectories u(alpha, k tau), k = 0..steps, from initial conditions at
// t = 0 for each alpha; used as the evaluation ensemble.
std::vector<std::vector<FieldSample>> trajectories(const BurgersConfig& config, std::span<const double> alphas,
                                                   std::size_t steps);

std::vector<double> uniform_alphas(std::size_t count);

}  // namespace mvrom::burgers
