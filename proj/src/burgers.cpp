#include "mvrom/burgers.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "mvrom/rng.hpp"

namespace mvrom::burgers {

using spectral::Complex;

void BurgersConfig::validate() const {
  if (!(viscosity > 0.0)) throw std::invalid_argument("burgers: viscosity must be positive");
  if (!(tau > 0.0)) throw std::invalid_argument("burgers: tau must be positive");
  check_grid(nx);
}

void check_grid(std::size_t nx) {
  if (nx < 16 || nx % 2 != 0) throw std::invalid_argument("burgers: grid size must be even and >= 16, got " + std::to_string(nx));
}

std::vector<double> cole_hopf_forward(std::span<const double> u, double viscosity) {
  if (!(viscosity > 0.0)) throw std::invalid_argument("cole_hopf: viscosity must be positive");
  const double m = spectral::mean(u);
  if (std::abs(m) > 1e-8) throw ColeHopfError("Cole-Hopf requires mean-zero field (mean = " + std::to_string(m) + ")");
  auto phi = spectral::antiderivative(u);
  const double c = -1.0 / (2.0 * viscosity);
  for (double& v : phi) v = std::exp(c * v);
  return phi;
}

std::vector<double> cole_hopf_inverse(std::span<const double> phi, double viscosity, PhiSign sign) {
  if (!(viscosity > 0.0)) throw std::invalid_argument("cole_hopf: viscosity must be positive");
  std::vector<double> logphi(phi.size());
  for (std::size_t j = 0; j < phi.size(); ++j) {
    double p = phi[j];
    if (!(p > 0.0)) {
      if (sign == PhiSign::Strict) {
        throw ColeHopfError("Cole-Hopf inverse needs phi > 0 (phi[" + std::to_string(j) + "] = " + std::to_string(p) + ")");
      }
      p = std::max(std::abs(p), std::numeric_limits<double>::min());
    }
    logphi[j] = std::log(p);
  }
  auto u = spectral::derivative(logphi);
  for (double& v : u) v *= -2.0 * viscosity;
  return u;
}

FieldSample evolve_exact(const FieldSample& u0, double viscosity, double t, const EvolveOptions& options) {
  if (!(t >= 0.0)) throw std::invalid_argument("evolve_exact: negative time");
  const std::size_t n = u0.size();
  if (options.truncation) {
    const int nf = *options.truncation;
    if (nf < 2 || nf % 2 != 0 || static_cast<std::size_t>(nf) > n) {
      throw std::invalid_argument("evolve_exact: truncation must be even in [2, nx], got " + std::to_string(nf));
    }
  }
  auto phi_hat = spectral::dft(cole_hopf_forward(u0.values, viscosity));
  const double rate = 4.0 * std::numbers::pi * std::numbers::pi * viscosity * t;
  for (std::size_t i = 0; i < n; ++i) {
    const long k = phi_hat.wavenumber(i);
    if (options.truncation && std::abs(k) > *options.truncation / 2) {
      phi_hat[i] = 0.0;
    } else {
      phi_hat[i] *= std::exp(-rate * static_cast<double>(k * k));
    }
  }
  return FieldSample{cole_hopf_inverse(spectral::idft(phi_hat), viscosity, options.sign), u0.time + t};
}

std::vector<double> u1_initial(std::size_t nx, double alpha) {
  std::vector<double> u(nx);
  for (std::size_t j = 0; j < nx; ++j) {
    const double th = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(nx);
    const double c = std::cos(th);
    u[j] = alpha * std::sin(th) + (1.0 - alpha) * c * c * c;
  }
  return u;
}

FieldSample sample_u1(std::size_t nx, double alpha, double t, double viscosity) {
  FieldSample u0{u1_initial(nx, alpha), 0.0};
  return t == 0.0 ? u0 : evolve_exact(u0, viscosity, t);
}

Dataset generate_dataset(const BurgersConfig& config, const DatasetOptions& options) {
  config.validate();
  if (options.count < 1) throw std::invalid_argument("burgers dataset: count must be >= 1");
  Dataset data{config.nx, config.viscosity, config.tau, {}};
  data.pairs.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    Rng rng(Rng::derive(options.seed, i));
    const double alpha = rng.uniform(options.alpha_range.first, options.alpha_range.second);
    const double t = rng.uniform(options.time_range.first, options.time_range.second);
    FieldSample input = sample_u1(config.nx, alpha, t, config.viscosity);
    FieldSample target = evolve_exact(input, config.viscosity, config.tau);
    data.pairs.push_back({std::move(input.values), std::move(target.values), alpha, t});
  }
  return data;
}

std::vector<std::vector<FieldSample>> trajectories(const BurgersConfig& config, std::span<const double> alphas,
                                                   std::size_t steps) {
  config.validate();
  std::vector<std::vector<FieldSample>> out;
  out.reserve(alphas.size());
  for (double alpha : alphas) {
    std::vector<FieldSample> traj;
    FieldSample u0{u1_initial(config.nx, alpha), 0.0};
    traj.push_back(u0);
    for (std::size_t k = 1; k <= steps; ++k) {
      traj.push_back(evolve_exact(u0, config.viscosity, static_cast<double>(k) * config.tau));
    }
    out.push_back(std::move(traj));
  }
  return out;
}

std::vector<double> uniform_alphas(std::size_t count) {
  if (count == 0) return {};
  if (count == 1) return {0.5};
  std::vector<double> a(count);
  for (std::size_t i = 0; i < count; ++i) a[i] = static_cast<double>(i) / static_cast<double>(count - 1);
  return a;
}

}  // namespace mvrom::burgers
