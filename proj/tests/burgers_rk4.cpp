#include "burgers_rk4.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <numbers>

namespace mvrom::testing {

std::vector<double> burgers_rk4(const std::vector<double>& u0, double viscosity, double t, double dt) {
  const int n = static_cast<int>(u0.size());
  const int nk = n / 2 + 1;
  const auto steps = static_cast<long>(std::ceil(t / dt - 1e-12));
  const double h = steps > 0 ? t / static_cast<double>(steps) : 0.0;

  std::vector<double> real(n);
  std::vector<std::complex<double>> spec(nk);
  auto* cspec = reinterpret_cast<fftw_complex*>(spec.data());
  fftw_plan fwd = fftw_plan_dft_r2c_1d(n, real.data(), cspec, FFTW_ESTIMATE);
  fftw_plan inv = fftw_plan_dft_c2r_1d(n, cspec, real.data(), FFTW_ESTIMATE);

  std::vector<double> wave(nk), lin(nk);
  std::vector<bool> keep(nk);
  for (int k = 0; k < nk; ++k) {
    wave[k] = 2.0 * std::numbers::pi * k;
    lin[k] = -viscosity * wave[k] * wave[k];
    keep[k] = 3 * k < n;
  }

  auto nonlinear = [&](const std::vector<std::complex<double>>& uh) {
    spec = uh;
    fftw_execute(inv);
    for (double& v : real) v = v * v / (static_cast<double>(n) * n);
    fftw_execute(fwd);
    std::vector<std::complex<double>> out(nk);
    for (int k = 0; k < nk; ++k) out[k] = keep[k] ? std::complex<double>(0.0, -0.5 * wave[k]) * spec[k] : 0.0;
    return out;
  };

  real = u0;
  fftw_execute(fwd);
  std::vector<std::complex<double>> uh = spec;
  std::vector<double> e_half(nk), e_full(nk);
  for (int k = 0; k < nk; ++k) {
    e_half[k] = std::exp(lin[k] * h / 2);
    e_full[k] = std::exp(lin[k] * h);
  }
  std::vector<std::complex<double>> a(nk), b(nk), c(nk);
  for (long s = 0; s < steps; ++s) {
    auto k1 = nonlinear(uh);
    for (int k = 0; k < nk; ++k) a[k] = e_half[k] * (uh[k] + 0.5 * h * k1[k]);
    auto k2 = nonlinear(a);
    for (int k = 0; k < nk; ++k) b[k] = e_half[k] * uh[k] + 0.5 * h * k2[k];
    auto k3 = nonlinear(b);
    for (int k = 0; k < nk; ++k) c[k] = e_full[k] * uh[k] + h * e_half[k] * k3[k];
    auto k4 = nonlinear(c);
    for (int k = 0; k < nk; ++k) {
      uh[k] = e_full[k] * uh[k] + h / 6.0 * (e_full[k] * k1[k] + 2.0 * e_half[k] * (k2[k] + k3[k]) + k4[k]);
    }
  }
  spec = uh;
  fftw_execute(inv);
  std::vector<double> out(real);
  for (double& v : out) v /= n;
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(inv);
  return out;
}

std::vector<double> subsample(const std::vector<double>& fine, std::size_t stride) {
  std::vector<double> out;
  for (std::size_t i = 0; i < fine.size(); i += stride) out.push_back(fine[i]);
  return out;
}

}  // namespace mvrom::testing
