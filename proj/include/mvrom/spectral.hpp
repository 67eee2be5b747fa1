#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace mvrom::spectral {

using Complex = std::complex<double>;

// Uniform periodic grid x_j = j/n on [0,1).
class Grid {
 public:
  explicit Grid(std::size_t n);
  std::size_t size() const { return n_; }
  double spacing() const { return 1.0 / static_cast<double>(n_); }
  double x(std::size_t j) const { return static_cast<double>(j) / static_cast<double>(n_); }
  std::vector<double> points() const;

 private:
  std::size_t n_;
};

// Fourier coefficients phi_k = (1/n) sum_j v_j exp(-2 pi i k x_j), stored in
// transform order (k = 0, 1, ..., n/2-1, -n/2, ..., -1).
class SpectralField {
 public:
  SpectralField() = default;
  explicit SpectralField(std::vector<Complex> coeffs) : c_(std::move(coeffs)) {}

  std::size_t size() const { return c_.size(); }
  // Signed wavenumber of storage slot i.
  long wavenumber(std::size_t i) const;
  Complex& operator[](std::size_t i) { return c_[i]; }
  const Complex& operator[](std::size_t i) const { return c_[i]; }
  // Coefficient for signed k in [-n/2, n/2-1].
  const Complex& at(long k) const;
  std::span<Complex> coefficients() { return c_; }
  std::span<const Complex> coefficients() const { return c_; }

  // max |phi_{-k} - conj(phi_k)|
  double conjugate_asymmetry() const;

 private:
  std::vector<Complex> c_;
};

// Mixed-radix Cooley-Tukey transform; sign = -1 forward, +1 inverse,
// unnormalised.
std::vector<Complex> fft(std::span<const Complex> in, int sign);

SpectralField dft(std::span<const double> values);
// Real part of the inverse transform.
std::vector<double> idft(const SpectralField& field);

// d/dx on the periodic unit interval; the Nyquist mode is dropped.
std::vector<double> derivative(std::span<const double> values);
// Periodic antiderivative U with U(0) = 0. Requires a mean-zero input (the
// k = 0 coefficient is ignored).
std::vector<double> antiderivative(std::span<const double> values);

double mean(std::span<const double> values);

}  // namespace mvrom::spectral
