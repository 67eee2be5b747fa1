#include "mvrom/spectral.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mvrom::spectral {

namespace {

std::size_t smallest_factor(std::size_t n) {
  if (n % 2 == 0) return 2;
  for (std::size_t p = 3; p * p <= n; p += 2) {
    if (n % p == 0) return p;
  }
  return n;
}

// out[0..n) = DFT of in[0], in[stride], ..., in[(n-1)*stride]
void fft_rec(const Complex* in, std::size_t stride, Complex* out, std::size_t n, int sign) {
  if (n == 1) {
    out[0] = in[0];
    return;
  }
  const std::size_t p = smallest_factor(n);
  const std::size_t m = n / p;
  std::vector<Complex> sub(n);
  for (std::size_t r = 0; r < p; ++r) fft_rec(in + r * stride, stride * p, sub.data() + r * m, m, sign);
  const double base = sign * 2.0 * std::numbers::pi / static_cast<double>(n);
  for (std::size_t q = 0; q < p; ++q) {
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t idx = k + q * m;
      Complex acc = sub[k];
      for (std::size_t r = 1; r < p; ++r) {
        const double ang = base * static_cast<double>((r * idx) % n);
        acc += sub[r * m + k] * Complex(std::cos(ang), std::sin(ang));
      }
      out[idx] = acc;
    }
  }
}

}  // namespace

Grid::Grid(std::size_t n) : n_(n) {
  if (n < 2) throw std::invalid_argument("grid: need at least 2 points");
}

std::vector<double> Grid::points() const {
  std::vector<double> x(n_);
  for (std::size_t j = 0; j < n_; ++j) x[j] = this->x(j);
  return x;
}

long SpectralField::wavenumber(std::size_t i) const {
  const auto n = static_cast<long>(c_.size());
  const auto k = static_cast<long>(i);
  return k < (n + 1) / 2 ? k : k - n;
}

const Complex& SpectralField::at(long k) const {
  const auto n = static_cast<long>(c_.size());
  if (k < -n / 2 || k >= n - n / 2) throw std::out_of_range("spectral: wavenumber out of range");
  return c_[static_cast<std::size_t>((k + n) % n)];
}

double SpectralField::conjugate_asymmetry() const {
  const std::size_t n = c_.size();
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(c_[(n - i) % n] - std::conj(c_[i])));
  return worst;
}

std::vector<Complex> fft(std::span<const Complex> in, int sign) {
  std::vector<Complex> out(in.size());
  if (!in.empty()) fft_rec(in.data(), 1, out.data(), in.size(), sign);
  return out;
}

SpectralField dft(std::span<const double> values) {
  std::vector<Complex> in(values.begin(), values.end());
  auto out = fft(in, -1);
  const double inv = 1.0 / static_cast<double>(values.size());
  for (auto& c : out) c *= inv;
  return SpectralField(std::move(out));
}

std::vector<double> idft(const SpectralField& field) {
  auto out = fft(field.coefficients(), +1);
  std::vector<double> v(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) v[i] = out[i].real();
  return v;
}

std::vector<double> derivative(std::span<const double> values) {
  SpectralField f = dft(values);
  const std::size_t n = f.size();
  for (std::size_t i = 0; i < n; ++i) {
    const long k = f.wavenumber(i);
    if (n % 2 == 0 && i == n / 2) {
      f[i] = 0.0;
    } else {
      f[i] *= Complex(0.0, 2.0 * std::numbers::pi * static_cast<double>(k));
    }
  }
  return idft(f);
}

std::vector<double> antiderivative(std::span<const double> values) {
  SpectralField f = dft(values);
  const std::size_t n = f.size();
  for (std::size_t i = 0; i < n; ++i) {
    const long k = f.wavenumber(i);
    if (k == 0 || (n % 2 == 0 && i == n / 2)) {
      f[i] = 0.0;
    } else {
      f[i] /= Complex(0.0, 2.0 * std::numbers::pi * static_cast<double>(k));
    }
  }
  auto u = idft(f);
  const double u0 = u[0];
  for (double& v : u) v -= u0;
  return u;
}

double mean(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v;
  return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

}  // namespace mvrom::spectral
