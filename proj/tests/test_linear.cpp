#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvrom/burgers.hpp"
#include "mvrom/linear.hpp"
#include "mvrom/rng.hpp"

using namespace mvrom;
using namespace mvrom::linear;
using std::numbers::pi;

namespace {

Mat random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
  return m;
}

double orthonormality_error(const Mat& u) { return (u.transpose() * u - Mat::Identity(u.cols(), u.cols())).norm(); }

// Heat-equation snapshot pairs from random Fourier modes 1 and 2.
SnapshotPairs heat_pairs(std::size_t n, int count, double nu, double tau, std::uint64_t seed) {
  Rng rng(seed);
  SnapshotPairs s{Mat(n, count), Mat(n, count)};
  for (int c = 0; c < count; ++c) {
    double coef[4];
    for (double& v : coef) v = rng.uniform(-1, 1);
    for (std::size_t j = 0; j < n; ++j) {
      const double x = double(j) / double(n);
      double u = 0, up = 0;
      for (int k = 1; k <= 2; ++k) {
        const double m = coef[2 * k - 2] * std::cos(2 * pi * k * x) + coef[2 * k - 1] * std::sin(2 * pi * k * x);
        u += m;
        up += m * std::exp(-4 * pi * pi * k * k * nu * tau);
      }
      s.X(j, c) = u;
      s.Xp(j, c) = up;
    }
  }
  return s;
}

}  // namespace

TEST_CASE("svd examples and oracle") {
  Mat d = Mat::Zero(4, 3);
  d(0, 0) = -2;
  d(1, 1) = 5;
  d(2, 2) = 0.5;
  auto s = svd(d);
  CHECK((s.S - Vec::Map(std::vector<double>{5, 2, 0.5}.data(), 3)).norm() < 1e-15);

  for (auto [r, c] : {std::pair{100, 50}, std::pair{50, 100}, std::pair{100, 100}}) {
    CAPTURE(r);
    CAPTURE(c);
    Mat a = random_matrix(r, c, 7 + r + c);
    auto f = svd(a);
    CHECK((f.U * f.S.asDiagonal() * f.V.transpose() - a).norm() < 1e-9 * a.norm());
    CHECK(orthonormality_error(f.U) < 1e-10);
    CHECK(orthonormality_error(f.V) < 1e-10);
    for (Eigen::Index i = 1; i < f.S.size(); ++i) CHECK(f.S[i] <= f.S[i - 1]);
    Eigen::JacobiSVD<Mat> oracle(a);
    CHECK((f.S - oracle.singularValues()).norm() < 1e-10 * f.S[0]);
  }

  Vec x = Vec::LinSpaced(6, 1, 6), y = Vec::LinSpaced(4, -1, 2);
  auto r1 = svd(x * y.transpose());
  CHECK(r1.S[0] == doctest::Approx(x.norm() * y.norm()));
  for (Eigen::Index i = 1; i < r1.S.size(); ++i) CHECK(r1.S[i] < 1e-12 * r1.S[0]);
  CHECK(orthonormality_error(r1.U) < 1e-10);

  auto zero = svd(Mat::Zero(5, 3));
  CHECK(zero.S.norm() == 0.0);
  CHECK(orthonormality_error(zero.U) < 1e-12);
  Mat bad = Mat::Zero(2, 2);
  bad(0, 0) = NAN;
  CHECK_THROWS_AS(svd(bad), std::invalid_argument);
}

TEST_CASE("dmd recovers a known rank-2 linear map") {
  const Mat q = random_matrix(10, 2, 3).householderQr().householderQ() * Mat::Identity(10, 2);
  Mat p(2, 2);
  p << 1, 1, 0.3, -1;
  const Mat a = p * Eigen::Vector2d(0.9, 0.5).asDiagonal() * p.inverse();
  const Mat y = random_matrix(2, 30, 5);
  SnapshotPairs data{q * y, q * a * y};
  auto m = fit_dmd(data, 2);
  CHECK(orthonormality_error(m.U) < 1e-10);
  std::vector<double> ev{m.eigenvalues[0].real(), m.eigenvalues[1].real()};
  std::sort(ev.begin(), ev.end());
  CHECK(std::abs(ev[0] - 0.5) < 1e-8);
  CHECK(std::abs(ev[1] - 0.9) < 1e-8);
  CHECK(std::abs(m.eigenvalues[0].imag()) < 1e-12);

  // Exact on the invariant subspace.
  const Vec y0 = Eigen::Vector2d(0.4, -0.7);
  const Vec truth = q * a * a * a * y0;
  CHECK((dmd_predict(m, q * y0, 3) - truth).norm() < 1e-10);

  try {
    fit_dmd(data, 3);
    FAIL("expected throw");
  } catch (const BaselineError& e) {
    CHECK(std::string(e.what()) == "rank too high for data");
  }
  CHECK_THROWS_AS(fit_dmd(data, 0), std::invalid_argument);
  CHECK_THROWS_AS(fit_dmd(SnapshotPairs{data.X, data.Xp.leftCols(3)}, 2), std::invalid_argument);
}

TEST_CASE("dmd on heat-equation data recovers diffusive decay factors") {
  const double nu = 0.02, tau = 0.25;
  auto data = heat_pairs(64, 40, nu, tau, 11);
  auto m = fit_dmd(data, 4);
  std::vector<double> ev;
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(std::abs(m.eigenvalues[i].imag()) < 1e-10);
    ev.push_back(m.eigenvalues[i].real());
  }
  std::sort(ev.begin(), ev.end());
  const double e1 = std::exp(-4 * pi * pi * nu * tau), e2 = std::exp(-16 * pi * pi * nu * tau);
  CHECK(std::abs(ev[0] - e2) < 1e-10);
  CHECK(std::abs(ev[1] - e2) < 1e-10);
  CHECK(std::abs(ev[2] - e1) < 1e-10);
  CHECK(std::abs(ev[3] - e1) < 1e-10);
}

TEST_CASE("spectral differentiation matrices") {
  const std::size_t n = 32;
  Vec s(n), c(n);
  for (std::size_t j = 0; j < n; ++j) {
    s[j] = std::sin(2 * pi * 3 * j / double(n));
    c[j] = std::cos(2 * pi * 3 * j / double(n));
  }
  CHECK((derivative_matrix(n) * s - 6 * pi * c).norm() < 1e-11);
  CHECK((second_derivative_matrix(n) * s + 36 * pi * pi * s).norm() < 1e-10);
}

TEST_CASE("pod: pure diffusion, projection residual, linear map") {
  const double nu = 0.02, tau = 0.25;
  auto data = heat_pairs(64, 40, nu, tau, 13);
  PodOptions opts{.viscosity = nu, .tau = tau, .advection = false};
  auto m = fit_pod(data, 4, opts);
  CHECK(orthonormality_error(m.U) < 1e-10);
  auto next = heat_pairs(64, 1, nu, 3 * tau, 17);  // three steps at once
  const Vec pred = pod_predict(m, next.X.col(0), 3);
  CHECK((pred - next.Xp.col(0)).norm() < 1e-6 * next.Xp.col(0).norm());

  auto lm = fit_pod(data, 4, PodOptions{.viscosity = nu, .tau = tau, .evolution = PodEvolution::LinearMap});
  CHECK((pod_predict(lm, next.X.col(0), 3) - next.Xp.col(0)).norm() < 1e-10);

  burgers::BurgersConfig cfg;
  auto bd = burgers::generate_dataset(cfg, {.count = 64, .seed = 3});
  auto snaps = SnapshotPairs::from_dataset(bd);
  const Vec u = snaps.X.col(5);
  double prev = 1e300;
  for (int r = 1; r <= 8; ++r) {
    auto pm = fit_pod(snaps, r, {.evolution = PodEvolution::LinearMap});
    const double res = (u - pm.U * (pm.U.transpose() * u)).norm();
    CHECK(res <= prev * (1 + 1e-12));
    prev = res;
  }
}

TEST_CASE("pod: galerkin on burgers data and instability") {
  burgers::BurgersConfig cfg;
  auto bd = burgers::generate_dataset(cfg, {.count = 128, .seed = 5});
  auto snaps = SnapshotPairs::from_dataset(bd);
  auto m = fit_pod(snaps, 3);
  REQUIRE(m.Q.size() == 3);
  // Projected advection conserves energy up to the spectral truncation.
  Vec c = Vec::Constant(3, 0.3);
  double transfer = 0;
  for (int i = 0; i < 3; ++i) transfer += c[i] * c.dot(m.Q[std::size_t(i)] * c);
  CHECK(std::abs(transfer) < 1e-3);
  CHECK(pod_predict(m, snaps.X.col(0), 4).allFinite());

  // dc/dt = c^2 from c = 1 blows up at t = 1.
  PodModel toy;
  toy.rank = 1;
  toy.U = Mat::Identity(4, 1);
  toy.L = Mat::Zero(1, 1);
  toy.Q = {Mat::Constant(1, 1, 1.0)};
  toy.options = PodOptions{.viscosity = 0.0, .tau = 0.25};
  try {
    pod_predict(toy, Vec::Unit(4, 0), 8);
    FAIL("expected throw");
  } catch (const BaselineError& e) {
    CHECK(std::string(e.what()) == "reduced model unstable at rank 1");
  }
  CHECK(pod_predict(toy, Vec::Unit(4, 0), 0)[0] == 1.0);
}
