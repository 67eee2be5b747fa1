#include "mvrom/linear.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "mvrom/spectral.hpp"

namespace mvrom::linear {

namespace {

constexpr double kRankTolerance = 1e-12;

// Hestenes rotations on the columns of a tall matrix (rows >= cols).
Svd jacobi_tall(const Mat& a, int max_sweeps) {
  const Eigen::Index m = a.rows(), n = a.cols();
  Mat w = a;
  Mat v = Mat::Identity(n, n);
  const double eps = std::numeric_limits<double>::epsilon();
  bool converged = false;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double alpha = w.col(p).squaredNorm();
        const double beta = w.col(q).squaredNorm();
        const double gamma = w.col(p).dot(w.col(q));
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) throw BaselineError("svd: Jacobi iteration did not converge");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Vec norms(n);
  for (Eigen::Index j = 0; j < n; ++j) norms[j] = w.col(j).norm();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return norms[x] > norms[y]; });

  Svd out{Mat(m, n), Vec(n), Mat(n, n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = order[static_cast<std::size_t>(j)];
    out.S[j] = norms[src];
    out.V.col(j) = v.col(src);
    out.U.col(j) = norms[src] > 0.0 ? Vec(w.col(src) / norms[src]) : Vec(Vec::Zero(m));
  }
  // Complete U where a singular value is exactly zero.
  for (Eigen::Index j = 0; j < n; ++j) {
    if (out.S[j] > 0.0) continue;
    for (Eigen::Index e = 0; e < m; ++e) {
      Vec cand = Vec::Unit(m, e);
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k != j && out.U.col(k).squaredNorm() > 0.0) cand -= out.U.col(k).dot(cand) * out.U.col(k);
      }
      if (cand.norm() > 0.5) {
        out.U.col(j) = cand.normalized();
        break;
      }
    }
  }
  return out;
}

void check_rank(const Svd& s, int rank, Eigen::Index limit) {
  if (rank < 1 || rank > limit) {
    throw std::invalid_argument("rank " + std::to_string(rank) + " outside [1, " + std::to_string(limit) + "]");
  }
  if (s.S[0] <= 0.0 || s.S[rank - 1] / s.S[0] < kRankTolerance) throw BaselineError("rank too high for data");
}

Mat apply_columns(std::size_t n, const std::function<void(std::vector<double>&)>& op) {
  Mat d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> e(n, 0.0);
    e[j] = 1.0;
    op(e);
    for (std::size_t i = 0; i < n; ++i) d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = e[i];
  }
  return d;
}

}  // namespace

Svd svd(const Mat& a, int max_sweeps) {
  if (a.size() == 0) throw std::invalid_argument("svd: empty matrix");
  if (!a.allFinite()) throw std::invalid_argument("svd: non-finite entries");
  if (a.rows() >= a.cols()) return jacobi_tall(a, max_sweeps);
  Svd t = jacobi_tall(a.transpose(), max_sweeps);
  return Svd{std::move(t.V), std::move(t.S), std::move(t.U)};
}

SnapshotPairs SnapshotPairs::from_dataset(const Dataset& d) {
  d.validate();
  const auto n = static_cast<Eigen::Index>(d.dim), m = static_cast<Eigen::Index>(d.size());
  SnapshotPairs s{Mat(n, m), Mat(n, m)};
  for (Eigen::Index j = 0; j < m; ++j) {
    s.X.col(j) = Eigen::Map<const Vec>(d.pairs[static_cast<std::size_t>(j)].input.data(), n);
    s.Xp.col(j) = Eigen::Map<const Vec>(d.pairs[static_cast<std::size_t>(j)].target.data(), n);
  }
  return s;
}

void SnapshotPairs::validate() const {
  if (X.rows() != Xp.rows() || X.cols() != Xp.cols()) throw std::invalid_argument("snapshots: X and X' differ in shape");
  if (X.size() == 0) throw std::invalid_argument("snapshots: empty");
}

DmdModel fit_dmd(const SnapshotPairs& data, int rank) {
  data.validate();
  const Svd s = svd(data.X);
  check_rank(s, rank, std::min(data.X.rows(), data.X.cols()));
  DmdModel m;
  m.rank = rank;
  m.U = s.U.leftCols(rank);
  const Mat v_over_s = s.V.leftCols(rank) * s.S.head(rank).cwiseInverse().asDiagonal();
  const Mat xp_v = data.Xp * v_over_s;
  m.A_tilde = m.U.transpose() * xp_v;
  Eigen::EigenSolver<Mat> eig(m.A_tilde);
  if (eig.info() != Eigen::Success) throw BaselineError("dmd: eigen-decomposition failed");
  m.eigenvalues = eig.eigenvalues();
  if (!m.eigenvalues.allFinite()) throw BaselineError("dmd: non-finite eigenvalues");
  m.modes = xp_v.cast<std::complex<double>>() * eig.eigenvectors();
  return m;
}

Vec dmd_predict(const DmdModel& model, const Vec& u, int steps) {
  if (steps < 0) throw std::invalid_argument("dmd_predict: steps must be >= 0");
  Vec c = model.U.transpose() * u;
  for (int k = 0; k < steps; ++k) c = model.A_tilde * c;
  return model.U * c;
}

void PodOptions::validate() const {
  if (!(viscosity >= 0)) throw std::invalid_argument("pod: viscosity must be >= 0");
  if (!(tau > 0)) throw std::invalid_argument("pod: tau must be positive");
  if (substeps < 1) throw std::invalid_argument("pod: substeps must be >= 1");
}

Mat derivative_matrix(std::size_t n) {
  return apply_columns(n, [](std::vector<double>& v) { v = spectral::derivative(v); });
}

Mat second_derivative_matrix(std::size_t n) {
  return apply_columns(n, [](std::vector<double>& v) {
    auto f = spectral::dft(v);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const double k = 2.0 * std::numbers::pi * static_cast<double>(f.wavenumber(i));
      f[i] *= -k * k;
    }
    v = spectral::idft(f);
  });
}

PodModel fit_pod(const SnapshotPairs& data, int rank, const PodOptions& options) {
  data.validate();
  options.validate();
  const Svd s = svd(data.X);
  check_rank(s, rank, std::min(data.X.rows(), data.X.cols()));
  PodModel m;
  m.rank = rank;
  m.options = options;
  m.U = s.U.leftCols(rank);

  if (options.evolution == PodEvolution::LinearMap) {
    const Mat c = m.U.transpose() * data.X;
    const Mat cp = m.U.transpose() * data.Xp;
    m.A_map = c.transpose().completeOrthogonalDecomposition().solve(cp.transpose()).transpose();
    return m;
  }
  const auto n = static_cast<std::size_t>(data.X.rows());
  m.L = options.viscosity * (m.U.transpose() * second_derivative_matrix(n) * m.U);
  const Mat du = derivative_matrix(n) * m.U;
  m.Q.assign(static_cast<std::size_t>(rank), Mat::Zero(rank, rank));
  for (int j = 0; j < rank; ++j) {
    for (int k = 0; k < rank; ++k) {
      const Vec prod = m.U.col(j).cwiseProduct(du.col(k));
      const Vec proj = m.U.transpose() * prod;
      for (int i = 0; i < rank; ++i) m.Q[static_cast<std::size_t>(i)](j, k) = -proj[i];
    }
  }
  return m;
}

Vec pod_rhs(const PodModel& model, const Vec& c) {
  Vec out = model.L * c;
  if (model.options.advection) {
    for (int i = 0; i < model.rank; ++i) out[i] += c.dot(model.Q[static_cast<std::size_t>(i)] * c);
  }
  return out;
}

Vec pod_predict(const PodModel& model, const Vec& u, int steps) {
  if (steps < 0) throw std::invalid_argument("pod_predict: steps must be >= 0");
  Vec c = model.U.transpose() * u;
  const double limit = 1e8 * std::max(1.0, c.norm());
  auto unstable = [&] { return BaselineError("reduced model unstable at rank " + std::to_string(model.rank)); };

  if (model.options.evolution == PodEvolution::LinearMap) {
    for (int k = 0; k < steps; ++k) c = model.A_map * c;
    if (!c.allFinite() || c.norm() > limit) throw unstable();
    return model.U * c;
  }
  const double dt = model.options.tau / model.options.substeps;
  for (int k = 0; k < steps * model.options.substeps; ++k) {
    const Vec k1 = pod_rhs(model, c);
    const Vec k2 = pod_rhs(model, c + 0.5 * dt * k1);
    const Vec k3 = pod_rhs(model, c + 0.5 * dt * k2);
    const Vec k4 = pod_rhs(model, c + dt * k3);
    c += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!c.allFinite() || c.norm() > limit) throw unstable();
  }
  return model.U * c;
}

}  // namespace mvrom::linear
