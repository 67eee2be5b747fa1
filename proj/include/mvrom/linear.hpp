#pragma once

// Linear reduced-order baselines: exact DMD and POD with Galerkin
// evolution of the Burgers equation, plus the SVD they both rest on.

#include <Eigen/Dense>
#include <stdexcept>

#include "mvrom/dataset.hpp"

namespace mvrom::linear {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class BaselineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Svd {
  Mat U;  // m x k, orthonormal columns
  Vec S;  // k, non-increasing
  Mat V;  // n x k
};

// Thin SVD by one-sided Jacobi rotations, k = min(m, n).
Svd svd(const Mat& a, int max_sweeps = 60);

// Paired snapshots: column j of Xp is column j of X advanced by tau.
struct SnapshotPairs {
  Mat X;
  Mat Xp;

  static SnapshotPairs from_dataset(const Dataset& d);
  void validate() const;
};

struct DmdModel {
  int rank = 0;
  Mat U;        // n x r
  Mat A_tilde;  // r x r
  Eigen::VectorXcd eigenvalues;
  Eigen::MatrixXcd modes;  // exact DMD modes, n x r
};

// Throws BaselineError "rank too high for data" when sigma_r / sigma_1 < 1e-12.
DmdModel fit_dmd(const SnapshotPairs& data, int rank);

// U A~^k U^T u.
Vec dmd_predict(const DmdModel& model, const Vec& u, int steps);

enum class PodEvolution {
  Galerkin,   // integrate the projected Burgers equation
  LinearMap,  // least-squares one-step map in POD coordinates
};

struct PodOptions {
  double viscosity = 0.02;
  double tau = 0.25;
  int substeps = 20;  // RK4 steps per tau
  bool advection = true;
  PodEvolution evolution = PodEvolution::Galerkin;

  void validate() const;
};

struct PodModel {
  int rank = 0;
  Mat U;  // n x r
  PodOptions options;
  Mat L;                // r x r, viscosity * U^T D2 U
  std::vector<Mat> Q;   // Q[i](j,k) = -U_i^T (U_j .* D U_k)
  Mat A_map;            // r x r, LinearMap evolution only
};

PodModel fit_pod(const SnapshotPairs& data, int rank, const PodOptions& options = {});

// Reduced right-hand side dc/dt.
Vec pod_rhs(const PodModel& model, const Vec& c);

// Throws BaselineError "reduced model unstable at rank r" on blow-up.
Vec pod_predict(const PodModel& model, const Vec& u, int steps);

// Periodic spectral differentiation matrices on n points of [0,1).
Mat derivative_matrix(std::size_t n);
Mat second_derivative_matrix(std::size_t n);

}  // namespace mvrom::linear
