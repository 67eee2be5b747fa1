#pragma once

// Latent manifolds and the nearest-point projection z = Lambda(w).
//
// A manifold is either the analytic product of two unit circles, or a dense
// point cloud carrying local charts sigma^k(u) with first and second
// derivatives. The projection solves
//
//   u*, k* = argmin_{k, u} 1/2 |w - sigma^k(u)|^2
//
// and its derivative follows from differentiating the optimality condition
// G(u, w) = -J^T (w - sigma(u)) = 0 implicitly:
//
//   dLambda/dw = J [grad_u G]^{-1} J^T,
//   [grad_u G]_ij = sum_k d_j sigma_k d_i sigma_k - sum_k (w_k - sigma_k) d_ij sigma_k.

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mvrom/autodiff.hpp"

namespace mvrom::manifold {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class ProjectionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// sigma(u), its n x m Jacobian, and one m x m Hessian per ambient coordinate.
struct ChartEval {
  Vec point;
  Mat tangent;
  std::vector<Mat> hessian;
};

struct Box {
  Vec lo;
  Vec hi;
  bool contains(const Vec& u) const;
};

// Global smooth parameterization u -> R^n, sampled on a box.
class ParametricMap {
 public:
  virtual ~ParametricMap() = default;
  virtual int intrinsic_dim() const = 0;
  virtual int embed_dim() const = 0;
  virtual ChartEval evaluate(const Vec& u) const = 0;
  // Parameter box covering the manifold exactly once.
  virtual Box domain() const = 0;
  virtual std::string kind() const = 0;
  // Extra header arguments for the point-cloud file format.
  virtual std::vector<double> arguments() const { return {}; }
};

class UnitCircleMap final : public ParametricMap {
 public:
  int intrinsic_dim() const override { return 1; }
  int embed_dim() const override { return 2; }
  ChartEval evaluate(const Vec& u) const override;
  Box domain() const override;
  std::string kind() const override { return "circle"; }
};

// (cos u1, sin u1, cos u2, sin u2): the unit product of circles in R^4.
class FlatTorusMap final : public ParametricMap {
 public:
  int intrinsic_dim() const override { return 2; }
  int embed_dim() const override { return 4; }
  ChartEval evaluate(const Vec& u) const override;
  Box domain() const override;
  std::string kind() const override { return "torus"; }
};

struct KleinConfig {
  double a = 2.0;
  double b = 1.0;
  int resolution = 256;

  void validate() const;
};

// z1 = (a + b cos u2) cos u1    z2 = (a + b cos u2) sin u1
// z3 = b sin u2 cos(u1/2)       z4 = b sin u2 sin(u1/2)
class KleinMap final : public ParametricMap {
 public:
  KleinMap(double a, double b);
  int intrinsic_dim() const override { return 2; }
  int embed_dim() const override { return 4; }
  ChartEval evaluate(const Vec& u) const override;
  Box domain() const override;
  std::string kind() const override { return "klein"; }
  std::vector<double> arguments() const override { return {a_, b_}; }
  double a() const { return a_; }
  double b() const { return b_; }

 private:
  double a_, b_;
};

class Chart {
 public:
  virtual ~Chart() = default;
  virtual ChartEval evaluate(const Vec& u) const = 0;
  // Parameter region where the chart is trusted.
  virtual const Box& domain() const = 0;
  // Whether the chart is valid outside its box (analytic windows are).
  virtual bool extends_beyond_domain() const = 0;
};

// Window of a global analytic parameterization.
class WindowChart final : public Chart {
 public:
  WindowChart(std::shared_ptr<const ParametricMap> map, Box box);
  ChartEval evaluate(const Vec& u) const override { return map_->evaluate(u); }
  const Box& domain() const override { return box_; }
  bool extends_beyond_domain() const override { return true; }

 private:
  std::shared_ptr<const ParametricMap> map_;
  Box box_;
};

// Monge-gauge quadratic height function over the tangent plane at `origin`:
//   sigma(u) = origin + T u + sum_l N_l (g_l . u + 1/2 u^T Q_l u).
class MongeChart final : public Chart {
 public:
  MongeChart(Vec origin, Mat tangent_basis, Mat normal_basis, Mat gradients, std::vector<Mat> curvatures, Box box);
  // Least-squares fit through `origin` to its neighbours (rows of `neighbors`
  // are ambient points). The fit passes through the origin exactly.
  static MongeChart fit(const Vec& origin, const std::vector<Vec>& neighbors, int intrinsic_dim);

  ChartEval evaluate(const Vec& u) const override;
  const Box& domain() const override { return box_; }
  bool extends_beyond_domain() const override { return false; }
  // Local coordinates of an ambient point (tangent-plane projection).
  Vec local_coordinates(const Vec& z) const { return tangent_.transpose() * (z - origin_); }

 private:
  Vec origin_;
  Mat tangent_;
  Mat normal_;
  Mat gradients_;              // (n-m) x m
  std::vector<Mat> curvature_;  // (n-m) of m x m
  Box box_;
};

enum class Quality {
  Ok,
  NotConverged,  // Newton failed; result is the best coarse point
  Singular,      // grad_u G ill-conditioned; Jacobian from the pseudo-inverse
};

const char* quality_name(Quality q);

struct ProjectionResult {
  Vec z;
  int chart = -1;
  Vec u;
  Mat jacobian;
  Quality quality = Quality::Ok;
  double distance = 0.0;
  int iterations = 0;

  bool flagged() const { return quality != Quality::Ok; }
};

// grad_u G at u for input w.
Mat optimality_hessian(const ChartEval& eval, const Vec& w);

// dLambda/dw from the implicit function theorem. Throws ProjectionError
// "projection Jacobian singular (medial axis)" when cond(grad_u G) > 1e12.
Mat lambda_jacobian(const ChartEval& eval, const Vec& w);
// Same formula with a pseudo-inverse; never throws.
Mat lambda_jacobian_pinv(const ChartEval& eval, const Vec& w);

// Orthogonal projector onto the tangent space spanned by eval.tangent.
Mat tangent_projector(const ChartEval& eval);

class LatentManifold {
 public:
  virtual ~LatentManifold() = default;
  virtual int intrinsic_dim() const = 0;
  virtual int embed_dim() const = 0;
  virtual ProjectionResult project(const Vec& w) const = 0;
  virtual std::string kind() const = 0;
};

// Component-wise circle normalisation. Throws ProjectionError "projection
// undefined at circle center" when a pair norm is below 1e-8.
struct TorusProjection {
  Vec z;
  Mat jacobian;
};
TorusProjection project_torus(const Vec& w);

class AnalyticTorus final : public LatentManifold {
 public:
  int intrinsic_dim() const override { return 2; }
  int embed_dim() const override { return 4; }
  ProjectionResult project(const Vec& w) const override;
  std::string kind() const override { return "torus"; }
};

// Static kd-tree over a fixed point set.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(const std::vector<Vec>& points);
  // Indices of the k nearest points, nearest first; equal distances resolve
  // to the lower index.
  std::vector<std::size_t> nearest(const Vec& q, std::size_t k) const;

 private:
  struct Node {
    std::size_t begin, end;
    int axis = -1;
    double split = 0;
    int left = -1, right = -1;
  };
  int build(std::size_t begin, std::size_t end);
  Mat points_;  // one column per point
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

struct NewtonOptions {
  double gradient_tol = 1e-10;
  int max_iterations = 50;
  // Nearest cloud points whose charts are tried.
  std::size_t candidates = 4;
};

class PointCloudManifold final : public LatentManifold {
 public:
  // Cloud sampled on a resolution^m grid of the map's domain; charts are
  // windows of window x ... x window grid cells.
  static PointCloudManifold from_map(std::shared_ptr<const ParametricMap> map, int resolution, int window = 16);
  // Cloud from raw points with one Monge-gauge chart per point fitted to its
  // `neighbors` nearest neighbours.
  static PointCloudManifold from_points(std::vector<Vec> points, int intrinsic_dim, int neighbors = 24);

  int intrinsic_dim() const override { return m_; }
  int embed_dim() const override { return n_; }
  std::string kind() const override { return kind_; }
  std::size_t size() const { return points_.size(); }
  const std::vector<Vec>& points() const { return points_; }
  const Vec& point(std::size_t i) const { return points_[i]; }
  int point_chart(std::size_t i) const { return point_chart_[i]; }
  const Vec& point_coordinates(std::size_t i) const { return point_u_[i]; }
  const Chart& chart(int k) const { return *charts_.at(static_cast<std::size_t>(k)); }
  std::size_t chart_count() const { return charts_.size(); }
  const ParametricMap* parametric_map() const { return map_.get(); }

  // Coarse phase: nearest cloud point (kd-tree) and the exhaustive oracle.
  std::size_t coarse_nearest(const Vec& w) const;
  std::size_t brute_force_nearest(const Vec& w) const;

  ProjectionResult nearest_point(const Vec& w) const;
  ProjectionResult project(const Vec& w) const override { return nearest_point(w); }

  // Newton refinement in one chart from a starting parameter. Returns
  // Quality::NotConverged when the gradient tolerance is not met.
  ProjectionResult refine_in_chart(const Vec& w, int chart, Vec u0) const;

  void set_newton_options(const NewtonOptions& o) { newton_ = o; }

  // Plain-text format: header "m n count kind [args...]" then one row per
  // point with its coordinates followed by its chart parameters.
  void save(const std::filesystem::path& path) const;
  static PointCloudManifold load(const std::filesystem::path& path);

 private:
  PointCloudManifold() = default;
  void build_index();
  ProjectionResult finish(const Vec& w, const ChartEval& eval, int chart, Vec u, int iterations) const;

  int m_ = 0;
  int n_ = 0;
  std::string kind_;
  std::shared_ptr<const ParametricMap> map_;
  int resolution_ = 0;
  int window_ = 0;
  int neighbors_ = 0;
  std::vector<Vec> points_;
  std::vector<int> point_chart_;
  std::vector<Vec> point_u_;
  std::vector<std::unique_ptr<Chart>> charts_;
  std::unique_ptr<KdTree> index_;
  NewtonOptions newton_;
};

PointCloudManifold build_klein_pointcloud(const KleinConfig& config, int window = 16);

enum class FlagPolicy {
  Fail,  // throw on any flagged sample
  Skip,  // keep the flagged projection but pass no gradient through it
};

struct EncodeLayerStats {
  std::size_t flagged = 0;
};

// Batch projection (rows of w) recorded on the tape with per-row IFT
// Jacobians.
ad::Var manifold_encode_layer(ad::Var w, const LatentManifold& manifold, FlagPolicy policy,
                              EncodeLayerStats* stats = nullptr);

}  // namespace mvrom::manifold
