#include "mvrom/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <sstream>

namespace mvrom::manifold {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kCircleEps = 1e-8;
constexpr double kMaxCondition = 1e12;

ChartEval make_eval(int n, int m) {
  ChartEval e;
  e.point = Vec::Zero(n);
  e.tangent = Mat::Zero(n, m);
  e.hessian.assign(static_cast<std::size_t>(n), Mat::Zero(m, m));
  return e;
}

double half_sq_distance(const Vec& w, const Vec& z) { return 0.5 * (w - z).squaredNorm(); }

template <class A, class B>
double squared_distance(const A& a, const B& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

bool Box::contains(const Vec& u) const {
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (u[i] < lo[i] || u[i] > hi[i]) return false;
  }
  return true;
}

ChartEval UnitCircleMap::evaluate(const Vec& u) const {
  ChartEval e = make_eval(2, 1);
  const double c = std::cos(u[0]), s = std::sin(u[0]);
  e.point << c, s;
  e.tangent << -s, c;
  e.hessian[0](0, 0) = -c;
  e.hessian[1](0, 0) = -s;
  return e;
}

Box UnitCircleMap::domain() const { return {Vec::Constant(1, 0.0), Vec::Constant(1, kTwoPi)}; }

ChartEval FlatTorusMap::evaluate(const Vec& u) const {
  ChartEval e = make_eval(4, 2);
  const double c1 = std::cos(u[0]), s1 = std::sin(u[0]);
  const double c2 = std::cos(u[1]), s2 = std::sin(u[1]);
  e.point << c1, s1, c2, s2;
  e.tangent(0, 0) = -s1;
  e.tangent(1, 0) = c1;
  e.tangent(2, 1) = -s2;
  e.tangent(3, 1) = c2;
  e.hessian[0](0, 0) = -c1;
  e.hessian[1](0, 0) = -s1;
  e.hessian[2](1, 1) = -c2;
  e.hessian[3](1, 1) = -s2;
  return e;
}

Box FlatTorusMap::domain() const { return {Vec::Zero(2), Vec::Constant(2, kTwoPi)}; }

void KleinConfig::validate() const {
  if (!(b > 0.0 && a > b)) throw std::invalid_argument("klein: need a > b > 0");
  if (resolution < 64) throw std::invalid_argument("klein: resolution must be >= 64");
}

KleinMap::KleinMap(double a, double b) : a_(a), b_(b) {
  if (!(b > 0.0 && a > b)) throw std::invalid_argument("klein: need a > b > 0");
}

ChartEval KleinMap::evaluate(const Vec& u) const {
  ChartEval e = make_eval(4, 2);
  const double c1 = std::cos(u[0]), s1 = std::sin(u[0]);
  const double c2 = std::cos(u[1]), s2 = std::sin(u[1]);
  const double ch = std::cos(0.5 * u[0]), sh = std::sin(0.5 * u[0]);
  const double r = a_ + b_ * c2;
  e.point << r * c1, r * s1, b_ * s2 * ch, b_ * s2 * sh;

  e.tangent(0, 0) = -r * s1;
  e.tangent(1, 0) = r * c1;
  e.tangent(2, 0) = -0.5 * b_ * s2 * sh;
  e.tangent(3, 0) = 0.5 * b_ * s2 * ch;
  e.tangent(0, 1) = -b_ * s2 * c1;
  e.tangent(1, 1) = -b_ * s2 * s1;
  e.tangent(2, 1) = b_ * c2 * ch;
  e.tangent(3, 1) = b_ * c2 * sh;

  auto set = [&](int k, double d11, double d12, double d22) {
    e.hessian[static_cast<std::size_t>(k)] << d11, d12, d12, d22;
  };
  set(0, -r * c1, b_ * s2 * s1, -b_ * c2 * c1);
  set(1, -r * s1, -b_ * s2 * c1, -b_ * c2 * s1);
  set(2, -0.25 * b_ * s2 * ch, -0.5 * b_ * c2 * sh, -b_ * s2 * ch);
  set(3, -0.25 * b_ * s2 * sh, 0.5 * b_ * c2 * ch, -b_ * s2 * sh);
  return e;
}

Box KleinMap::domain() const { return {Vec::Zero(2), Vec::Constant(2, kTwoPi)}; }

WindowChart::WindowChart(std::shared_ptr<const ParametricMap> map, Box box) : map_(std::move(map)), box_(std::move(box)) {}

MongeChart::MongeChart(Vec origin, Mat tangent_basis, Mat normal_basis, Mat gradients, std::vector<Mat> curvatures, Box box)
    : origin_(std::move(origin)),
      tangent_(std::move(tangent_basis)),
      normal_(std::move(normal_basis)),
      gradients_(std::move(gradients)),
      curvature_(std::move(curvatures)),
      box_(std::move(box)) {}

MongeChart MongeChart::fit(const Vec& origin, const std::vector<Vec>& neighbors, int m) {
  const auto n = static_cast<int>(origin.size());
  const int codim = n - m;
  const int n_quad = m * (m + 1) / 2;
  if (m < 1 || codim < 1) throw std::invalid_argument("monge fit: need 0 < m < n");
  if (static_cast<int>(neighbors.size()) < m + n_quad) throw std::invalid_argument("monge fit: too few neighbours");

  Mat cov = Mat::Zero(n, n);
  for (const Vec& q : neighbors) cov += (q - origin) * (q - origin).transpose();
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  // Eigenvalues ascend: the largest m span the tangent plane.
  Mat tangent = eig.eigenvectors().rightCols(m);
  Mat normal = eig.eigenvectors().leftCols(codim);

  const auto rows = static_cast<Eigen::Index>(neighbors.size());
  Mat design(rows, m + n_quad);
  Mat heights(rows, codim);
  Vec lo = Vec::Zero(m), hi = Vec::Zero(m);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vec d = neighbors[static_cast<std::size_t>(r)] - origin;
    const Vec u = tangent.transpose() * d;
    lo = lo.cwiseMin(u);
    hi = hi.cwiseMax(u);
    heights.row(r) = (normal.transpose() * d).transpose();
    int c = 0;
    for (int i = 0; i < m; ++i) design(r, c++) = u[i];
    for (int i = 0; i < m; ++i) {
      for (int j = i; j < m; ++j) design(r, c++) = (i == j) ? 0.5 * u[i] * u[i] : u[i] * u[j];
    }
  }
  const Mat coef = design.colPivHouseholderQr().solve(heights);
  Mat gradients(codim, m);
  std::vector<Mat> curv(static_cast<std::size_t>(codim), Mat::Zero(m, m));
  for (int l = 0; l < codim; ++l) {
    int c = 0;
    for (int i = 0; i < m; ++i) gradients(l, i) = coef(c++, l);
    for (int i = 0; i < m; ++i) {
      for (int j = i; j < m; ++j) {
        curv[static_cast<std::size_t>(l)](i, j) = coef(c, l);
        curv[static_cast<std::size_t>(l)](j, i) = coef(c, l);
        ++c;
      }
    }
  }
  const Vec centre = 0.5 * (lo + hi);
  const Vec half = 0.75 * (hi - lo);
  return MongeChart(origin, tangent, normal, gradients, std::move(curv), Box{centre - half, centre + half});
}

ChartEval MongeChart::evaluate(const Vec& u) const {
  const auto n = static_cast<int>(origin_.size());
  const auto m = static_cast<int>(tangent_.cols());
  ChartEval e = make_eval(n, m);
  const auto codim = static_cast<int>(normal_.cols());
  Vec h(codim);
  Mat dh(codim, m);
  for (int l = 0; l < codim; ++l) {
    const Mat& q = curvature_[static_cast<std::size_t>(l)];
    h[l] = gradients_.row(l).dot(u) + 0.5 * u.dot(q * u);
    dh.row(l) = gradients_.row(l) + (q * u).transpose();
  }
  e.point = origin_ + tangent_ * u + normal_ * h;
  e.tangent = tangent_ + normal_ * dh;
  for (int k = 0; k < n; ++k) {
    Mat hk = Mat::Zero(m, m);
    for (int l = 0; l < codim; ++l) hk += normal_(k, l) * curvature_[static_cast<std::size_t>(l)];
    e.hessian[static_cast<std::size_t>(k)] = hk;
  }
  return e;
}

const char* quality_name(Quality q) {
  switch (q) {
    case Quality::Ok: return "ok";
    case Quality::NotConverged: return "not-converged";
    case Quality::Singular: return "singular";
  }
  return "?";
}

Mat optimality_hessian(const ChartEval& eval, const Vec& w) {
  const Vec r = w - eval.point;
  Mat h = eval.tangent.transpose() * eval.tangent;
  for (Eigen::Index k = 0; k < r.size(); ++k) h -= r[k] * eval.hessian[static_cast<std::size_t>(k)];
  return h;
}

Mat lambda_jacobian(const ChartEval& eval, const Vec& w) {
  const Mat h = optimality_hessian(eval, w);
  Eigen::JacobiSVD<Mat> svd(h);
  const auto& s = svd.singularValues();
  const double cond = s[s.size() - 1] > 0.0 ? s[0] / s[s.size() - 1] : std::numeric_limits<double>::infinity();
  if (!(cond <= kMaxCondition)) throw ProjectionError("projection Jacobian singular (medial axis)");
  // grad_w G = -J^T, so du/dw = H^{-1} J^T.
  const Mat du_dw = h.partialPivLu().solve(eval.tangent.transpose());
  return eval.tangent * du_dw;
}

Mat lambda_jacobian_pinv(const ChartEval& eval, const Vec& w) {
  const Mat h = optimality_hessian(eval, w);
  const Mat pinv = h.completeOrthogonalDecomposition().pseudoInverse();
  return eval.tangent * pinv * eval.tangent.transpose();
}

Mat tangent_projector(const ChartEval& eval) {
  const Mat& t = eval.tangent;
  return t * (t.transpose() * t).ldlt().solve(t.transpose());
}

TorusProjection project_torus(const Vec& w) {
  if (w.size() != 4) throw std::invalid_argument("project_torus: expected a point in R^4");
  TorusProjection out{Vec(4), Mat::Zero(4, 4)};
  for (int p = 0; p < 2; ++p) {
    const Eigen::Vector2d pair = w.segment<2>(2 * p);
    const double norm = pair.norm();
    if (!(norm >= kCircleEps)) throw ProjectionError("projection undefined at circle center");
    const Eigen::Vector2d zhat = pair / norm;
    out.z.segment<2>(2 * p) = zhat;
    out.jacobian.block<2, 2>(2 * p, 2 * p) = (Eigen::Matrix2d::Identity() - zhat * zhat.transpose()) / norm;
  }
  return out;
}

ProjectionResult AnalyticTorus::project(const Vec& w) const {
  ProjectionResult r;
  try {
    auto t = project_torus(w);
    r.z = std::move(t.z);
    r.jacobian = std::move(t.jacobian);
  } catch (const ProjectionError&) {
    // Degenerate pair: pick the u = 0 point of that circle and pass no gradient.
    r.quality = Quality::Singular;
    r.z = Vec(4);
    r.jacobian = Mat::Zero(4, 4);
    for (int p = 0; p < 2; ++p) {
      const Eigen::Vector2d pair = w.segment<2>(2 * p);
      r.z.segment<2>(2 * p) = pair.norm() >= kCircleEps ? Eigen::Vector2d(pair / pair.norm()) : Eigen::Vector2d(1.0, 0.0);
    }
  }
  r.u = Vec(2);
  r.u << std::atan2(r.z[1], r.z[0]), std::atan2(r.z[3], r.z[2]);
  r.distance = (w - r.z).norm();
  return r;
}

// ---------------------------------------------------------------------------
// kd-tree

KdTree::KdTree(const std::vector<Vec>& points) {
  if (!points.empty()) {
    points_.resize(points.front().size(), static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) points_.col(static_cast<Eigen::Index>(i)) = points[i];
  }
  order_.resize(points.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!order_.empty()) build(0, order_.size());
}

int KdTree::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= 8) return id;
  const auto col = [&](std::size_t i) { return points_.col(static_cast<Eigen::Index>(i)); };
  const auto dim = points_.rows();
  int axis = 0;
  double best = -1.0;
  for (Eigen::Index d = 0; d < dim; ++d) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = std::min(lo, col(order_[i])[d]);
      hi = std::max(hi, col(order_[i])[d]);
    }
    if (hi - lo > best) {
      best = hi - lo;
      axis = static_cast<int>(d);
    }
  }
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return col(a)[axis] < col(b)[axis]; });
  const double split = col(order_[mid])[axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].axis = axis;
  nodes_[static_cast<std::size_t>(id)].split = split;
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

std::vector<std::size_t> KdTree::nearest(const Vec& q, std::size_t k) const {
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry> heap;  // worst candidate on top
  if (nodes_.empty() || k == 0) return {};
  auto offer = [&](std::size_t idx) {
    const Entry e{squared_distance(q, points_.col(static_cast<Eigen::Index>(idx))), idx};
    if (heap.size() < k) {
      heap.push(e);
    } else if (e < heap.top()) {
      heap.pop();
      heap.push(e);
    }
  };
  auto search = [&](auto&& self, int id) -> void {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) offer(order_[i]);
      return;
    }
    const double diff = q[node.axis] - node.split;
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    self(self, near);
    if (heap.size() < k || diff * diff <= heap.top().first) self(self, far);
  };
  search(search, 0);

  std::vector<std::size_t> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top().second;
    heap.pop();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Point-cloud manifolds

PointCloudManifold PointCloudManifold::from_map(std::shared_ptr<const ParametricMap> map, int resolution, int window) {
  if (resolution < 4) throw std::invalid_argument("point cloud: resolution too small");
  if (window < 1) throw std::invalid_argument("point cloud: window must be positive");
  PointCloudManifold pc;
  pc.m_ = map->intrinsic_dim();
  pc.n_ = map->embed_dim();
  pc.kind_ = map->kind();
  pc.map_ = map;
  pc.resolution_ = resolution;
  pc.window_ = window;
  if (pc.m_ > 2) throw std::invalid_argument("point cloud: grid sampling supports m <= 2");

  const Box dom = map->domain();
  const Vec step = (dom.hi - dom.lo) / resolution;
  const int windows = (resolution + window - 1) / window;
  const int chart_count = pc.m_ == 1 ? windows : windows * windows;
  for (int c = 0; c < chart_count; ++c) {
    const int ci = c % windows, cj = c / windows;
    Vec lo(pc.m_), hi(pc.m_);
    for (int d = 0; d < pc.m_; ++d) {
      const int cell = d == 0 ? ci : cj;
      lo[d] = dom.lo[d] + (cell * window - 0.5 * window) * step[d];
      hi[d] = dom.lo[d] + ((cell + 1) * window + 0.5 * window) * step[d];
    }
    pc.charts_.push_back(std::make_unique<WindowChart>(map, Box{lo, hi}));
  }

  const int rows = pc.m_ == 1 ? 1 : resolution;
  for (int j = 0; j < rows; ++j) {
    for (int i = 0; i < resolution; ++i) {
      Vec u(pc.m_);
      u[0] = dom.lo[0] + i * step[0];
      if (pc.m_ == 2) u[1] = dom.lo[1] + j * step[1];
      pc.points_.push_back(map->evaluate(u).point);
      pc.point_u_.push_back(u);
      pc.point_chart_.push_back(pc.m_ == 1 ? i / window : (i / window) + windows * (j / window));
    }
  }
  pc.build_index();
  return pc;
}

PointCloudManifold PointCloudManifold::from_points(std::vector<Vec> points, int intrinsic_dim, int neighbors) {
  if (points.empty()) throw std::invalid_argument("point cloud: no points");
  PointCloudManifold pc;
  pc.m_ = intrinsic_dim;
  pc.n_ = static_cast<int>(points.front().size());
  pc.kind_ = "monge";
  pc.neighbors_ = neighbors;
  for (const Vec& p : points) {
    if (p.size() != pc.n_ || !p.allFinite()) throw std::invalid_argument("point cloud: inconsistent or non-finite point");
  }
  pc.points_ = std::move(points);
  pc.build_index();
  for (std::size_t i = 0; i < pc.points_.size(); ++i) {
    std::vector<Vec> nb;
    for (std::size_t j : pc.index_->nearest(pc.points_[i], static_cast<std::size_t>(neighbors))) nb.push_back(pc.points_[j]);
    pc.charts_.push_back(std::make_unique<MongeChart>(MongeChart::fit(pc.points_[i], nb, pc.m_)));
    pc.point_chart_.push_back(static_cast<int>(i));
    pc.point_u_.push_back(Vec::Zero(pc.m_));
  }
  return pc;
}

void PointCloudManifold::build_index() { index_ = std::make_unique<KdTree>(points_); }

std::size_t PointCloudManifold::coarse_nearest(const Vec& w) const { return index_->nearest(w, 1).front(); }

std::size_t PointCloudManifold::brute_force_nearest(const Vec& w) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const double d = squared_distance(w, points_[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

ProjectionResult PointCloudManifold::finish(const Vec& w, const ChartEval& eval, int chart, Vec u, int iterations) const {
  ProjectionResult r;
  r.z = eval.point;
  r.chart = chart;
  r.u = std::move(u);
  r.iterations = iterations;
  r.distance = (w - eval.point).norm();
  try {
    r.jacobian = lambda_jacobian(eval, w);
  } catch (const ProjectionError&) {
    r.jacobian = lambda_jacobian_pinv(eval, w);
    r.quality = Quality::Singular;
  }
  return r;
}

ProjectionResult PointCloudManifold::refine_in_chart(const Vec& w, int chart_id, Vec u) const {
  const Chart& ch = chart(chart_id);
  ChartEval eval = ch.evaluate(u);
  double phi = half_sq_distance(w, eval.point);
  int it = 0;
  bool converged = false;
  for (;; ++it) {
    const Vec r = w - eval.point;
    const Vec grad = -eval.tangent.transpose() * r;
    if (grad.norm() < newton_.gradient_tol) {
      converged = true;
      break;
    }
    if (it >= newton_.max_iterations) break;
    // Full Newton when grad_u G is positive definite, Gauss-Newton otherwise.
    const Mat jtj = eval.tangent.transpose() * eval.tangent;
    Eigen::LLT<Mat> full(optimality_hessian(eval, w));
    Vec step = full.info() == Eigen::Success ? Vec(full.solve(-grad)) : Vec(jtj.ldlt().solve(-grad));
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
      const Vec trial = u + alpha * step;
      ChartEval te = ch.evaluate(trial);
      const double tphi = half_sq_distance(w, te.point);
      // Close to the minimum the decrease drops below the rounding of phi;
      // there a step is judged by the gradient instead.
      const bool flat = tphi <= phi * (1.0 + 1e-13) &&
                        (te.tangent.transpose() * (w - te.point)).norm() < 0.5 * grad.norm();
      if (flat || tphi <= phi + 1e-4 * alpha * grad.dot(step)) {
        u = trial;
        eval = std::move(te);
        phi = tphi;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    if (!ch.extends_beyond_domain() && !ch.domain().contains(u)) break;
  }
  ProjectionResult res = finish(w, eval, chart_id, u, it);
  if (!converged) res.quality = Quality::NotConverged;
  return res;
}

ProjectionResult PointCloudManifold::nearest_point(const Vec& w) const {
  if (w.size() != n_) throw std::invalid_argument("nearest_point: dimension mismatch");
  if (!w.allFinite()) throw ProjectionError("nearest_point: non-finite input");

  const auto near = index_->nearest(w, std::max<std::size_t>(1, newton_.candidates));
  std::optional<ProjectionResult> best;
  auto better = [](const ProjectionResult& a, const ProjectionResult& b) {
    const bool a_ok = a.quality != Quality::NotConverged, b_ok = b.quality != Quality::NotConverged;
    if (a_ok != b_ok) return a_ok;
    const double pa = 0.5 * a.distance * a.distance, pb = 0.5 * b.distance * b.distance;
    if (std::abs(pa - pb) > 1e-12 * std::max(1.0, std::max(pa, pb))) return pa < pb;
    return a.chart < b.chart;
  };
  std::vector<int> tried;
  for (std::size_t idx : near) {
    int k = point_chart_[idx];
    if (std::find(tried.begin(), tried.end(), k) != tried.end()) continue;
    tried.push_back(k);
    ProjectionResult res = refine_in_chart(w, k, point_u_[idx]);
    // A bounded chart that the solve walked out of hands over to the chart
    // of the cloud point nearest the current estimate.
    for (int hop = 0; hop < 3 && !chart(res.chart).extends_beyond_domain() && !chart(res.chart).domain().contains(res.u);
         ++hop) {
      const std::size_t j = coarse_nearest(res.z);
      if (point_chart_[j] == res.chart) break;
      Vec u0 = point_u_[j];
      if (const auto* mc = dynamic_cast<const MongeChart*>(&chart(point_chart_[j]))) u0 = mc->local_coordinates(res.z);
      res = refine_in_chart(w, point_chart_[j], u0);
    }
    if (!best || better(res, *best)) best = std::move(res);
  }

  if (best->quality == Quality::NotConverged) {
    const std::size_t i = near.front();
    ChartEval eval = chart(point_chart_[i]).evaluate(point_u_[i]);
    ProjectionResult r;
    r.z = points_[i];
    r.chart = point_chart_[i];
    r.u = point_u_[i];
    r.distance = (w - r.z).norm();
    r.jacobian = lambda_jacobian_pinv(eval, w);
    r.quality = Quality::NotConverged;
    return r;
  }
  return *best;
}

void PointCloudManifold::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("point cloud: cannot open " + path.string());
  os << "# mvrom point cloud\n" << m_ << ' ' << n_ << ' ' << points_.size() << ' ' << kind_;
  if (map_) {
    os << ' ' << resolution_ << ' ' << window_;
    for (double a : map_->arguments()) os << ' ' << std::setprecision(17) << a;
  } else {
    os << ' ' << neighbors_;
  }
  os << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    for (int d = 0; d < n_; ++d) os << (d ? " " : "") << points_[i][d];
    if (map_) {
      for (int d = 0; d < m_; ++d) os << ' ' << point_u_[i][d];
    }
    os << '\n';
  }
}

PointCloudManifold PointCloudManifold::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("point cloud: cannot open " + path.string());
  std::string line;
  do {
    if (!std::getline(is, line)) throw std::runtime_error("point cloud: missing header");
  } while (line.empty() || line[0] == '#');
  std::istringstream head(line);
  int m = 0, n = 0;
  std::size_t count = 0;
  std::string kind;
  if (!(head >> m >> n >> count >> kind)) throw std::runtime_error("point cloud: malformed header");

  std::vector<Vec> rows;
  std::vector<Vec> params;
  const bool parametric = kind != "monge";
  while (rows.size() < count && std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream rs(line);
    Vec p(n), u(parametric ? m : 0);
    for (int d = 0; d < n; ++d) rs >> p[d];
    for (int d = 0; d < u.size(); ++d) rs >> u[d];
    if (!rs) throw std::runtime_error("point cloud: malformed row " + std::to_string(rows.size()));
    rows.push_back(p);
    params.push_back(u);
  }
  if (rows.size() != count) throw std::runtime_error("point cloud: expected " + std::to_string(count) + " rows");

  if (!parametric) {
    int neighbors = 24;
    head >> neighbors;
    return from_points(std::move(rows), m, neighbors);
  }

  int resolution = 0, window = 16;
  if (!(head >> resolution >> window)) throw std::runtime_error("point cloud: parametric header needs resolution and window");
  std::shared_ptr<const ParametricMap> map;
  if (kind == "circle") {
    map = std::make_shared<UnitCircleMap>();
  } else if (kind == "torus") {
    map = std::make_shared<FlatTorusMap>();
  } else if (kind == "klein") {
    double a = 0, b = 0;
    if (!(head >> a >> b)) throw std::runtime_error("point cloud: klein header needs a and b");
    map = std::make_shared<KleinMap>(a, b);
  } else {
    throw std::runtime_error("point cloud: unknown chart kind '" + kind + "'");
  }
  if (map->intrinsic_dim() != m || map->embed_dim() != n) throw std::runtime_error("point cloud: header dimensions do not match kind");

  // Charts are the map's windows; each row joins the window containing its parameters.
  PointCloudManifold pc = from_map(map, resolution, window);
  const Box dom = map->domain();
  const Vec step = (dom.hi - dom.lo) / resolution;
  const int windows = (resolution + window - 1) / window;
  pc.points_ = std::move(rows);
  pc.point_u_ = std::move(params);
  pc.point_chart_.clear();
  for (const Vec& u : pc.point_u_) {
    int c = 0;
    for (int d = m - 1; d >= 0; --d) {
      const int cell = std::clamp(static_cast<int>(std::floor((u[d] - dom.lo[d]) / step[d])), 0, resolution - 1);
      c = c * windows + cell / window;
    }
    pc.point_chart_.push_back(c);
  }
  pc.build_index();
  return pc;
}

PointCloudManifold build_klein_pointcloud(const KleinConfig& config, int window) {
  config.validate();
  return PointCloudManifold::from_map(std::make_shared<KleinMap>(config.a, config.b), config.resolution, window);
}

ad::Var manifold_encode_layer(ad::Var w, const LatentManifold& manifold, FlagPolicy policy, EncodeLayerStats* stats) {
  const Tensor& wv = w.value();
  const auto n = static_cast<std::size_t>(manifold.embed_dim());
  if (wv.rank() != 2 || wv.cols() != n) throw ad::ShapeError("manifold_encode_layer", {wv.shape(), Shape{0, n}});
  const std::size_t rows = wv.rows();
  Tensor out(Shape{rows, n});
  std::vector<Tensor> jacobians;
  jacobians.reserve(rows);
  std::size_t flagged = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    Vec x(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) x[static_cast<Eigen::Index>(j)] = wv.at(r, j);
    ProjectionResult p = manifold.project(x);
    Tensor jac(Shape{n, n});
    if (p.flagged()) {
      ++flagged;
      if (policy == FlagPolicy::Fail) {
        throw ProjectionError("manifold_encode_layer: sample " + std::to_string(r) + " flagged (" + quality_name(p.quality) + ")");
      }
    } else {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) jac.at(i, j) = p.jacobian(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) = p.z[static_cast<Eigen::Index>(j)];
    jacobians.push_back(std::move(jac));
  }
  if (stats) stats->flagged = flagged;
  return ad::block_jacobian_node(w, std::move(out), std::move(jacobians));
}

}  // namespace mvrom::manifold
