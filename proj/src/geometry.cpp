#include "spm/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "spm/errors.hpp"

namespace spm {

namespace {

constexpr int kArcSamples = 32;
constexpr int kProjectionSamples = 16;
constexpr double kDomainTolerance = 1e-9;

// 8-point Gauss-Legendre rule on [-1, 1].
constexpr std::array<double, 8> kGaussNodes = {
    -0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
    0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
constexpr std::array<double, 8> kGaussWeights = {
    0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
    0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};

Eigen::Vector2d de_casteljau(const BezierSegment& ctrl, double t) {
  const Eigen::Index n = ctrl.rows();
  if (n == 0) return Eigen::Vector2d::Zero();
  std::array<Eigen::Vector2d, 16> work;
  for (Eigen::Index i = 0; i < n; ++i) work[i] = ctrl.row(i).transpose();
  for (Eigen::Index level = n - 1; level > 0; --level) {
    for (Eigen::Index i = 0; i < level; ++i) {
      work[i] = (1.0 - t) * work[i] + t * work[i + 1];
    }
  }
  return work[0];
}

BezierSegment hodograph(const BezierSegment& ctrl) {
  const Eigen::Index n = ctrl.rows() - 1;
  if (n <= 0) return BezierSegment::Zero(1, 2);
  BezierSegment out(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = static_cast<double>(n) * (ctrl.row(i + 1) - ctrl.row(i));
  }
  return out;
}

double cross(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return a.x() * b.y() - a.y() * b.x();
}

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

double bernstein(int n, int k, double t) {
  return binomial(n, k) * std::pow(t, k) * std::pow(1.0 - t, n - k);
}

}  // namespace

PathSpline::PathSpline(std::vector<BezierSegment> segments, bool closed, FitReport report)
    : closed_(closed), report_(report), segments_(std::move(segments)) {
  if (segments_.empty()) throw ArgumentError("PathSpline needs at least one segment");
  const Eigen::Index rows = segments_.front().rows();
  if (rows < 2 || rows > 16) {
    throw ArgumentError("Bezier degree must be in [1, 15]");
  }
  degree_ = static_cast<int>(rows) - 1;
  for (const auto& seg : segments_) {
    if (seg.rows() != rows) throw ArgumentError("segments must share one degree");
    if (!seg.allFinite()) throw ArgumentError("non-finite control point");
  }

  first_hodograph_.reserve(segments_.size());
  second_hodograph_.reserve(segments_.size());
  bounds_.reserve(segments_.size());
  for (const auto& seg : segments_) {
    first_hodograph_.push_back(hodograph(seg));
    second_hodograph_.push_back(hodograph(first_hodograph_.back()));
    bounds_.emplace_back(seg.colwise().minCoeff().transpose(),
                         seg.colwise().maxCoeff().transpose());
  }

  knot_s_.assign(1, 0.0);
  arc_table_.resize(segments_.size());
  for (std::size_t j = 0; j < segments_.size(); ++j) {
    auto& table = arc_table_[j];
    table.assign(kArcSamples + 1, 0.0);
    for (int k = 0; k < kArcSamples; ++k) {
      const double a = static_cast<double>(k) / kArcSamples;
      const double b = static_cast<double>(k + 1) / kArcSamples;
      double acc = 0.0;
      for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
        const double t = 0.5 * (a + b) + 0.5 * (b - a) * kGaussNodes[q];
        acc += kGaussWeights[q] * segment_derivative(j, t).norm();
      }
      table[k + 1] = table[k] + 0.5 * (b - a) * acc;
    }
    if (!(table.back() > 0.0)) {
      throw ArgumentError("degenerate segment with zero length");
    }
    for (int k = 0; k < kArcSamples; ++k) {
      if (!(table[k + 1] > table[k])) {
        throw ArgumentError("arc-length table is not strictly increasing");
      }
    }
    knot_s_.push_back(knot_s_.back() + table.back());
  }
  report_.max_continuity_residual = continuity_residual();
}

double PathSpline::wrap(double s) const {
  const double len = length();
  if (closed_) {
    double w = s - len * std::floor(s / len);
    if (w >= len) w -= len;
    return w < 0.0 ? 0.0 : w;
  }
  if (!std::isfinite(s) || s < -kDomainTolerance || s > len + kDomainTolerance) {
    throw DomainError("arc length " + std::to_string(s) + " outside [0, " + std::to_string(len) +
                      "]");
  }
  return std::clamp(s, 0.0, len);
}

double PathSpline::signed_distance(double s, double s_ref) const {
  const double d = s - s_ref;
  return closed_ ? std::remainder(d, length()) : d;
}

std::size_t PathSpline::locate(double u, double* t) const {
  const double m = static_cast<double>(segments_.size());
  if (closed_) {
    u -= m * std::floor(u / m);
    if (u >= m) u -= m;
  } else {
    u = std::clamp(u, 0.0, m);
  }
  auto j = static_cast<std::size_t>(std::floor(u));
  if (j >= segments_.size()) j = segments_.size() - 1;
  *t = std::clamp(u - static_cast<double>(j), 0.0, 1.0);
  return j;
}

Eigen::Vector2d PathSpline::position(double u) const {
  double t = 0.0;
  const std::size_t j = locate(u, &t);
  return segment_position(j, t);
}

Eigen::Vector2d PathSpline::derivative(double u) const {
  double t = 0.0;
  const std::size_t j = locate(u, &t);
  return segment_derivative(j, t);
}

Eigen::Vector2d PathSpline::second_derivative(double u) const {
  double t = 0.0;
  const std::size_t j = locate(u, &t);
  return segment_second_derivative(j, t);
}

Eigen::Vector2d PathSpline::segment_position(std::size_t j, double t) const {
  return de_casteljau(segments_[j], t);
}

Eigen::Vector2d PathSpline::segment_derivative(std::size_t j, double t) const {
  return de_casteljau(first_hodograph_[j], t);
}

Eigen::Vector2d PathSpline::segment_second_derivative(std::size_t j, double t) const {
  if (degree_ < 2) return Eigen::Vector2d::Zero();
  return de_casteljau(second_hodograph_[j], t);
}

std::pair<Eigen::Vector2d, Eigen::Vector2d> PathSpline::segment_bounds(std::size_t j) const {
  return bounds_[j];
}

double PathSpline::segment_arc_length(std::size_t j, double t) const {
  t = std::clamp(t, 0.0, 1.0);
  const auto& table = arc_table_[j];
  int k = static_cast<int>(std::floor(t * kArcSamples));
  k = std::clamp(k, 0, kArcSamples - 1);
  const double a = static_cast<double>(k) / kArcSamples;
  if (t <= a) return table[k];
  double acc = 0.0;
  for (std::size_t q = 0; q < kGaussNodes.size(); ++q) {
    const double x = 0.5 * (a + t) + 0.5 * (t - a) * kGaussNodes[q];
    acc += kGaussWeights[q] * segment_derivative(j, x).norm();
  }
  return table[k] + 0.5 * (t - a) * acc;
}

double PathSpline::arc_length_at(double u) const {
  double t = 0.0;
  const std::size_t j = locate(u, &t);
  return knot_s_[j] + segment_arc_length(j, t);
}

double PathSpline::parameter_at(double s) const {
  s = wrap(s);
  auto it = std::upper_bound(knot_s_.begin(), knot_s_.end(), s);
  std::size_t j = it == knot_s_.begin() ? 0 : static_cast<std::size_t>(it - knot_s_.begin()) - 1;
  if (j >= segments_.size()) j = segments_.size() - 1;
  const double local = s - knot_s_[j];
  const auto& table = arc_table_[j];
  if (local >= table.back()) return static_cast<double>(j + 1);

  auto kt = std::upper_bound(table.begin(), table.end(), local);
  int k = static_cast<int>(kt - table.begin()) - 1;
  k = std::clamp(k, 0, kArcSamples - 1);
  double lo = static_cast<double>(k) / kArcSamples;
  double hi = static_cast<double>(k + 1) / kArcSamples;
  double t = lo + (hi - lo) * (local - table[k]) / (table[k + 1] - table[k]);

  // Safeguarded Newton on S(t) - local; S is strictly increasing.
  for (int iter = 0; iter < 50; ++iter) {
    const double f = segment_arc_length(j, t) - local;
    if (f > 0.0)
      hi = t;
    else
      lo = t;
    const double speed = segment_derivative(j, t).norm();
    double next = speed > 0.0 ? t - f / speed : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) < 1e-15) {
      t = next;
      break;
    }
    t = next;
  }
  return static_cast<double>(j) + t;
}

double PathSpline::continuity_residual() const {
  const std::size_t m = segments_.size();
  const std::size_t joins = closed_ ? m : m - 1;
  double worst = 0.0;
  for (std::size_t j = 0; j < joins; ++j) {
    const std::size_t k = (j + 1) % m;
    worst = std::max(worst, (segment_position(j, 1.0) - segment_position(k, 0.0)).norm());
    worst = std::max(worst, (segment_derivative(j, 1.0) - segment_derivative(k, 0.0)).norm());
    if (degree_ >= 2) {
      worst = std::max(
          worst, (segment_second_derivative(j, 1.0) - segment_second_derivative(k, 0.0)).norm());
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

// Rows of the continuity constraint matrix C (C x = 0) acting on the stacked
// control-point vector of one coordinate.
Eigen::MatrixXd continuity_constraints(int segments, int degree, bool closed) {
  const int stride = degree + 1;
  const int unknowns = segments * stride;
  const int joins = closed ? segments : segments - 1;
  const int orders = std::min(degree, 2) + 1;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(joins * orders, unknowns);
  int row = 0;
  for (int j = 0; j < joins; ++j) {
    const int a = j * stride;
    const int b = ((j + 1) % segments) * stride;
    // r-th derivative at t=1 of segment a equals the r-th derivative at t=0
    // of segment b; the common factor d!/(d-r)! is dropped.
    for (int r = 0; r < orders; ++r) {
      for (int i = 0; i <= r; ++i) {
        const double coeff = (((r - i) % 2 == 0) ? 1.0 : -1.0) * binomial(r, i);
        c(row, a + degree - r + i) += coeff;
        c(row, b + i) -= coeff;
      }
      ++row;
    }
  }
  return c;
}

std::vector<double> chord_parameters(std::span<const BevCoord> pts, int segments, bool closed) {
  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    cum[i] = cum[i - 1] + std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  }
  double total = cum.back();
  if (closed) {
    total += std::hypot(pts.front().x - pts.back().x, pts.front().y - pts.back().y);
  }
  std::vector<double> u(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) u[i] = segments * cum[i] / total;
  return u;
}

std::vector<BezierSegment> solve_fit(std::span<const BevCoord> pts, const std::vector<double>& u,
                                     int segments, int degree, bool closed) {
  const int stride = degree + 1;
  const int unknowns = segments * stride;
  const auto n = static_cast<Eigen::Index>(pts.size());

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, unknowns);
  Eigen::MatrixXd rhs(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    double uu = u[i];
    if (closed) uu -= segments * std::floor(uu / segments);
    int j = std::min(static_cast<int>(std::floor(uu)), segments - 1);
    j = std::max(j, 0);
    const double t = std::clamp(uu - j, 0.0, 1.0);
    for (int k = 0; k <= degree; ++k) a(i, j * stride + k) = bernstein(degree, k, t);
    rhs(i, 0) = pts[i].x;
    rhs(i, 1) = pts[i].y;
  }

  const Eigen::MatrixXd c = continuity_constraints(segments, degree, closed);
  Eigen::MatrixXd null_basis;
  if (c.rows() == 0) {
    null_basis = Eigen::MatrixXd::Identity(unknowns, unknowns);
  } else {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> cqr(c.transpose());
    cqr.setThreshold(1e-12);
    const Eigen::Index rank = cqr.rank();
    if (rank < c.rows()) {
      throw FitError("rank-deficient continuity constraint system (rank " + std::to_string(rank) +
                     " of " + std::to_string(c.rows()) + ")");
    }
    const Eigen::MatrixXd q = cqr.householderQ();
    null_basis = q.rightCols(unknowns - rank);
  }

  const Eigen::MatrixXd reduced = a * null_basis;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> lqr(reduced);
  lqr.setThreshold(1e-10);
  if (lqr.rank() < reduced.cols()) {
    throw FitError(
        "least-squares system is rank deficient; add waypoints or "
        "reduce the segment count");
  }
  const Eigen::MatrixXd z = lqr.solve(rhs);
  const Eigen::MatrixXd x = null_basis * z;

  std::vector<BezierSegment> out(segments, BezierSegment(stride, 2));
  for (int j = 0; j < segments; ++j) {
    out[j] = x.middleRows(j * stride, stride);
  }
  return out;
}

// Closest-point refinement of a waypoint's curve parameter, started from its
// previous value.
double reproject_parameter(const PathSpline& spline, const Eigen::Vector2d& p, double u) {
  const double m = static_cast<double>(spline.num_segments());
  for (int iter = 0; iter < 20; ++iter) {
    const Eigen::Vector2d g = spline.position(u);
    const Eigen::Vector2d d1 = spline.derivative(u);
    const Eigen::Vector2d d2 = spline.second_derivative(u);
    const double f = (g - p).dot(d1);
    double fp = d1.squaredNorm() + (g - p).dot(d2);
    if (fp <= 0.0) fp = d1.squaredNorm();
    double step = -f / fp;
    step = std::clamp(step, -0.25, 0.25);
    double next = u + step;
    if (!spline.closed()) next = std::clamp(next, 0.0, m);
    if (std::abs(next - u) < 1e-13) return next;
    u = next;
  }
  return u;
}

}  // namespace

PathSpline fit_path(std::span<const BevCoord> waypoints, int segments, int degree, bool closed) {
  if (segments < 1) throw ArgumentError("segment count must be positive");
  if (degree < 1 || degree > 15) throw ArgumentError("degree must be in [1, 15]");
  const auto needed = static_cast<std::size_t>(segments) * (degree + 1);
  if (waypoints.size() < needed) {
    throw ArgumentError("need at least " + std::to_string(needed) + " waypoints for " +
                        std::to_string(segments) + " segments of degree " + std::to_string(degree) +
                        ", got " + std::to_string(waypoints.size()));
  }
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    if (!std::isfinite(waypoints[i].x) || !std::isfinite(waypoints[i].y)) {
      throw ArgumentError("non-finite waypoint at index " + std::to_string(i));
    }
    if (i > 0 && waypoints[i].x == waypoints[i - 1].x && waypoints[i].y == waypoints[i - 1].y) {
      throw ArgumentError("repeated consecutive waypoint at index " + std::to_string(i));
    }
  }

  std::vector<double> u = chord_parameters(waypoints, segments, closed);
  std::vector<BezierSegment> ctrl = solve_fit(waypoints, u, segments, degree, closed);

  constexpr int kReparameterizationPasses = 2;
  for (int pass = 0; pass < kReparameterizationPasses; ++pass) {
    const PathSpline current(ctrl, closed);
    for (std::size_t i = 0; i < waypoints.size(); ++i) {
      u[i] = reproject_parameter(current, {waypoints[i].x, waypoints[i].y}, u[i]);
    }
    ctrl = solve_fit(waypoints, u, segments, degree, closed);
  }

  PathSpline fitted(ctrl, closed);
  double sq = 0.0;
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    const Eigen::Vector2d p(waypoints[i].x, waypoints[i].y);
    const double uu = reproject_parameter(fitted, p, u[i]);
    sq += (fitted.position(uu) - p).squaredNorm();
  }
  FitReport report;
  report.rms = std::sqrt(sq / static_cast<double>(waypoints.size()));
  report.waypoints = waypoints.size();
  return PathSpline(std::move(ctrl), closed, report);
}

// ---------------------------------------------------------------------------
// Evaluation and the path-coordinate map

PathSample eval_path(const PathSpline& spline, double s) {
  const double u = spline.parameter_at(s);
  const Eigen::Vector2d g = spline.position(u);
  const Eigen::Vector2d d1 = spline.derivative(u);
  const Eigen::Vector2d d2 = spline.second_derivative(u);
  const double speed = d1.norm();
  PathSample out;
  out.point = {g.x(), g.y()};
  out.unit_tangent = d1 / speed;
  out.curvature = cross(d1, d2) / (speed * speed * speed);
  return out;
}

namespace {

struct Candidate {
  std::size_t segment = 0;
  double t = 0.0;
  double distance = std::numeric_limits<double>::infinity();
};

double box_distance(const std::pair<Eigen::Vector2d, Eigen::Vector2d>& box,
                    const Eigen::Vector2d& p) {
  const double dx = std::max({box.first.x() - p.x(), 0.0, p.x() - box.second.x()});
  const double dy = std::max({box.first.y() - p.y(), 0.0, p.y() - box.second.y()});
  return std::hypot(dx, dy);
}

double stationarity(const PathSpline& sp, std::size_t j, double t, const Eigen::Vector2d& p) {
  return (sp.segment_position(j, t) - p).dot(sp.segment_derivative(j, t));
}

// Minimizes |B(t) - p| over [lo, hi] by grid search at ~1 m spacing followed
// by bisection on the stationarity condition.
double dense_minimize(const PathSpline& sp, std::size_t j, double lo, double hi,
                      const Eigen::Vector2d& p) {
  const double span_len = sp.segment_arc_length(j, hi) - sp.segment_arc_length(j, lo);
  const int n = std::max(8, static_cast<int>(std::ceil(span_len)));
  double best_t = lo;
  double best_d = (sp.segment_position(j, lo) - p).norm();
  for (int k = 1; k <= n; ++k) {
    const double t = lo + (hi - lo) * k / n;
    const double d = (sp.segment_position(j, t) - p).norm();
    if (d < best_d) {
      best_d = d;
      best_t = t;
    }
  }
  double a = std::max(lo, best_t - (hi - lo) / n);
  double b = std::min(hi, best_t + (hi - lo) / n);
  double fa = stationarity(sp, j, a, p);
  const double fb = stationarity(sp, j, b, p);
  if (!(fa < 0.0 && fb > 0.0)) return best_t;
  for (int iter = 0; iter < 200 && b - a > 1e-15; ++iter) {
    const double mid = 0.5 * (a + b);
    const double fm = stationarity(sp, j, mid, p);
    if (fm < 0.0) {
      a = mid;
      fa = fm;
    } else {
      b = mid;
    }
  }
  return 0.5 * (a + b);
}

// Root of the stationarity condition in a bracket where it changes sign from
// negative to positive: Newton steps safeguarded by bisection.
double safeguarded_newton(const PathSpline& sp, std::size_t j, double lo, double hi, double t,
                          const Eigen::Vector2d& p, bool* converged) {
  *converged = false;
  for (int iter = 0; iter < 60; ++iter) {
    const Eigen::Vector2d g = sp.segment_position(j, t);
    const Eigen::Vector2d d1 = sp.segment_derivative(j, t);
    const Eigen::Vector2d d2 = sp.segment_second_derivative(j, t);
    const double f = (g - p).dot(d1);
    if (f < 0.0)
      lo = t;
    else
      hi = t;
    const double fp = d1.squaredNorm() + (g - p).dot(d2);
    double next = fp > 0.0 ? t - f / fp : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) < 1e-15 || hi - lo < 1e-15) {
      *converged = true;
      return next;
    }
    t = next;
  }
  return t;
}

void segment_candidates(const PathSpline& sp, std::size_t j, const Eigen::Vector2d& p,
                        std::vector<Candidate>& out) {
  std::array<double, kProjectionSamples + 1> dist{};
  for (int k = 0; k <= kProjectionSamples; ++k) {
    dist[k] = (sp.segment_position(j, static_cast<double>(k) / kProjectionSamples) - p).norm();
  }
  for (int k = 0; k <= kProjectionSamples; ++k) {
    const bool left_ok = k == 0 || dist[k] <= dist[k - 1];
    const bool right_ok = k == kProjectionSamples || dist[k] <= dist[k + 1];
    if (!left_ok || !right_ok) continue;
    const double lo = static_cast<double>(std::max(k - 1, 0)) / kProjectionSamples;
    const double hi = static_cast<double>(std::min(k + 1, kProjectionSamples)) / kProjectionSamples;
    const double tk = static_cast<double>(k) / kProjectionSamples;
    const double flo = stationarity(sp, j, lo, p);
    const double fhi = stationarity(sp, j, hi, p);
    double t = tk;
    if (flo < 0.0 && fhi > 0.0) {
      bool ok = false;
      t = safeguarded_newton(sp, j, lo, hi, tk, p, &ok);
      if (!ok) t = dense_minimize(sp, j, lo, hi, p);
    } else if (lo == 0.0 && flo >= 0.0 && (k == 0 || fhi >= 0.0)) {
      t = 0.0;
    } else if (hi == 1.0 && fhi <= 0.0 && (k == kProjectionSamples || flo <= 0.0)) {
      t = 1.0;
    } else {
      t = dense_minimize(sp, j, lo, hi, p);
    }
    out.push_back({j, t, (sp.segment_position(j, t) - p).norm()});
  }
}

}  // namespace

PathCoord to_path_coords(const PathSpline& spline, BevCoord pt, double e_max) {
  const Eigen::Vector2d p(pt.x, pt.y);
  if (!p.allFinite()) throw ArgumentError("non-finite BEV point");

  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(spline.num_segments());
  for (std::size_t j = 0; j < spline.num_segments(); ++j) {
    order.emplace_back(box_distance(spline.segment_bounds(j), p), j);
  }
  std::sort(order.begin(), order.end());

  std::vector<Candidate> cands;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [bound, j] : order) {
    if (bound > best + 1e-9) break;
    if (bound > e_max) break;
    const std::size_t before = cands.size();
    segment_candidates(spline, j, p, cands);
    for (std::size_t c = before; c < cands.size(); ++c) best = std::min(best, cands[c].distance);
  }
  if (cands.empty() || best > e_max) {
    throw OutOfCorridorError("point (" + std::to_string(pt.x) + ", " + std::to_string(pt.y) +
                             ") is farther than e_max = " + std::to_string(e_max) +
                             " m from the path");
  }

  const auto best_it = std::min_element(
      cands.begin(), cands.end(),
      [](const Candidate& a, const Candidate& b) { return a.distance < b.distance; });
  const double u = static_cast<double>(best_it->segment) + best_it->t;
  const double s = spline.closed() ? spline.wrap(spline.arc_length_at(u)) : spline.arc_length_at(u);

  for (const auto& c : cands) {
    if (std::abs(c.distance - best_it->distance) > 1e-9) continue;
    const double sc = spline.arc_length_at(static_cast<double>(c.segment) + c.t);
    if (std::abs(spline.signed_distance(sc, s)) > 1e-6) {
      throw AmbiguityError("projection has two global minima at s = " + std::to_string(s) +
                           " and s = " + std::to_string(sc));
    }
  }

  const Eigen::Vector2d g = spline.segment_position(best_it->segment, best_it->t);
  const Eigen::Vector2d d1 = spline.segment_derivative(best_it->segment, best_it->t);
  const Eigen::Vector2d tangent = d1.normalized();
  const Eigen::Vector2d diff = g - p;
  const double dist = diff.norm();

  if (!spline.closed()) {
    const bool at_end = (best_it->segment == 0 && best_it->t == 0.0) ||
                        (best_it->segment + 1 == spline.num_segments() && best_it->t == 1.0);
    if (at_end && std::abs(tangent.dot(diff)) > 1e-9 * (1.0 + dist)) {
      throw DomainError("point projects beyond the end of the open path");
    }
  }

  const double side = cross(tangent, diff);
  const double e = side > 0.0 ? dist : (side < 0.0 ? -dist : 0.0);
  return {s, e};
}

BevCoord to_bev_coords(const PathSpline& spline, PathCoord q) {
  if (!std::isfinite(q.e)) throw DomainError("non-finite lateral offset");
  const double u = spline.parameter_at(q.s);
  const Eigen::Vector2d g = spline.position(u);
  const Eigen::Vector2d t = spline.derivative(u).normalized();
  return {g.x() + q.e * t.y(), g.y() - q.e * t.x()};
}

DiffeoValidity validate_diffeo(const PathSpline& spline, double e_max) {
  const double len = spline.length();
  const double step = std::min(0.5, e_max / 4.0);
  const auto n = static_cast<std::size_t>(std::ceil(len / step));
  const std::size_t count = spline.closed() ? n : n + 1;

  std::vector<double> s(count);
  std::vector<Eigen::Vector2d> pts(count);
  DiffeoValidity out;
  for (std::size_t i = 0; i < count; ++i) {
    s[i] = std::min(len, len * static_cast<double>(i) / static_cast<double>(n));
    const double u = spline.parameter_at(spline.closed() ? spline.wrap(s[i]) : s[i]);
    pts[i] = spline.position(u);
    const Eigen::Vector2d d1 = spline.derivative(u);
    const Eigen::Vector2d d2 = spline.second_derivative(u);
    const double speed = d1.norm();
    out.max_curvature =
        std::max(out.max_curvature, std::abs(cross(d1, d2)) / (speed * speed * speed));
  }
  for (double u = 0.0; u <= static_cast<double>(spline.num_segments()); u += 1.0) {
    const Eigen::Vector2d d1 = spline.derivative(u);
    const Eigen::Vector2d d2 = spline.second_derivative(u);
    const double speed = d1.norm();
    out.max_curvature =
        std::max(out.max_curvature, std::abs(cross(d1, d2)) / (speed * speed * speed));
  }

  const double gap = std::numbers::pi * e_max;
  double min_sep = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t k = i + 1; k < count; ++k) {
      if (std::abs(spline.signed_distance(s[k], s[i])) <= gap) continue;
      min_sep = std::min(min_sep, (pts[k] - pts[i]).squaredNorm());
    }
  }
  out.min_far_separation = std::sqrt(min_sep);
  out.valid = out.max_curvature < 1.0 / e_max && out.min_far_separation > 2.0 * e_max;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json spline_to_json(const PathSpline& spline) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["degree"] = spline.degree();
  doc["closed"] = spline.closed();
  doc["num_segments"] = spline.num_segments();
  doc["knot_arc_lengths"] =
      std::vector<double>(spline.knot_arc_lengths().begin(), spline.knot_arc_lengths().end());
  std::vector<double> flat;
  flat.reserve(spline.num_segments() * (spline.degree() + 1) * 2);
  for (std::size_t j = 0; j < spline.num_segments(); ++j) {
    const auto& seg = spline.segment(j);
    for (Eigen::Index r = 0; r < seg.rows(); ++r) {
      flat.push_back(seg(r, 0));
      flat.push_back(seg(r, 1));
    }
  }
  doc["control_points"] = std::move(flat);
  doc["fit_rms"] = spline.fit_report().rms;
  return doc;
}

PathSpline spline_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format_version").get<int>() != 1) {
      throw ParseError("unsupported spline format_version");
    }
    const int degree = doc.at("degree").get<int>();
    const bool closed = doc.at("closed").get<bool>();
    const auto m = doc.at("num_segments").get<std::size_t>();
    const auto flat = doc.at("control_points").get<std::vector<double>>();
    const auto stride = static_cast<std::size_t>(degree + 1);
    if (degree < 1 || m == 0 || flat.size() != m * stride * 2) {
      throw ParseError("control_points size does not match degree and num_segments");
    }
    std::vector<BezierSegment> segs(m, BezierSegment(stride, 2));
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t r = 0; r < stride; ++r) {
        segs[j](r, 0) = flat[(j * stride + r) * 2];
        segs[j](r, 1) = flat[(j * stride + r) * 2 + 1];
      }
    }
    FitReport report;
    if (doc.contains("fit_rms")) report.rms = doc["fit_rms"].get<double>();
    PathSpline spline(std::move(segs), closed, report);
    const auto knots = doc.at("knot_arc_lengths").get<std::vector<double>>();
    const auto stored = spline.knot_arc_lengths();
    if (knots.size() != stored.size()) throw ParseError("knot_arc_lengths size mismatch");
    for (std::size_t i = 0; i < knots.size(); ++i) {
      if (std::abs(knots[i] - stored[i]) > 1e-6 * (1.0 + std::abs(stored[i]))) {
        throw ParseError("knot_arc_lengths inconsistent with control points");
      }
    }
    return spline;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("malformed spline document: ") + ex.what());
  }
}

std::vector<BevCoord> synthetic_road(double length, double spacing) {
  if (!(length > 0.0) || !(spacing > 0.0)) {
    throw ArgumentError("road length and spacing must be positive");
  }
  const double two_pi = 2.0 * std::numbers::pi;
  auto curvature = [&](double s) {
    return 0.008 * std::sin(two_pi * s / 500.0) + 0.005 * std::sin(two_pi * s / 310.0 + 1.0);
  };
  constexpr int kSubsteps = 20;
  const double h = spacing / kSubsteps;
  std::vector<BevCoord> out;
  const auto n = static_cast<std::size_t>(std::floor(length / spacing + 1e-9));
  out.reserve(n + 1);
  double x = 0.0, y = 0.0, heading = 0.0, s = 0.0;
  out.push_back({x, y});
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < kSubsteps; ++k) {
      // Midpoint rule on heading, exact integration of curvature is not needed
      // at this step size.
      const double mid_heading = heading + 0.5 * h * curvature(s);
      x += h * std::cos(mid_heading);
      y += h * std::sin(mid_heading);
      heading += h * curvature(s + 0.5 * h);
      s += h;
    }
    out.push_back({x, y});
  }
  return out;
}

std::vector<BevCoord> circle_waypoints(double radius, std::size_t n) {
  std::vector<BevCoord> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double th = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    out[k] = {radius * std::cos(th), radius * std::sin(th)};
  }
  return out;
}

}  // namespace spm
