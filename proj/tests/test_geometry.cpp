#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "spm/errors.hpp"
#include "spm/geometry.hpp"
#include "test_support.hpp"

using namespace spm;

using spm::testing::circle100;
using spm::testing::kTwoMiles;
using spm::testing::straight_line;

namespace {
const PathSpline& road() { return spm::testing::two_mile_road(); }
}  // namespace

TEST_CASE("collinear waypoints fit an exact straight line") {
  std::vector<BevCoord> pts;
  for (int i = 0; i < 8; ++i) pts.push_back({1.5 * i, 0.0});
  const PathSpline sp = fit_path(pts, 2, 3, false);
  for (int k = 0; k <= 100; ++k) {
    const auto sample = eval_path(sp, sp.length() * k / 100.0);
    CHECK(std::abs(sample.point.y) < 1e-9);
  }
  CHECK(std::abs(sp.length() - 10.5) < 1e-6);
  CHECK(sp.fit_report().rms < 1e-9);
}

TEST_CASE("two-mile road: M=40, degree 6 fit is C2 with bounded curvature") {
  const PathSpline& sp = road();
  CHECK(sp.num_segments() == 40);
  CHECK(sp.degree() == 6);
  CHECK(sp.continuity_residual() < 1e-6);
  CHECK(sp.fit_report().rms < 0.05);
  CHECK(std::abs(sp.length() - kTwoMiles) < 1.0);

  // Dense curvature sweep against the corridor half-width e_max = 6 m.
  double max_k = 0.0;
  for (double s = 0.0; s <= sp.length(); s += 0.25) {
    max_k = std::max(max_k, std::abs(eval_path(sp, s).curvature));
  }
  CHECK(max_k < 1.0 / 6.0);
  CHECK(max_k < 0.02);
}

TEST_CASE("closed circle fit has small radial error and curvature 1/R") {
  const PathSpline& sp = circle100();
  double worst_radius = 0.0;
  double worst_curv = 0.0;
  for (int k = 0; k < 4000; ++k) {
    const auto smp = eval_path(sp, sp.length() * k / 4000.0);
    worst_radius = std::max(worst_radius, std::abs(std::hypot(smp.point.x, smp.point.y) - 100.0));
    worst_curv = std::max(worst_curv, std::abs(smp.curvature - 0.01));
  }
  CHECK(worst_radius < 0.05);
  CHECK(worst_curv < 1e-6);
  CHECK(sp.continuity_residual() < 1e-8);
  CHECK(std::abs(sp.length() - 2.0 * std::numbers::pi * 100.0) < 1e-3);
}

TEST_CASE("C2 continuity: finite-difference second derivative across knots") {
  const PathSpline& sp = road();
  const double h = 1e-3;
  for (std::size_t j = 1; j < sp.num_segments(); ++j) {
    const double u = static_cast<double>(j);
    const Eigen::Vector2d fd =
        (sp.position(u + h) - 2.0 * sp.position(u) + sp.position(u - h)) / (h * h);
    const Eigen::Vector2d left = sp.segment_second_derivative(j - 1, 1.0);
    const Eigen::Vector2d right = sp.segment_second_derivative(j, 0.0);
    const double scale = std::max(1.0, left.norm());
    CHECK((fd - left).norm() < 1e-4 * scale);
    CHECK((fd - right).norm() < 1e-4 * scale);
  }
}

TEST_CASE("straight-line evaluation and path coordinates") {
  const PathSpline sp = straight_line(10.0, 1);
  const auto smp = eval_path(sp, 3.0);
  CHECK(smp.point.x == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(std::abs(smp.point.y) < 1e-12);
  CHECK(smp.unit_tangent.x() == doctest::Approx(1.0));
  CHECK(std::abs(smp.curvature) < 1e-12);

  const PathCoord q = to_path_coords(sp, {3.0, 1.0}, 6.0);
  CHECK(q.s == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(q.e == doctest::Approx(-1.0).epsilon(1e-12));

  const PathCoord on = to_path_coords(sp, {5.0, 0.0}, 6.0);
  CHECK(on.s == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(on.e == 0.0);

  const BevCoord back = to_bev_coords(sp, {3.0, -1.0});
  CHECK(back.x == doctest::Approx(3.0));
  CHECK(back.y == doctest::Approx(1.0));

  const BevCoord center = to_bev_coords(sp, {4.0, 0.0});
  const auto at4 = eval_path(sp, 4.0);
  CHECK(center.x == at4.point.x);
  CHECK(center.y == at4.point.y);
}

TEST_CASE("circle projection matches the analytic foot point") {
  const PathSpline& sp = circle100();
  const Eigen::Vector2d start = sp.position(0.0);
  const double theta0 = std::atan2(start.y(), start.x());
  const double circumference = sp.length();
  for (double theta : {0.3, 1.7, 3.0, 4.4, 6.0}) {
    const BevCoord p{98.0 * std::cos(theta), 98.0 * std::sin(theta)};
    const PathCoord q = to_path_coords(sp, p, 6.0);
    double expected = 100.0 * (theta - theta0);
    expected -= circumference * std::floor(expected / circumference);
    CHECK(std::abs(sp.signed_distance(q.s, expected)) < 1e-3);
    // Counter-clockwise travel: the inside of the circle is to the left.
    CHECK(q.e == doctest::Approx(-2.0).epsilon(1e-5));
  }
}

TEST_CASE("round trip through both coordinate maps on the fitted road") {
  const PathSpline& sp = road();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ds(0.0, sp.length());
  std::uniform_real_distribution<double> de(-6.0, 6.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const PathCoord q{ds(rng), de(rng)};
    const PathCoord r = to_path_coords(sp, to_bev_coords(sp, q), 6.0);
    worst = std::max({worst, std::abs(r.s - q.s), std::abs(r.e - q.e)});
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("round trip on a closed path compares wrapped arc length") {
  const PathSpline& sp = circle100();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ds(-50.0, sp.length() + 50.0);
  std::uniform_real_distribution<double> de(-6.0, 6.0);
  for (int i = 0; i < 300; ++i) {
    const PathCoord q{ds(rng), de(rng)};
    const PathCoord r = to_path_coords(sp, to_bev_coords(sp, q), 6.0);
    CHECK(std::abs(sp.signed_distance(r.s, q.s)) < 1e-6);
    CHECK(std::abs(r.e - q.e) < 1e-6);
  }
}

TEST_CASE("negating e reflects the point across the tangent line") {
  const PathSpline& sp = road();
  for (double s : {10.0, 812.3, 2500.0}) {
    const auto smp = eval_path(sp, s);
    const BevCoord a = to_bev_coords(sp, {s, 2.5});
    const BevCoord b = to_bev_coords(sp, {s, -2.5});
    CHECK(0.5 * (a.x + b.x) == doctest::Approx(smp.point.x));
    CHECK(0.5 * (a.y + b.y) == doctest::Approx(smp.point.y));
    const Eigen::Vector2d diff(a.x - b.x, a.y - b.y);
    CHECK(std::abs(diff.dot(smp.unit_tangent)) < 1e-9);
    CHECK(diff.norm() == doctest::Approx(5.0));
  }
}

TEST_CASE("projection is a local and global minimizer") {
  const PathSpline& sp = road();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ds(0.0, sp.length());
  std::uniform_real_distribution<double> de(-5.5, 5.5);
  for (int i = 0; i < 20; ++i) {
    const PathCoord q0{ds(rng), de(rng)};
    const BevCoord p = to_bev_coords(sp, q0);
    const PathCoord q = to_path_coords(sp, p, 6.0);
    auto dist = [&](double s) {
      const auto g = eval_path(sp, s).point;
      return std::hypot(g.x - p.x, g.y - p.y);
    };
    const double d0 = dist(q.s);
    if (q.s > 1e-3) CHECK(dist(q.s - 1e-3) >= d0);
    if (q.s < sp.length() - 1e-3) CHECK(dist(q.s + 1e-3) >= d0);

    // Brute-force scan over the whole spline at 0.1 m resolution.
    double best_s = 0.0, best_d = 1e300;
    for (double s = 0.0; s <= sp.length(); s += 0.1) {
      const double d = dist(s);
      if (d < best_d) {
        best_d = d;
        best_s = s;
      }
    }
    CHECK(std::abs(best_s - q.s) <= 0.1);
  }
}

TEST_CASE("diffeomorphism hypotheses") {
  const DiffeoValidity line = validate_diffeo(straight_line(100.0, 2), 6.0);
  CHECK(line.valid);
  CHECK(line.max_curvature < 1e-12);

  const DiffeoValidity c100 = validate_diffeo(circle100(), 6.0);
  CHECK(c100.valid);
  CHECK(c100.max_curvature == doctest::Approx(0.01).epsilon(1e-4));
  // Shortest chord among pairs separated by more than pi * e_max of arc.
  const double analytic = 2.0 * 100.0 * std::sin(std::numbers::pi * 6.0 / 200.0);
  CHECK(c100.min_far_separation >= analytic - 1e-6);
  CHECK(c100.min_far_separation < analytic + 0.2);

  const PathSpline c5 = fit_path(circle_waypoints(5.0, 200), 8, 6, true);
  const DiffeoValidity small = validate_diffeo(c5, 6.0);
  CHECK_FALSE(small.valid);
  CHECK(small.max_curvature == doctest::Approx(0.2).epsilon(1e-3));

  CHECK(validate_diffeo(road(), 6.0).valid);
}

TEST_CASE("geometry error paths") {
  std::vector<BevCoord> few = {{0, 0}, {1, 0}, {2, 0}};
  CHECK_THROWS_AS(fit_path(few, 2, 3, false), ArgumentError);

  std::vector<BevCoord> dup;
  for (int i = 0; i < 10; ++i) dup.push_back({static_cast<double>(i), 0.0});
  dup[5] = dup[4];
  CHECK_THROWS_AS(fit_path(dup, 1, 3, false), ArgumentError);

  const PathSpline line = straight_line(10.0, 1);
  CHECK_THROWS_AS(eval_path(line, 10.5), DomainError);
  CHECK_THROWS_AS(eval_path(line, -1.0), DomainError);
  CHECK_THROWS_AS(to_path_coords(line, {5.0, 10.0}, 6.0), OutOfCorridorError);
  CHECK_THROWS_AS(to_path_coords(line, {-3.0, 0.5}, 6.0), DomainError);

  // The center of a small circle is equidistant from every curve point.
  const PathSpline c5 = fit_path(circle_waypoints(5.0, 200), 8, 6, true);
  CHECK_THROWS_AS(to_path_coords(c5, {0.0, 0.0}, 10.0), AmbiguityError);
}

TEST_CASE("spline JSON round trip is exact and deterministic") {
  const PathSpline& sp = road();
  const auto doc = spline_to_json(sp);
  CHECK(doc["format_version"] == 1);
  CHECK(doc["control_points"].size() == 40 * 7 * 2);
  const PathSpline back = spline_from_json(doc);
  CHECK(spline_to_json(back).dump() == doc.dump());
  CHECK(back.length() == sp.length());

  auto broken = doc;
  broken["control_points"].erase(0);
  CHECK_THROWS_AS(spline_from_json(broken), ParseError);
}
