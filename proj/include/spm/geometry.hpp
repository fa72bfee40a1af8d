#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <json.hpp>
#include <span>
#include <vector>

namespace spm {

// Cartesian bird's-eye-view coordinates in meters.
struct BevCoord {
  double x = 0.0;
  double y = 0.0;
};

// Path coordinates: arc length s along the reference curve and signed lateral
// offset e (positive to the right of the direction of travel).
struct PathCoord {
  double s = 0.0;
  double e = 0.0;
};

using BezierSegment = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct FitReport {
  double rms = 0.0;                      // waypoint-to-curve residual RMS [m]
  double max_continuity_residual = 0.0;  // largest C0/C1/C2 violation at knots
  std::size_t waypoints = 0;
};

struct PathSample {
  BevCoord point;
  Eigen::Vector2d unit_tangent;
  double curvature = 0.0;  // signed, positive for counter-clockwise turns
};

// Piecewise Bezier centerline g(s) with an arc-length parameterization.
//
// Segment j covers the global curve parameter u in [j, j+1]. The spline is
// immutable after construction and safe to share between threads.
class PathSpline {
 public:
  PathSpline(std::vector<BezierSegment> segments, bool closed, FitReport report = {});

  int degree() const { return degree_; }
  std::size_t num_segments() const { return segments_.size(); }
  bool closed() const { return closed_; }
  const BezierSegment& segment(std::size_t j) const { return segments_[j]; }
  const FitReport& fit_report() const { return report_; }

  double s_min() const { return 0.0; }
  double s_max() const { return knot_s_.back(); }
  double length() const { return knot_s_.back(); }
  std::span<const double> knot_arc_lengths() const { return knot_s_; }

  // Reduces s into [0, length) for closed paths; throws DomainError for s
  // outside [s_min, s_max] on open paths.
  double wrap(double s) const;
  // Signed difference s - s_ref, reduced to the shortest wrapped value on
  // closed paths.
  double signed_distance(double s, double s_ref) const;

  // Parameter-level evaluation, u in [0, M].
  Eigen::Vector2d position(double u) const;
  Eigen::Vector2d derivative(double u) const;
  Eigen::Vector2d second_derivative(double u) const;
  double arc_length_at(double u) const;
  double parameter_at(double s) const;

  // Largest C0/C1/C2 mismatch between consecutive segments.
  double continuity_residual() const;

  // Per-segment access used by the projection solver.
  Eigen::Vector2d segment_position(std::size_t j, double t) const;
  Eigen::Vector2d segment_derivative(std::size_t j, double t) const;
  Eigen::Vector2d segment_second_derivative(std::size_t j, double t) const;
  double segment_arc_length(std::size_t j, double t) const;
  // Axis-aligned bounding box of the control polygon: (min, max).
  std::pair<Eigen::Vector2d, Eigen::Vector2d> segment_bounds(std::size_t j) const;

 private:
  std::size_t locate(double u, double* t) const;

  int degree_ = 0;
  bool closed_ = false;
  FitReport report_;
  std::vector<BezierSegment> segments_;
  std::vector<BezierSegment> first_hodograph_;
  std::vector<BezierSegment> second_hodograph_;
  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> bounds_;
  std::vector<double> knot_s_;
  // Arc-length lookup: cumulative length at uniformly spaced local
  // parameters, kArcSamples + 1 entries per segment.
  std::vector<std::vector<double>> arc_table_;
};

struct DiffeoValidity {
  double max_curvature = 0.0;
  double min_far_separation = 0.0;
  bool valid = false;
};

// Constrained least-squares fit of M Bezier segments with C2 continuity at
// every interior knot (and across the seam when closed).
PathSpline fit_path(std::span<const BevCoord> waypoints, int segments, int degree, bool closed);

PathSample eval_path(const PathSpline& spline, double s);

// Projects p onto the centerline. Throws OutOfCorridorError when the nearest
// point is farther than e_max and AmbiguityError for tied global minima.
PathCoord to_path_coords(const PathSpline& spline, BevCoord p, double e_max);

BevCoord to_bev_coords(const PathSpline& spline, PathCoord q);

DiffeoValidity validate_diffeo(const PathSpline& spline, double e_max);

nlohmann::json spline_to_json(const PathSpline& spline);
PathSpline spline_from_json(const nlohmann::json& doc);

// Smooth, non-self-intersecting synthetic road of the given length, sampled
// every `spacing` meters. Curvature stays below 0.015 1/m.
std::vector<BevCoord> synthetic_road(double length, double spacing);

// Circle of the given radius centered at the origin, traversed
// counter-clockwise, sampled at n points (no repeated endpoint).
std::vector<BevCoord> circle_waypoints(double radius, std::size_t n);

}  // namespace spm
