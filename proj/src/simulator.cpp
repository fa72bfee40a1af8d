#include "spm/simulator.hpp"

#include <gsl/gsl_cdf.h>

#include <algorithm>
#include <cmath>
#include <istream>
#include <mutex>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <tuple>

#include "spm/errors.hpp"

namespace spm {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  return std::mt19937_64(seq);
}

// Lower Cholesky factor of a squared-exponential covariance over the given
// 1-D coordinates; `period` > 0 uses the chordal distance on a circle.
Eigen::MatrixXd se_factor(const std::vector<double>& x, double length, double period) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      double d = x[i] - x[j];
      if (period > 0.0) d = period / std::numbers::pi * std::sin(std::numbers::pi * d / period);
      cov(i, j) = cov(j, i) = std::exp(-0.5 * d * d / (length * length));
    }
  }
  for (double jitter = 1e-10; jitter < 1e-1; jitter *= 10.0) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov + jitter * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw NumericalError("squared-exponential covariance is not positive definite");
}

// Factors are reused across seeds that share a layout.
const Eigen::MatrixXd& cached_factor(const std::vector<double>& x, double length, double period) {
  struct Entry {
    std::vector<double> x;
    double length, period;
    Eigen::MatrixXd factor;
  };
  static std::mutex mutex;
  static std::vector<std::unique_ptr<Entry>> cache;
  std::lock_guard lock(mutex);
  for (const auto& e : cache) {
    if (e->x == x && e->length == length && e->period == period) return e->factor;
  }
  if (cache.size() > 8) cache.erase(cache.begin());
  cache.push_back(std::make_unique<Entry>(Entry{x, length, period, se_factor(x, length, period)}));
  return cache.back()->factor;
}

Eigen::VectorXd standard_normals(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

}  // namespace

void TrueMapConfig::validate() const {
  if (classes.size() != 3) throw ArgumentError("the synthetic world has exactly three classes");
  for (const NormalGamma& ng : classes) {
    if (!(ng.lambda > 0.0) || !(ng.alpha > 0.0) || !(ng.beta > 0.0)) {
      throw ArgumentError("true class parameters must be positive");
    }
  }
  if (!(dominant_concentration > 0.0) || !(other_concentration > 0.0)) {
    throw ArgumentError("Dirichlet concentrations must be positive");
  }
  if (!(water_intensity >= 0.0 && water_intensity < 1.0)) {
    throw ArgumentError("water intensity must lie in [0, 1)");
  }
  if (!(gravel_fraction >= 0.0 && gravel_fraction < 1.0)) {
    throw ArgumentError("gravel fraction must lie in [0, 1)");
  }
  if (!(water_length_s > 0.0) || !(water_length_e > 0.0) || !(gravel_length_s > 0.0)) {
    throw ArgumentError("field length scales must be positive");
  }
}

TrueMap generate_true_map(std::uint64_t seed, const SupportGrid& grid, const TrueMapConfig& cfg) {
  cfg.validate();
  if (!grid.layout()) throw ArgumentError("true-map generation needs a lattice support layout");
  const SupportLayout& layout = *grid.layout();
  const std::size_t rows = layout.rows_s();
  const std::size_t cols = layout.cols_e();
  const std::size_t K = 3;
  const std::size_t L = grid.size();
  const double period = layout.closed ? layout.s_max - layout.s_min : 0.0;

  std::vector<double> s_coords(rows), e_coords(cols);
  for (std::size_t k = 0; k < rows; ++k) s_coords[k] = grid.point(k * cols).s;
  for (std::size_t j = 0; j < cols; ++j) e_coords[j] = grid.point(j).e;

  std::vector<std::size_t> dominant(L, kAsphalt);

  // Gravel along both edges in patches.
  if (cfg.gravel_fraction > 0.0) {
    auto rng = make_rng(seed, 1);
    const Eigen::MatrixXd& Ls = cached_factor(s_coords, cfg.gravel_length_s, period);
    const double threshold = gsl_cdf_ugaussian_Qinv(cfg.gravel_fraction);
    for (int side : {-1, 1}) {
      const Eigen::VectorXd field = Ls * standard_normals(rng, static_cast<Eigen::Index>(rows));
      for (std::size_t k = 0; k < rows; ++k) {
        if (!(field(static_cast<Eigen::Index>(k)) > threshold)) continue;
        for (std::size_t j = 0; j < cols; ++j) {
          if (side * e_coords[j] >= cfg.gravel_edge) dominant[k * cols + j] = kGravel;
        }
      }
    }
  }

  // Wet patches from a separable squared-exponential field: F = Ls Z Le^T.
  if (cfg.water_intensity > 0.0) {
    auto rng = make_rng(seed, 2);
    const Eigen::MatrixXd& Ls = cached_factor(s_coords, cfg.water_length_s, period);
    const Eigen::MatrixXd& Le = cached_factor(e_coords, cfg.water_length_e, 0.0);
    Eigen::MatrixXd Z(rows, cols);
    std::normal_distribution<double> normal;
    for (std::size_t k = 0; k < rows; ++k) {
      for (std::size_t j = 0; j < cols; ++j) Z(k, j) = normal(rng);
    }
    const Eigen::MatrixXd field = Ls * Z * Le.transpose();
    const double threshold = gsl_cdf_ugaussian_Qinv(cfg.water_intensity);
    for (std::size_t k = 0; k < rows; ++k) {
      for (std::size_t j = 0; j < cols; ++j) {
        if (field(k, j) > threshold) dominant[k * cols + j] = kWater;
      }
    }
  }

  std::vector<double> a(L * K, cfg.other_concentration);
  for (std::size_t l = 0; l < L; ++l) a[l * K + dominant[l]] = cfg.dominant_concentration;

  TrueMap truth;
  truth.params = SpmParams(K, L, std::move(a), cfg.classes);
  truth.dominant = std::move(dominant);

  auto rng = make_rng(seed, 3);
  truth.w.resize(L * K);
  for (std::size_t l = 0; l < L; ++l) {
    double total = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      std::gamma_distribution<double> g(truth.params.a(l, i), 1.0);
      truth.w[l * K + i] = g(rng);
      total += truth.w[l * K + i];
    }
    for (std::size_t i = 0; i < K; ++i) truth.w[l * K + i] /= total;
  }
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < K; ++i) {
    const NormalGamma& ng = truth.params.cls(i);
    std::gamma_distribution<double> g(ng.alpha, 1.0 / ng.beta);
    const double tau = g(rng);
    truth.tau.push_back(tau);
    truth.m.push_back(ng.mu + normal(rng) / std::sqrt(ng.lambda * tau));
  }
  return truth;
}

std::vector<double> true_class_probabilities(const TrueMap& truth, const SupportGrid& grid,
                                             const SparseKernelConfig& kernel, const PathCoord& v) {
  std::vector<double> p(truth.K(), 0.0);
  for (const auto& [l, weight] : interp_weights(kernel, grid, v).entries) {
    const auto row = truth.w_row(l);
    for (std::size_t i = 0; i < truth.K(); ++i) p[i] += weight * row[i];
  }
  return p;
}

double true_property_mean(const TrueMap& truth, const SupportGrid& grid,
                          const SparseKernelConfig& kernel, const PathCoord& v) {
  const auto p = true_class_probabilities(truth, grid, kernel, v);
  double mean = 0.0;
  for (std::size_t i = 0; i < truth.K(); ++i) mean += p[i] * truth.m[i];
  return mean;
}

namespace {

std::size_t draw_class(std::mt19937_64& rng, const std::vector<double>& p) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x = u(rng);
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    if (x < p[i]) return i;
    x -= p[i];
  }
  return p.size() - 1;
}

}  // namespace

std::size_t sample_semantic(const TrueMap& truth, const SupportGrid& grid,
                            const SparseKernelConfig& kernel, const PathCoord& v,
                            std::mt19937_64& rng) {
  return draw_class(rng, true_class_probabilities(truth, grid, kernel, v));
}

std::pair<std::size_t, double> sample_property(const TrueMap& truth, const SupportGrid& grid,
                                               const SparseKernelConfig& kernel, const PathCoord& v,
                                               std::mt19937_64& rng) {
  const std::size_t c = draw_class(rng, true_class_probabilities(truth, grid, kernel, v));
  std::normal_distribution<double> normal;
  const double noise = normal(rng);
  // An infinite precision gives the class mean exactly.
  const double y =
      std::isinf(truth.tau[c]) ? truth.m[c] : truth.m[c] + noise / std::sqrt(truth.tau[c]);
  return {c, y};
}

SpmParams perturbed_prior(const TrueMap& truth, double perturbation, std::uint64_t seed,
                          const std::vector<double>& dirichlet) {
  if (!(perturbation >= 0.0 && perturbation < 1.0)) {
    throw ArgumentError("prior perturbation must lie in [0, 1)");
  }
  if (dirichlet.size() != truth.K()) throw ArgumentError("prior Dirichlet row must have K entries");
  auto rng = make_rng(seed, 4);
  std::uniform_real_distribution<double> u(-perturbation, perturbation);
  std::vector<NormalGamma> classes;
  for (const NormalGamma& ng : truth.params.classes()) {
    NormalGamma p = ng;
    p.mu *= 1.0 + u(rng);
    p.lambda *= 1.0 + u(rng);
    p.alpha *= 1.0 + u(rng);
    p.beta *= 1.0 + u(rng);
    classes.push_back(p);
  }
  std::vector<double> a;
  a.reserve(truth.L() * truth.K());
  for (std::size_t l = 0; l < truth.L(); ++l) a.insert(a.end(), dirichlet.begin(), dirichlet.end());
  return SpmParams(truth.K(), truth.L(), std::move(a), std::move(classes));
}

nlohmann::json true_map_to_json(const TrueMap& truth, const SupportGrid& grid,
                                const SparseKernelConfig& kernel) {
  nlohmann::json doc = map_to_json(truth.params, grid, kernel);
  doc["latent"] = {{"w", truth.w}, {"m", truth.m}, {"tau", truth.tau}};
  return doc;
}

double LateralProfile::at(double s) const {
  return offset + amplitude * std::sin(2.0 * std::numbers::pi * s / period);
}

double LateralProfile::max_abs() const { return std::abs(offset) + std::abs(amplitude); }

Trajectory::Trajectory(const PathSpline& spline, const TrajectoryConfig& cfg, double e_max)
    : spline_(&spline), cfg_(cfg) {
  if (!(cfg.speed > 0.0) || !(cfg.duration > 0.0) || !(cfg.rate > 0.0)) {
    throw ArgumentError("trajectory speed, duration and rate must be positive");
  }
  if (!(cfg.lateral.period > 0.0)) throw ArgumentError("lateral profile period must be positive");
  if (cfg.lateral.max_abs() > e_max) {
    throw ArgumentError("lateral profile leaves the corridor");
  }
  const double s_end = cfg.s_start + cfg.speed * cfg.duration;
  if (!spline.closed() && (cfg.s_start < 0.0 || s_end > spline.length())) {
    throw ArgumentError("trajectory runs past the end of the path");
  }
  const auto n = static_cast<std::size_t>(std::floor(cfg.duration * cfg.rate + 1e-9));
  states_.reserve(n + 1);
  for (std::size_t k = 0; k <= n; ++k) states_.push_back(state_at(k / cfg.rate));
}

VehicleState Trajectory::state_at(double t) const {
  VehicleState st;
  st.t = t;
  st.s = cfg_.s_start + cfg_.speed * t;
  st.e = cfg_.lateral.at(st.s);
  const BevCoord p = to_bev_coords(*spline_, {spline_->wrap(st.s), st.e});
  st.x = p.x;
  st.y = p.y;
  // Heading of the offset curve by a central difference along s.
  const double h = 0.05;
  double s0 = st.s - h, s1 = st.s + h;
  if (!spline_->closed()) {
    s0 = std::max(s0, 0.0);
    s1 = std::min(s1, spline_->length());
  }
  const BevCoord a = to_bev_coords(*spline_, {spline_->wrap(s0), cfg_.lateral.at(s0)});
  const BevCoord b = to_bev_coords(*spline_, {spline_->wrap(s1), cfg_.lateral.at(s1)});
  st.yaw = std::atan2(b.y - a.y, b.x - a.x);
  if (spline_->closed()) st.s = spline_->wrap(st.s);
  return st;
}

Trajectory generate_trajectory(const PathSpline& spline, const TrajectoryConfig& cfg,
                               double e_max) {
  return Trajectory(spline, cfg, e_max);
}

MeasurementStream synthesize_measurements(const TrueMap& truth, const Trajectory& trajectory,
                                          const CameraConfig& camera, const SensorConfig& sensors,
                                          const SynthesisContext& ctx, std::uint64_t seed) {
  if (!(sensors.semantic_rate > 0.0) || !(sensors.property_rate > 0.0)) {
    throw ArgumentError("sensor rates must be positive");
  }
  if (!(sensors.near_range > 0.0) || !(sensors.far_range > sensors.near_range)) {
    throw ArgumentError("camera sampling range must satisfy 0 < near < far");
  }
  const TrajectoryConfig& tc = trajectory.config();
  const GroundPlane plane = GroundPlane::horizontal(camera.plane_z);
  auto sem_rng = make_rng(seed, 10);
  auto prop_rng = make_rng(seed, 11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  MeasurementStream out;
  std::vector<StreamRecord> semantic, property;

  const auto frames =
      static_cast<std::size_t>(std::floor(tc.duration * sensors.semantic_rate + 1e-9));
  const std::size_t n = sensors.pixels_per_frame;
  for (std::size_t f = 0; f <= frames; ++f) {
    const double t = f / sensors.semantic_rate;
    const VehicleState st = trajectory.state_at(t);
    const Pose pose = camera_pose(st.x, st.y, st.yaw, camera.extrinsics);
    for (std::size_t i = 0; i < n; ++i) {
      // Stratified in ground distance ahead, uniform across the corridor.
      const double d =
          sensors.near_range + (sensors.far_range - sensors.near_range) * (i + unit(sem_rng)) / n;
      const double e_target = ctx.e_max * (2.0 * unit(sem_rng) - 1.0);
      const double s_target = st.s + d;
      if (!ctx.spline.closed() && s_target > ctx.spline.length()) {
        ++out.dropped_pixels;
        continue;
      }
      const BevCoord target = to_bev_coords(ctx.spline, {ctx.spline.wrap(s_target), e_target});
      Eigen::Vector2d pixel;
      const bool visible =
          project_to_pixel(camera.intrinsics, pose, {target.x, target.y, camera.plane_z}, &pixel) &&
          pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() < camera.intrinsics.width &&
          pixel.y() < camera.intrinsics.height;
      if (!visible) {
        ++out.dropped_pixels;
        continue;
      }
      try {
        const PathCoord v =
            pixel_to_path(camera.intrinsics, pose, pixel, plane, ctx.spline, ctx.e_max);
        StreamRecord r;
        r.type = StreamRecord::Type::kSemantic;
        r.t = t;
        r.v = v;
        r.cls = sample_semantic(truth, ctx.grid, ctx.kernel, v, sem_rng);
        semantic.push_back(r);
      } catch (const Error&) {
        ++out.dropped_pixels;
      }
    }
  }

  const auto ticks =
      static_cast<std::size_t>(std::floor(tc.duration * sensors.property_rate + 1e-9));
  for (std::size_t k = 0; k <= ticks; ++k) {
    const double t = k / sensors.property_rate;
    const VehicleState st = trajectory.state_at(t);
    const PathCoord v{st.s, st.e};
    try {
      StreamRecord r;
      r.type = StreamRecord::Type::kProperty;
      r.t = t;
      r.v = v;
      std::tie(r.cls, r.y) = sample_property(truth, ctx.grid, ctx.kernel, v, prop_rng);
      property.push_back(r);
    } catch (const CoverageError&) {
      ++out.dropped_properties;
    }
  }

  out.records.reserve(semantic.size() + property.size());
  std::merge(property.begin(), property.end(), semantic.begin(), semantic.end(),
             std::back_inserter(out.records),
             [](const StreamRecord& a, const StreamRecord& b) { return a.t < b.t; });
  return out;
}

void write_stream(std::ostream& os, const MeasurementStream& stream) {
  for (const StreamRecord& r : stream.records) {
    nlohmann::json j;
    if (r.type == StreamRecord::Type::kSemantic) {
      j = {{"type", "semantic"}, {"t", r.t}, {"s", r.v.s}, {"e", r.v.e}, {"class", r.cls + 1}};
    } else {
      j = {{"type", "property"}, {"t", r.t}, {"s", r.v.s}, {"e", r.v.e}, {"value", r.y}};
    }
    os << j.dump() << '\n';
  }
}

MeasurementStream read_stream(std::istream& is, std::size_t K) {
  MeasurementStream out;
  std::string line;
  std::size_t lineno = 0;
  double last_t = -std::numeric_limits<double>::infinity();
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "stream line " + std::to_string(lineno) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      StreamRecord r;
      r.t = j.at("t").get<double>();
      r.v = {j.at("s").get<double>(), j.at("e").get<double>()};
      const auto type = j.at("type").get<std::string>();
      if (type == "semantic") {
        const auto c = j.at("class").get<long long>();
        if (c < 1 || static_cast<std::size_t>(c) > K)
          throw ParseError(where + "class out of range");
        r.type = StreamRecord::Type::kSemantic;
        r.cls = static_cast<std::size_t>(c - 1);
      } else if (type == "property") {
        r.type = StreamRecord::Type::kProperty;
        r.y = j.at("value").get<double>();
        if (!std::isfinite(r.y)) throw ParseError(where + "non-finite property value");
      } else {
        throw ParseError(where + "unknown record type '" + type + "'");
      }
      if (r.t < last_t) throw ParseError(where + "timestamps are not sorted");
      last_t = r.t;
      out.records.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    }
  }
  return out;
}

}  // namespace spm
