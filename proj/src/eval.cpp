#include "spm/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <memory>
#include <mutex>
#include <ostream>
#include <thread>

#include "spm/errors.hpp"

namespace spm {

double gaussian_kl(double m1, double v1, double m2, double v2) {
  if (!(v1 > 0.0) || !(v2 > 0.0) || !std::isfinite(v1) || !std::isfinite(v2)) {
    throw EvaluationError("KL needs positive, finite variances");
  }
  const double d = m1 - m2;
  return 0.5 * std::log(v2 / v1) + (v1 + d * d) / (2.0 * v2) - 0.5;
}

namespace {

bool in_region(const PathCoord& v, const EvalRegion& region) {
  return v.s >= region.s_min && v.s <= region.s_max;
}

template <typename Moments>
double mean_kl(const SupportGrid& grid, const EvalRegion& region, Moments&& moments_pair) {
  double total = 0.0;
  std::size_t n = 0;
  for (const PathCoord& v : grid.points()) {
    if (!in_region(v, region)) continue;
    const auto [a, b] = moments_pair(v);
    total += gaussian_kl(a.mean, a.variance, b.mean, b.variance);
    ++n;
  }
  if (n == 0) throw EvaluationError("no support points in the evaluation region");
  return total / n;
}

}  // namespace

double kl_moments(const SpmParams& truth, const SpmParams& est, const SupportGrid& grid,
                  const SparseKernelConfig& kernel, const PredictConfig& predict,
                  const EvalRegion& region) {
  if (truth.L() != grid.size() || est.L() != grid.size() || truth.K() != est.K()) {
    throw ArgumentError("maps must share the support layout");
  }
  return mean_kl(grid, region, [&](const PathCoord& v) {
    return std::pair{predict_moments(truth, v, grid, kernel, predict),
                     predict_moments(est, v, grid, kernel, predict)};
  });
}

PropertyMoments likelihood_moments(const SpmParams& P, const PathCoord& v, const SupportGrid& grid,
                                   const SparseKernelConfig& kernel, const PredictConfig& cfg) {
  const InterpWeights w = interp_weights(kernel, grid, v);
  double mean = 0.0, second = 0.0;
  for (const auto& [l, weight] : w.entries) {
    const auto row = P.alpha_row(l);
    double a0 = 0.0;
    for (double a : row) a0 += a;
    for (std::size_t i = 0; i < P.K(); ++i) {
      const NormalGamma& ng = P.cls(i);
      const double noise = ng.alpha > 1.0 ? ng.beta / (ng.alpha - 1.0) : cfg.variance_cap;
      mean += weight * row[i] / a0 * ng.mu;
      second += weight * row[i] / a0 * (noise + ng.mu * ng.mu);
    }
  }
  return {mean, second - mean * mean};
}

double kl_predictive_optional(const SpmParams& truth, const SpmParams& est, const SupportGrid& grid,
                              const SparseKernelConfig& kernel, MomentDefinition def,
                              const PredictConfig& predict, const EvalRegion& region) {
  if (def == MomentDefinition::kPredictive) {
    return kl_moments(truth, est, grid, kernel, predict, region);
  }
  if (truth.L() != grid.size() || est.L() != grid.size() || truth.K() != est.K()) {
    throw ArgumentError("maps must share the support layout");
  }
  return mean_kl(grid, region, [&](const PathCoord& v) {
    return std::pair{likelihood_moments(truth, v, grid, kernel, predict),
                     likelihood_moments(est, v, grid, kernel, predict)};
  });
}

KlSummary summarize(const std::vector<KlTrace>& traces) {
  KlSummary out;
  if (traces.empty()) return out;
  out.s = traces.front().s;
  const std::size_t n = traces.size();
  for (std::size_t k = 0; k < out.s.size(); ++k) {
    double sum = 0.0;
    for (const KlTrace& t : traces) {
      if (t.kl.size() != out.s.size()) throw EvaluationError("traces have different lengths");
      sum += t.kl[k];
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (const KlTrace& t : traces) ss += (t.kl[k] - mean) * (t.kl[k] - mean);
    const double half = n > 1 ? 1.959963984540054 * std::sqrt(ss / (n - 1) / n) : 0.0;
    out.mean.push_back(mean);
    out.ci_lo.push_back(mean - half);
    out.ci_hi.push_back(mean + half);
  }
  return out;
}

std::vector<double> window_means(const KlSummary& summary, double width) {
  std::vector<double> out;
  if (summary.s.empty()) return out;
  const double start = summary.s.front();
  std::vector<double> sum, count;
  for (std::size_t k = 0; k < summary.s.size(); ++k) {
    auto b = static_cast<std::size_t>(std::floor((summary.s[k] - start) / width + 1e-9));
    // The final mark closes the last window rather than opening a new one.
    if (k + 1 == summary.s.size() && b > 0 && summary.s[k] - start == b * width) --b;
    if (b >= sum.size()) {
      sum.resize(b + 1, 0.0);
      count.resize(b + 1, 0.0);
    }
    sum[b] += summary.mean[k];
    count[b] += 1.0;
  }
  for (std::size_t b = 0; b < sum.size(); ++b) {
    if (count[b] > 0.0) out.push_back(sum[b] / count[b]);
  }
  return out;
}

namespace {

struct World {
  std::shared_ptr<SupportGrid> grid;
  TrueMap truth;
  SpmParams prior;
};

World make_world(const PathSpline& spline, const WorldConfig& cfg, std::uint64_t seed) {
  SupportLayout layout = cfg.layout;
  if (!(layout.s_max > layout.s_min)) layout.s_max = spline.length();
  layout.closed = spline.closed();
  World w;
  w.grid = std::make_shared<SupportGrid>(layout, cfg.kernel.D);
  w.truth = generate_true_map(seed, *w.grid, cfg.truth);
  w.prior = perturbed_prior(w.truth, cfg.prior_perturbation, seed, cfg.prior_dirichlet);
  return w;
}

MeasurementStream drive(const PathSpline& spline, const WorldConfig& cfg, const World& w,
                        double s_start, double distance, std::uint64_t seed) {
  TrajectoryConfig tc;
  tc.speed = cfg.speed;
  tc.duration = distance / cfg.speed;
  tc.s_start = s_start;
  tc.lateral = cfg.lateral;
  const Trajectory tr(spline, tc, cfg.e_max);
  return synthesize_measurements(w.truth, tr, cfg.camera, cfg.sensors,
                                 {spline, *w.grid, cfg.kernel, cfg.e_max}, seed);
}

void apply(SemanticPropertyMap& map, const StreamRecord& r) {
  if (r.type == StreamRecord::Type::kSemantic) {
    map.add_semantic({r.cls, r.v});
  } else {
    map.add_property({r.y, r.v});
  }
}

KlTrace convergence_trace(const PathSpline& spline, const ConvergenceConfig& cfg,
                          std::uint64_t seed) {
  const World w = make_world(spline, cfg.world, seed);
  const EvalRegion region{0.0, cfg.distance};
  SemanticPropertyMap map(w.prior, w.grid, {cfg.world.kernel, cfg.world.predict});
  auto kl_now = [&] {
    return kl_moments(w.truth.params, map.snapshot().params, *w.grid, cfg.world.kernel,
                      cfg.world.predict, region);
  };

  KlTrace trace;
  trace.seed = seed;
  double next = 0.0;
  auto record_until = [&](double traveled) {
    while (next <= traveled + 1e-9 && next <= cfg.distance + 1e-9) {
      trace.s.push_back(next);
      trace.kl.push_back(kl_now());
      next += cfg.record_every;
    }
  };
  if (cfg.apply_measurements) {
    const MeasurementStream stream = drive(spline, cfg.world, w, 0.0, cfg.distance, seed);
    for (const StreamRecord& r : stream.records) {
      // Marks are taken before the measurements made at that distance.
      record_until(cfg.world.speed * r.t - 1e-9);
      apply(map, r);
    }
  }
  record_until(cfg.distance);
  return trace;
}

// Runs f(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
template <typename F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

ConvergenceResult run_convergence_experiment(const PathSpline& spline, const ConvergenceConfig& cfg,
                                             std::size_t jobs) {
  if (!(cfg.distance > 0.0) || !(cfg.record_every > 0.0)) {
    throw ArgumentError("convergence distance and recording interval must be positive");
  }
  ConvergenceResult out;
  out.traces.resize(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), jobs, [&](std::size_t i) {
    out.traces[i] = convergence_trace(spline, cfg, cfg.seeds[i]);
  });
  out.summary = summarize(out.traces);
  return out;
}

std::vector<PathCoord> horizon_points(double s0, std::size_t points, double amplitude,
                                      double angular_rate) {
  std::vector<PathCoord> out;
  out.reserve(points);
  for (std::size_t n = 0; n < points; ++n) {
    const double ds = static_cast<double>(n);
    out.push_back({s0 + ds, amplitude * std::cos(angular_rate * ds)});
  }
  return out;
}

HorizonResult run_horizon_experiment(const PathSpline& spline, const HorizonConfig& cfg) {
  if (cfg.amplitude > cfg.world.e_max) throw ArgumentError("horizon leaves the corridor");
  if (cfg.points == 0) throw ArgumentError("horizon needs at least one point");
  const World w = make_world(spline, cfg.world, cfg.seed);
  const SparseKernelConfig& kernel = cfg.world.kernel;

  // Choose s0 so that the drive and the horizon both fit on the path.
  const double last = spline.length() - static_cast<double>(cfg.points) - kernel.D;
  double s0 = cfg.lead;
  bool found = !cfg.min_wet_points.has_value();
  for (double cand = cfg.lead; !found && cand <= last; cand += cfg.s0_step) {
    std::size_t wet = 0;
    for (const PathCoord& v : horizon_points(cand, cfg.points, cfg.amplitude, cfg.angular_rate)) {
      if (true_class_probabilities(w.truth, *w.grid, kernel, v)[kWater] > 0.5) ++wet;
    }
    if (wet >= *cfg.min_wet_points) {
      s0 = cand;
      found = true;
    }
  }
  if (!found) throw EvaluationError("no horizon on this map crosses a water patch");
  if (s0 > last) throw ArgumentError("path too short for the horizon experiment");

  const MeasurementStream stream = drive(spline, cfg.world, w, s0 - cfg.lead, cfg.lead, cfg.seed);
  SemanticPropertyMap map(w.prior, w.grid, {kernel, cfg.world.predict});
  KfState kf = cfg.kf;
  kf.validate();
  bool kf_started = false;
  GpWindow window(cfg.gp_window, cfg.gp_max_points);
  for (const StreamRecord& r : stream.records) {
    apply(map, r);
    if (r.type != StreamRecord::Type::kProperty) continue;
    if (!kf_started) {
      // The filter starts from its first measurement.
      kf.mean = r.y;
      kf.variance = kf.r;
      kf_started = true;
    } else {
      kf = kf_update(kf, r.y);
    }
    window.insert(r.y, r.v.s, r.v.e);
  }
  window.advance(s0);

  HorizonResult out;
  out.s0 = s0;
  const auto pts = horizon_points(s0, cfg.points, cfg.amplitude, cfg.angular_rate);
  const HorizonPrediction kf_pred = kf_predict_horizon(kf, pts.size());
  std::vector<double> gp_pred;
  try {
    gp_pred = gp_predict(window, gp_fit(window), pts);
  } catch (const FitError&) {
    out.gp_fallback = true;
    gp_pred.assign(pts.size(), kf_started ? kf.mean : 0.0);
  }
  const SpmParams est = map.snapshot().params;
  double se_spm = 0.0, se_kf = 0.0, se_gp = 0.0;
  for (std::size_t n = 0; n < pts.size(); ++n) {
    HorizonRow row;
    row.n = n;
    row.s = pts[n].s;
    row.e = pts[n].e;
    row.truth = true_property_mean(w.truth, *w.grid, kernel, pts[n]);
    row.spm = predict_moments(est, pts[n], *w.grid, kernel, cfg.world.predict).mean;
    row.kf = kf_pred.mean[n];
    row.gp = gp_pred[n];
    row.class_likelihoods = class_likelihoods(est, pts[n], *w.grid, kernel);
    se_spm += (row.spm - row.truth) * (row.spm - row.truth);
    se_kf += (row.kf - row.truth) * (row.kf - row.truth);
    se_gp += (row.gp - row.truth) * (row.gp - row.truth);
    out.rows.push_back(std::move(row));
  }
  const double n = static_cast<double>(pts.size());
  out.rmse_spm = std::sqrt(se_spm / n);
  out.rmse_kf = std::sqrt(se_kf / n);
  out.rmse_gp = std::sqrt(se_gp / n);
  return out;
}

namespace {

void put(std::ostream& os, double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  os << buf;
}

}  // namespace

void write_kl_trace_csv(std::ostream& os, const std::vector<KlTrace>& traces) {
  os << "seed,s,kl\n";
  for (const KlTrace& t : traces) {
    for (std::size_t k = 0; k < t.s.size(); ++k) {
      os << t.seed << ',';
      put(os, t.s[k]);
      os << ',';
      put(os, t.kl[k]);
      os << '\n';
    }
  }
}

void write_kl_summary_csv(std::ostream& os, const KlSummary& summary) {
  os << "s,mean,ci_lo,ci_hi\n";
  for (std::size_t k = 0; k < summary.s.size(); ++k) {
    for (double x : {summary.s[k], summary.mean[k], summary.ci_lo[k]}) {
      put(os, x);
      os << ',';
    }
    put(os, summary.ci_hi[k]);
    os << '\n';
  }
}

void write_horizon_csv(std::ostream& os, const HorizonResult& result) {
  os << "n,s,e,true,spm,kf,gp\n";
  for (const HorizonRow& r : result.rows) {
    os << r.n;
    for (double x : {r.s, r.e, r.truth, r.spm, r.kf, r.gp}) {
      os << ',';
      put(os, x);
    }
    os << '\n';
  }
}

void write_class_likelihoods_csv(std::ostream& os, const HorizonResult& result) {
  os << "s,e";
  const std::size_t K = result.rows.empty() ? 0 : result.rows.front().class_likelihoods.size();
  for (std::size_t i = 1; i <= K; ++i) os << ",p" << i;
  os << '\n';
  for (const HorizonRow& r : result.rows) {
    put(os, r.s);
    os << ',';
    put(os, r.e);
    for (double p : r.class_likelihoods) {
      os << ',';
      put(os, p);
    }
    os << '\n';
  }
}

}  // namespace spm
