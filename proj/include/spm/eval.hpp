#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "spm/baselines.hpp"
#include "spm/geometry.hpp"
#include "spm/kernels.hpp"
#include "spm/simulator.hpp"
#include "spm/spm.hpp"

namespace spm {

// Closed-form KL(N(m1, v1) || N(m2, v2)). Throws EvaluationError for a
// non-positive variance.
double gaussian_kl(double m1, double v1, double m2, double v2);

// Restricts an evaluation to support points with s in [s_min, s_max].
struct EvalRegion {
  double s_min = -1e300;
  double s_max = 1e300;
};

// Mean over support points of the KL between the Gaussians carrying the
// predictive moments of the true and the estimated map.
double kl_moments(const SpmParams& truth, const SpmParams& est, const SupportGrid& grid,
                  const SparseKernelConfig& kernel, const PredictConfig& predict = {},
                  const EvalRegion& region = {});

// Alternative moment definition for the optional metric: the expected
// mean and the expected within-likelihood variance of p(y | theta), which
// leaves out the uncertainty about the class means.
enum class MomentDefinition { kPredictive, kLikelihood };

PropertyMoments likelihood_moments(const SpmParams& P, const PathCoord& v, const SupportGrid& grid,
                                   const SparseKernelConfig& kernel, const PredictConfig& cfg = {});

double kl_predictive_optional(const SpmParams& truth, const SpmParams& est, const SupportGrid& grid,
                              const SparseKernelConfig& kernel,
                              MomentDefinition def = MomentDefinition::kLikelihood,
                              const PredictConfig& predict = {}, const EvalRegion& region = {});

// Shared world description for both experiments.
struct WorldConfig {
  SupportLayout layout;  // s_max <= 0 means "to the end of the path"
  SparseKernelConfig kernel;
  PredictConfig predict;
  double e_max = 6.0;
  TrueMapConfig truth;
  CameraConfig camera;
  SensorConfig sensors;
  double speed = 15.0;
  LateralProfile lateral{0.0, 3.5, 60.0};
  double prior_perturbation = 0.9;
  std::vector<double> prior_dirichlet = {1.0, 5.0, 1.0};
};

struct ConvergenceConfig {
  WorldConfig world;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  double distance = 600.0;     // driven from s = 0
  double record_every = 10.0;  // m
  bool apply_measurements = true;
};

struct KlTrace {
  std::uint64_t seed = 0;
  std::vector<double> s;
  std::vector<double> kl;
};

struct KlSummary {
  std::vector<double> s;
  std::vector<double> mean;
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;
};

struct ConvergenceResult {
  std::vector<KlTrace> traces;
  KlSummary summary;
};

// Cross-seed mean with a normal-approximation 95% interval.
KlSummary summarize(const std::vector<KlTrace>& traces);

// Means of the summary trace over consecutive windows of the given width.
std::vector<double> window_means(const KlSummary& summary, double width);

ConvergenceResult run_convergence_experiment(const PathSpline& spline, const ConvergenceConfig& cfg,
                                             std::size_t jobs = 1);

struct HorizonConfig {
  WorldConfig world;
  std::uint64_t seed = 0;
  std::size_t points = 80;
  double amplitude = 3.5;
  double angular_rate = 0.3141592653589793;  // rad per meter of s
  double lead = 400.0;                       // m driven before s0
  // s0 is the first candidate (every `s0_step` m) whose horizon crosses at
  // least `min_wet_points` points that are mostly water; nullopt uses the
  // first candidate unconditionally.
  std::optional<std::size_t> min_wet_points = 5;
  double s0_step = 10.0;
  KfState kf;
  double gp_window = 100.0;
  std::size_t gp_max_points = 400;
};

struct HorizonRow {
  std::size_t n = 0;
  double s = 0.0;
  double e = 0.0;
  double truth = 0.0;
  double spm = 0.0;
  double kf = 0.0;
  double gp = 0.0;
  std::vector<double> class_likelihoods;
};

struct HorizonResult {
  double s0 = 0.0;
  std::vector<HorizonRow> rows;
  double rmse_spm = 0.0;
  double rmse_kf = 0.0;
  double rmse_gp = 0.0;
  bool gp_fallback = false;  // too few samples: GP predicted its prior mean
};

// Horizon points (s0 + n, amplitude * cos(rate * n)), n = 0..points-1.
std::vector<PathCoord> horizon_points(double s0, std::size_t points, double amplitude,
                                      double angular_rate);

HorizonResult run_horizon_experiment(const PathSpline& spline, const HorizonConfig& cfg);

// CSV writers (header row, LF line endings).
void write_kl_trace_csv(std::ostream& os, const std::vector<KlTrace>& traces);
void write_kl_summary_csv(std::ostream& os, const KlSummary& summary);
void write_horizon_csv(std::ostream& os, const HorizonResult& result);
void write_class_likelihoods_csv(std::ostream& os, const HorizonResult& result);

}  // namespace spm
