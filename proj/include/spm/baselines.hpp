#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include "spm/geometry.hpp"

namespace spm {

// Scalar random-walk Kalman filter with the property as its state.
struct KfState {
  double mean = 0.0;
  double variance = 1.0;
  double q = 1e-5;         // process noise per tick
  double r = 0.02 * 0.02;  // measurement noise

  void validate() const;
};

KfState kf_update(const KfState& state, double y);

struct HorizonPrediction {
  std::vector<double> mean;
  std::vector<double> variance;
};

// n-step-ahead predictions: the mean stays put and the variance grows by q
// per step.
HorizonPrediction kf_predict_horizon(const KfState& state, std::size_t n);

struct GpSample {
  double y = 0.0;
  double s = 0.0;
  double e = 0.0;
};

struct GpHyper {
  double length_s = 20.0;
  double length_e = 2.0;
  double signal_var = 0.01;
  double noise_var = 1e-3;

  void validate() const;
};

// Property samples from the trailing stretch of road, s0 - span < s < s0,
// where s0 is the most recent arc length seen.
class GpWindow {
 public:
  explicit GpWindow(double span = 100.0, std::size_t max_points = 400);

  void insert(double y, double s, double e);
  // Evicts samples that fell out of the window for the current position.
  void advance(double s0);

  std::size_t size() const { return data_.size(); }
  double span() const { return span_; }
  double head() const { return s0_; }
  const std::deque<GpSample>& data() const { return data_; }
  // At most max_points samples, uniformly thinned in arrival order.
  std::vector<GpSample> training_set() const;

 private:
  double span_;
  std::size_t max_points_;
  double s0_;
  std::deque<GpSample> data_;
};

struct GpFitOptions {
  std::size_t starts = 3;
  std::size_t max_iterations = 200;
  double min_log_variance = -23.0;  // floor keeping both variances positive
};

struct GpFit {
  GpHyper hyper;
  double mean = 0.0;  // constant prior mean: the sample mean of the window
  double neg_log_marginal = 0.0;
  // Best objective value after each simplex iteration of the winning start.
  std::vector<double> trace;
};

double gp_neg_log_marginal(const std::vector<GpSample>& data, const GpHyper& hyper, double mean);

// Maximizes the log marginal likelihood over log-hyperparameters with a
// multi-start Nelder-Mead search. Throws FitError below 5 samples.
GpFit gp_fit(const GpWindow& window, const GpFitOptions& opts = {});

std::vector<double> gp_predict(const std::vector<GpSample>& data, const GpHyper& hyper, double mean,
                               const std::vector<PathCoord>& queries);
std::vector<double> gp_predict(const GpWindow& window, const GpFit& fit,
                               const std::vector<PathCoord>& queries);

}  // namespace spm
