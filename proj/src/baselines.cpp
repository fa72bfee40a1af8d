#include "spm/baselines.hpp"

#include <gsl/gsl_multimin.h>

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "spm/errors.hpp"

namespace spm {

namespace {

constexpr double kJitter = 1e-8;

double rbf(const GpHyper& h, double ds, double de) {
  return h.signal_var * std::exp(-0.5 * (ds * ds / (h.length_s * h.length_s) +
                                         de * de / (h.length_e * h.length_e)));
}

Eigen::MatrixXd train_cov(const std::vector<GpSample>& data, const GpHyper& h) {
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      K(i, j) = K(j, i) = rbf(h, data[i].s - data[j].s, data[i].e - data[j].e);
    }
    K(i, i) += h.noise_var + kJitter;
  }
  return K;
}

Eigen::VectorXd centered(const std::vector<GpSample>& data, double mean) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) y(static_cast<Eigen::Index>(i)) = data[i].y - mean;
  return y;
}

struct Objective {
  const std::vector<GpSample>* data;
  double mean;
  double floor;
};

GpHyper from_log(const gsl_vector* x, double floor) {
  GpHyper h;
  h.length_s = std::exp(gsl_vector_get(x, 0));
  h.length_e = std::exp(gsl_vector_get(x, 1));
  h.signal_var = std::exp(std::max(gsl_vector_get(x, 2), floor));
  h.noise_var = std::exp(std::max(gsl_vector_get(x, 3), floor));
  return h;
}

double objective(const gsl_vector* x, void* params) {
  const auto* obj = static_cast<const Objective*>(params);
  for (std::size_t i = 0; i < 4; ++i) {
    if (!std::isfinite(gsl_vector_get(x, i)) || std::abs(gsl_vector_get(x, i)) > 50.0) {
      return std::numeric_limits<double>::infinity();
    }
  }
  // The floor is a soft wall: values below it are clamped and penalized so
  // the simplex does not wander off into a flat region.
  double penalty = 0.0;
  for (std::size_t i = 2; i < 4; ++i) {
    const double under = obj->floor - gsl_vector_get(x, i);
    if (under > 0.0) penalty += under * under;
  }
  try {
    return gp_neg_log_marginal(*obj->data, from_log(x, obj->floor), obj->mean) + penalty;
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

void KfState::validate() const {
  if (!(variance > 0.0) || !(q > 0.0) || !(r > 0.0)) {
    throw ArgumentError("Kalman filter variances must be positive");
  }
}

KfState kf_update(const KfState& state, double y) {
  KfState next = state;
  const double prior_var = state.variance + state.q;
  const double gain = prior_var / (prior_var + state.r);
  next.mean = state.mean + gain * (y - state.mean);
  next.variance = (1.0 - gain) * prior_var;
  return next;
}

HorizonPrediction kf_predict_horizon(const KfState& state, std::size_t n) {
  HorizonPrediction out;
  out.mean.assign(n, state.mean);
  out.variance.resize(n);
  for (std::size_t k = 0; k < n; ++k) out.variance[k] = state.variance + (k + 1) * state.q;
  return out;
}

void GpHyper::validate() const {
  if (!(length_s > 0.0) || !(length_e > 0.0) || !(signal_var > 0.0) || !(noise_var > 0.0)) {
    throw ArgumentError("GP hyperparameters must be positive");
  }
}

GpWindow::GpWindow(double span, std::size_t max_points)
    : span_(span), max_points_(max_points), s0_(-std::numeric_limits<double>::infinity()) {
  if (!(span > 0.0)) throw ArgumentError("GP window span must be positive");
  if (max_points < 5) throw ArgumentError("GP window must hold at least 5 points");
}

void GpWindow::insert(double y, double s, double e) {
  if (!std::isfinite(y) || !std::isfinite(s) || !std::isfinite(e)) {
    throw ArgumentError("non-finite GP sample");
  }
  data_.push_back({y, s, e});
  advance(std::max(s0_, s));
}

void GpWindow::advance(double s0) {
  s0_ = std::max(s0_, s0);
  // Arrival order is s order for a forward-driving vehicle, but a full sweep
  // keeps the bound exact regardless.
  std::erase_if(data_, [&](const GpSample& d) { return !(d.s > s0_ - span_); });
}

std::vector<GpSample> GpWindow::training_set() const {
  if (data_.size() <= max_points_) return {data_.begin(), data_.end()};
  std::vector<GpSample> out;
  out.reserve(max_points_);
  const double stride = static_cast<double>(data_.size() - 1) / (max_points_ - 1);
  for (std::size_t k = 0; k < max_points_; ++k) {
    out.push_back(data_[static_cast<std::size_t>(std::llround(k * stride))]);
  }
  return out;
}

double gp_neg_log_marginal(const std::vector<GpSample>& data, const GpHyper& hyper, double mean) {
  const Eigen::LLT<Eigen::MatrixXd> llt(train_cov(data, hyper));
  if (llt.info() != Eigen::Success) throw NumericalError("GP covariance is not positive definite");
  const Eigen::VectorXd y = centered(data, mean);
  const Eigen::VectorXd alpha = llt.solve(y);
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) log_det += std::log(llt.matrixL()(i, i));
  return 0.5 * y.dot(alpha) + log_det + 0.5 * y.size() * std::log(2.0 * std::numbers::pi);
}

GpFit gp_fit(const GpWindow& window, const GpFitOptions& opts) {
  const std::vector<GpSample> data = window.training_set();
  if (data.size() < 5) throw FitError("GP window holds fewer than 5 samples");

  double mean = 0.0;
  for (const GpSample& d : data) mean += d.y;
  mean /= data.size();
  double var = 0.0;
  for (const GpSample& d : data) var += (d.y - mean) * (d.y - mean);
  var = std::max(var / data.size(), 1e-6);

  Objective obj{&data, mean, opts.min_log_variance};
  gsl_multimin_function fn{&objective, 4, &obj};
  const std::array<std::array<double, 4>, 3> starts = {{
      {std::log(5.0), std::log(1.0), std::log(var), std::log(0.1 * var)},
      {std::log(20.0), std::log(2.0), std::log(var), std::log(0.1 * var)},
      {std::log(60.0), std::log(4.0), std::log(var), std::log(0.5 * var)},
  }};

  GpFit best;
  best.neg_log_marginal = std::numeric_limits<double>::infinity();
  gsl_vector* x = gsl_vector_alloc(4);
  gsl_vector* step = gsl_vector_alloc(4);
  gsl_vector_set_all(step, 1.0);
  gsl_multimin_fminimizer* mm =
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 4);
  for (std::size_t k = 0; k < std::min(opts.starts, starts.size()); ++k) {
    for (std::size_t i = 0; i < 4; ++i) gsl_vector_set(x, i, starts[k][i]);
    gsl_multimin_fminimizer_set(mm, &fn, x, step);
    std::vector<double> trace;
    for (std::size_t it = 0; it < opts.max_iterations; ++it) {
      if (gsl_multimin_fminimizer_iterate(mm) != GSL_SUCCESS) break;
      trace.push_back(gsl_multimin_fminimizer_minimum(mm));
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(mm), 1e-6) == GSL_SUCCESS) break;
    }
    const double f = gsl_multimin_fminimizer_minimum(mm);
    if (f < best.neg_log_marginal) {
      best.neg_log_marginal = f;
      best.hyper = from_log(gsl_multimin_fminimizer_x(mm), opts.min_log_variance);
      best.trace = std::move(trace);
    }
  }
  gsl_multimin_fminimizer_free(mm);
  gsl_vector_free(step);
  gsl_vector_free(x);
  if (!std::isfinite(best.neg_log_marginal)) throw FitError("GP marginal likelihood search failed");
  best.mean = mean;
  return best;
}

std::vector<double> gp_predict(const std::vector<GpSample>& data, const GpHyper& hyper, double mean,
                               const std::vector<PathCoord>& queries) {
  hyper.validate();
  std::vector<double> out(queries.size(), mean);
  if (data.empty()) return out;
  const Eigen::LLT<Eigen::MatrixXd> llt(train_cov(data, hyper));
  if (llt.info() != Eigen::Success) throw NumericalError("GP covariance is not positive definite");
  const Eigen::VectorXd alpha = llt.solve(centered(data, mean));
  for (std::size_t q = 0; q < queries.size(); ++q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      acc += rbf(hyper, queries[q].s - data[i].s, queries[q].e - data[i].e) *
             alpha(static_cast<Eigen::Index>(i));
    }
    out[q] += acc;
  }
  return out;
}

std::vector<double> gp_predict(const GpWindow& window, const GpFit& fit,
                               const std::vector<PathCoord>& queries) {
  return gp_predict(window.training_set(), fit.hyper, fit.mean, queries);
}

}  // namespace spm
