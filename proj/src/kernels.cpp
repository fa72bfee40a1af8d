#include "spm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spm/errors.hpp"

namespace spm {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

void SparseKernelConfig::validate() const {
  if (!(D > 0.0) || !std::isfinite(D)) throw ArgumentError("kernel bandwidth D must be positive");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ArgumentError("kernel amplitude sigma must be positive");
  }
}

double kernel_eval(const SparseKernelConfig& cfg, double d) {
  if (!(d < cfg.D)) return 0.0;
  const double x = d / cfg.D;
  return cfg.sigma *
         ((2.0 + std::cos(kTwoPi * x)) / 3.0 * (1.0 - x) + std::sin(kTwoPi * x) / kTwoPi);
}

double kernel_derivative(const SparseKernelConfig& cfg, double d) {
  if (!(d < cfg.D)) return 0.0;
  const double x = d / cfg.D;
  const double dk_dx = -(kTwoPi / 3.0) * std::sin(kTwoPi * x) * (1.0 - x) +
                       (2.0 / 3.0) * (std::cos(kTwoPi * x) - 1.0);
  return cfg.sigma * dk_dx / cfg.D;
}

std::size_t SupportLayout::rows_s() const {
  const double span = s_max - s_min;
  const auto n = static_cast<std::size_t>(std::floor(span / spacing_s + 1e-9));
  if (closed) {
    // Skip a final row that would coincide with s_min after wrapping.
    return std::abs(n * spacing_s - span) < 1e-9 * std::max(1.0, span) ? n : n + 1;
  }
  return n + 1;
}

std::size_t SupportLayout::cols_e() const {
  return static_cast<std::size_t>(std::floor((e_max - e_min) / spacing_e + 1e-9)) + 1;
}

void SupportLayout::validate() const {
  if (!(s_max > s_min) || !(e_max >= e_min)) throw ArgumentError("empty support layout");
  if (!(spacing_s > 0.0) || !(spacing_e > 0.0)) {
    throw ArgumentError("support spacing must be positive");
  }
}

SupportGrid::SupportGrid(const SupportLayout& layout, double radius)
    : layout_(layout),
      s_lo_(layout.s_min),
      s_hi_(layout.s_max),
      e_lo_(layout.e_min),
      e_hi_(layout.e_max),
      closed_(layout.closed),
      radius_(radius) {
  layout.validate();
  const std::size_t rows = layout.rows_s();
  const std::size_t cols = layout.cols_e();
  points_.reserve(rows * cols);
  for (std::size_t k = 0; k < rows; ++k) {
    const double s = std::min(layout.s_min + k * layout.spacing_s, layout.s_max);
    for (std::size_t j = 0; j < cols; ++j) {
      points_.push_back({s, std::min(layout.e_min + j * layout.spacing_e, layout.e_max)});
    }
  }
  build_index();
}

SupportGrid::SupportGrid(std::vector<PathCoord> points, double s_min, double s_max, double e_min,
                         double e_max, bool closed, double radius)
    : points_(std::move(points)),
      s_lo_(s_min),
      s_hi_(s_max),
      e_lo_(e_min),
      e_hi_(e_max),
      closed_(closed),
      radius_(radius) {
  if (!(s_max > s_min) || !(e_max >= e_min)) throw ArgumentError("empty support region");
  for (const PathCoord& p : points_) {
    if (!(p.s >= s_min && p.s <= s_max && p.e >= e_min && p.e <= e_max)) {
      throw ArgumentError("support point outside the declared region");
    }
  }
  build_index();
}

void SupportGrid::build_index() {
  if (!(radius_ > 0.0)) throw ArgumentError("support radius must be positive");
  // Buckets are at least one radius wide (with a little slack against
  // rounding), so every neighbor sits in an adjacent bucket.
  const double cell = radius_ * (1.0 + 1e-9);
  const double span_s = s_hi_ - s_lo_;
  const double span_e = e_hi_ - e_lo_;
  ns_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(span_s / cell)));
  ne_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(span_e / cell)));
  ws_ = span_s / ns_;
  we_ = span_e > 0.0 ? span_e / ne_ : 1.0;
  buckets_.assign(ns_ * ne_, {});
  for (std::size_t l = 0; l < points_.size(); ++l) {
    const auto bs = std::min(ns_ - 1, static_cast<std::size_t>((points_[l].s - s_lo_) / ws_));
    const auto be = std::min(ne_ - 1, static_cast<std::size_t>((points_[l].e - e_lo_) / we_));
    buckets_[bs * ne_ + be].push_back(l);
  }
}

double SupportGrid::delta_s(double a, double b) const {
  const double d = a - b;
  return closed_ ? std::remainder(d, s_hi_ - s_lo_) : d;
}

double SupportGrid::distance(const PathCoord& a, const PathCoord& b) const {
  return std::hypot(delta_s(a.s, b.s), a.e - b.e);
}

std::vector<std::size_t> SupportGrid::neighbors(const PathCoord& v) const {
  std::vector<std::size_t> out;
  auto scan = [&](std::size_t bs, std::size_t be) {
    for (std::size_t l : buckets_[bs * ne_ + be]) {
      if (distance(v, points_[l]) < radius_) out.push_back(l);
    }
  };

  const long ie = static_cast<long>(std::floor((v.e - e_lo_) / we_));
  const long e_first = std::max(0L, ie - 1);
  const long e_last = std::min(static_cast<long>(ne_) - 1, ie + 1);
  if (e_first > e_last) return out;

  std::vector<std::size_t> s_buckets;
  if (closed_) {
    if (ns_ < 3) {
      for (std::size_t b = 0; b < ns_; ++b) s_buckets.push_back(b);
    } else {
      const double period = s_hi_ - s_lo_;
      double s = std::fmod(v.s - s_lo_, period);
      if (s < 0.0) s += period;
      const long is = std::min(static_cast<long>(ns_) - 1, static_cast<long>(s / ws_));
      for (long d = -1; d <= 1; ++d) {
        s_buckets.push_back(
            static_cast<std::size_t>((is + d + static_cast<long>(ns_)) % static_cast<long>(ns_)));
      }
    }
  } else {
    const long is = static_cast<long>(std::floor((v.s - s_lo_) / ws_));
    const long first = std::max(0L, is - 1);
    const long last = std::min(static_cast<long>(ns_) - 1, is + 1);
    for (long b = first; b <= last; ++b) s_buckets.push_back(static_cast<std::size_t>(b));
  }

  for (std::size_t bs : s_buckets) {
    for (long be = e_first; be <= e_last; ++be) scan(bs, static_cast<std::size_t>(be));
  }
  std::sort(out.begin(), out.end());
  return out;
}

InterpWeights interp_weights(const SparseKernelConfig& cfg, const SupportGrid& grid,
                             const PathCoord& v) {
  InterpWeights w;
  double total = 0.0;
  for (std::size_t l : grid.neighbors(v)) {
    const double k = kernel_eval(cfg, grid.distance(v, grid.point(l)));
    if (k > 0.0) {
      w.entries.emplace_back(l, k);
      total += k;
    }
  }
  if (w.entries.empty()) throw CoverageError("no support point within the kernel radius");
  for (auto& [l, k] : w.entries) k /= total;
  return w;
}

std::vector<WeightGradient> interp_weight_gradients(const SparseKernelConfig& cfg,
                                                    const SupportGrid& grid, const PathCoord& v) {
  std::vector<WeightGradient> out;
  double total = 0.0, total_ds = 0.0, total_de = 0.0;
  for (std::size_t l : grid.neighbors(v)) {
    const double ds = grid.delta_s(v.s, grid.point(l).s);
    const double de = v.e - grid.point(l).e;
    const double d = std::hypot(ds, de);
    const double k = kernel_eval(cfg, d);
    if (!(k > 0.0)) continue;
    // K'(0) = 0, so the direction of the gradient of d does not matter there.
    const double slope = d > 0.0 ? kernel_derivative(cfg, d) / d : 0.0;
    out.push_back({l, k, slope * ds, slope * de});
    total += k;
    total_ds += slope * ds;
    total_de += slope * de;
  }
  if (out.empty()) throw CoverageError("no support point within the kernel radius");
  for (WeightGradient& g : out) {
    const double k = g.weight;
    g.weight = k / total;
    g.d_ds = (g.d_ds * total - k * total_ds) / (total * total);
    g.d_de = (g.d_de * total - k * total_de) / (total * total);
  }
  return out;
}

}  // namespace spm
