#include "spm/spm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>

#include "spm/errors.hpp"

namespace spm {

namespace {

constexpr double kCollapsed = 1.0 - 1e-12;
constexpr double kUntouched = 1e-12;
constexpr double kJensenGap = 1e-14;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

bool admissible(const NormalGamma& ng) {
  return std::isfinite(ng.mu) && ng.lambda >= 0.0 && std::isfinite(ng.lambda) && ng.alpha > 0.0 &&
         std::isfinite(ng.alpha) && ng.beta > 0.0 && std::isfinite(ng.beta);
}

}  // namespace

SpmParams::SpmParams(std::size_t K, std::size_t L, double a0, NormalGamma cls)
    : K_(K), L_(L), dirichlet_(K * L, a0), classes_(K, cls) {
  validate();
}

SpmParams::SpmParams(std::size_t K, std::size_t L, std::vector<double> dirichlet,
                     std::vector<NormalGamma> classes)
    : K_(K), L_(L), dirichlet_(std::move(dirichlet)), classes_(std::move(classes)) {
  if (dirichlet_.size() != K * L) throw ArgumentError("Dirichlet matrix must be L x K");
  if (classes_.size() != K) throw ArgumentError("class table must have K rows");
  validate();
}

void SpmParams::set_row(std::size_t l, std::span<const double> row) {
  if (row.size() != K_) throw ArgumentError("Dirichlet row has the wrong length");
  std::copy(row.begin(), row.end(), dirichlet_.begin() + static_cast<std::ptrdiff_t>(l * K_));
}

void SpmParams::validate() const {
  if (K_ == 0) throw ArgumentError("map needs at least one class");
  for (double a : dirichlet_) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw ArgumentError("Dirichlet concentrations must be positive and finite");
    }
  }
  for (const NormalGamma& ng : classes_) {
    if (!admissible(ng)) throw ArgumentError("invalid normal-gamma parameters");
  }
}

bool SpmParams::all_finite() const {
  for (double a : dirichlet_) {
    if (!std::isfinite(a)) return false;
  }
  for (const NormalGamma& ng : classes_) {
    if (!std::isfinite(ng.mu) || !std::isfinite(ng.lambda) || !std::isfinite(ng.alpha) ||
        !std::isfinite(ng.beta)) {
      return false;
    }
  }
  return true;
}

void apply_semantic_update(SpmParams& P, std::size_t cls, const InterpWeights& w) {
  if (cls >= P.K()) throw ArgumentError("class index out of range");
  for (const auto& [l, weight] : w.entries) P.a(l, cls) += weight;
}

SpmParams semantic_update(const SpmParams& P, const SemanticMeasurement& m,
                          const InterpWeights& w) {
  SpmParams out = P;
  apply_semantic_update(out, m.cls, w);
  return out;
}

NormalGamma conjugate_update(const NormalGamma& prior, double y) {
  const double r = y - prior.mu;
  NormalGamma post;
  post.mu = (prior.lambda * prior.mu + y) / (prior.lambda + 1.0);
  post.lambda = prior.lambda + 1.0;
  post.alpha = prior.alpha + 0.5;
  post.beta = prior.beta + prior.lambda * r * r / (2.0 * (1.0 + prior.lambda));
  return post;
}

double log_evidence(const NormalGamma& prior, double y) {
  const NormalGamma post = conjugate_update(prior, y);
  double out = -kHalfLog2Pi + std::lgamma(post.alpha) - std::lgamma(prior.alpha) +
               prior.alpha * std::log(prior.beta) - post.alpha * std::log(post.beta);
  // With lambda = 0 the prior on m is flat and the sqrt(lambda / lambda*)
  // factor is dropped, so the evidence stays a proper weight.
  if (prior.lambda > 0.0) out += 0.5 * (std::log(prior.lambda) - std::log(post.lambda));
  return out;
}

double PosteriorMixture::responsibility(std::size_t k) const {
  return std::exp(components[k].log_weight - log_normalizer);
}

PosteriorMixture property_posterior(const SpmParams& P, double y, const InterpWeights& w) {
  if (!std::isfinite(y)) throw ArgumentError("property measurement must be finite");
  if (w.empty()) throw CoverageError("property measurement without kernel coverage");
  const std::size_t K = P.K();
  PosteriorMixture pm;
  pm.updated.resize(K);
  pm.log_evidence.resize(K);
  for (std::size_t j = 0; j < K; ++j) {
    pm.updated[j] = conjugate_update(P.cls(j), y);
    pm.log_evidence[j] = log_evidence(P.cls(j), y);
  }
  pm.components.reserve(w.size() * K);
  double max_lw = -std::numeric_limits<double>::infinity();
  for (const auto& [l, weight] : w.entries) {
    if (!(weight > 0.0)) continue;
    const auto row = P.alpha_row(l);
    double a0 = 0.0;
    for (double a : row) a0 += a;
    const double base = std::log(weight) - std::log(a0);
    for (std::size_t j = 0; j < K; ++j) {
      const double lw = base + std::log(row[j]) + pm.log_evidence[j];
      pm.components.push_back({l, j, lw});
      max_lw = std::max(max_lw, lw);
    }
  }
  if (pm.components.empty() || !std::isfinite(max_lw)) {
    throw NumericalError("posterior mixture has no finite component weight");
  }
  double sum = 0.0;
  for (const PosteriorComponent& c : pm.components) sum += std::exp(c.log_weight - max_lw);
  pm.log_normalizer = max_lw + std::log(sum);
  return pm;
}

ClassMoments normal_gamma_moments(const NormalGamma& ng) {
  ClassMoments g;
  g.m = ng.mu;
  g.tau = ng.alpha / ng.beta;
  g.tau2 = ng.alpha * (ng.alpha + 1.0) / (ng.beta * ng.beta);
  g.m2tau = (ng.lambda > 0.0 ? 1.0 / ng.lambda : std::numeric_limits<double>::infinity()) +
            ng.mu * ng.mu * ng.alpha / ng.beta;
  g.m2 = ng.alpha > 1.0 && ng.lambda > 0.0
             ? ng.mu * ng.mu + ng.beta / (ng.lambda * (ng.alpha - 1.0))
             : std::numeric_limits<double>::infinity();
  return g;
}

void dirichlet_moments(std::span<const double> a, std::vector<double>& mean,
                       std::vector<double>& second) {
  double a0 = 0.0;
  for (double x : a) a0 += x;
  mean.resize(a.size());
  second.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    mean[i] = a[i] / a0;
    second[i] = a[i] * (a[i] + 1.0) / (a0 * (a0 + 1.0));
  }
}

MomentSet posterior_moments(const PosteriorMixture& pm, const SpmParams& P) {
  const std::size_t K = P.K();
  MomentSet g;

  // Responsibilities per class and per (support, class).
  std::vector<double> class_resp(K, 0.0);
  std::vector<std::size_t> supports;
  for (const PosteriorComponent& c : pm.components) {
    if (supports.empty() || supports.back() != c.support) supports.push_back(c.support);
  }
  std::vector<std::vector<double>> support_resp(supports.size(), std::vector<double>(K, 0.0));
  {
    std::size_t slot = 0;
    for (std::size_t k = 0; k < pm.components.size(); ++k) {
      const PosteriorComponent& c = pm.components[k];
      while (supports[slot] != c.support) ++slot;
      const double r = pm.responsibility(k);
      class_resp[c.cls] += r;
      support_resp[slot][c.cls] += r;
    }
  }

  for (std::size_t i = 0; i < K; ++i) {
    const double R = std::min(1.0, class_resp[i]);
    const ClassMoments before = normal_gamma_moments(P.cls(i));
    const ClassMoments after = normal_gamma_moments(pm.updated[i]);
    ClassMoments m;
    m.cls = i;
    auto mix = [&](double x0, double x1) {
      // Avoid 0 * inf when one side carries no mass.
      if (R <= 0.0) return x0;
      if (R >= 1.0) return x1;
      return (1.0 - R) * x0 + R * x1;
    };
    m.m = mix(before.m, after.m);
    m.tau = mix(before.tau, after.tau);
    m.tau2 = mix(before.tau2, after.tau2);
    m.m2tau = mix(before.m2tau, after.m2tau);
    m.m2 = mix(before.m2, after.m2);
    m.responsibility = R;
    m.prior = P.cls(i);
    m.updated = pm.updated[i];
    g.classes.push_back(m);
  }

  std::vector<double> shifted(K), mean_j, second_j;
  for (std::size_t slot = 0; slot < supports.size(); ++slot) {
    const std::size_t l = supports[slot];
    const auto row = P.alpha_row(l);
    DirichletMoments d;
    d.support = l;
    d.prior.assign(row.begin(), row.end());
    d.responsibility = support_resp[slot];
    double rho = 0.0;
    for (double r : d.responsibility) rho += r;
    rho = std::min(1.0, rho);

    dirichlet_moments(row, d.mean, d.second);
    for (std::size_t i = 0; i < K; ++i) {
      d.mean[i] *= 1.0 - rho;
      d.second[i] *= 1.0 - rho;
    }
    for (std::size_t j = 0; j < K; ++j) {
      const double r = d.responsibility[j];
      if (r == 0.0) continue;
      std::copy(row.begin(), row.end(), shifted.begin());
      shifted[j] += 1.0;
      dirichlet_moments(shifted, mean_j, second_j);
      for (std::size_t i = 0; i < K; ++i) {
        d.mean[i] += r * mean_j[i];
        d.second[i] += r * second_j[i];
      }
    }
    g.dirichlet.push_back(std::move(d));
  }
  return g;
}

SpmFragment bmm_project(const MomentSet& g) {
  SpmFragment frag;
  for (const ClassMoments& c : g.classes) {
    if (c.responsibility < kUntouched) continue;
    if (c.responsibility > kCollapsed) {
      frag.classes.emplace_back(c.cls, c.updated);
      continue;
    }
    const double gap_tau = c.tau2 - c.tau * c.tau;
    const double gap_m = c.m2tau - c.m * c.m * c.tau;
    NormalGamma ng;
    bool ok = gap_tau > kJensenGap * c.tau * c.tau;
    if (ok) {
      ng.mu = c.m;
      ng.alpha = c.tau * c.tau / gap_tau;
      ng.beta = c.tau / gap_tau;
      if (gap_m > kJensenGap * c.m2tau) {
        ng.lambda = std::isfinite(gap_m) ? 1.0 / gap_m : 0.0;
      } else {
        // Mixtures whose components disagree in both mean and precision can
        // have E[m^2 tau] < E[m]^2 E[tau]; match the variance of m instead.
        const double var_m = c.m2 - c.m * c.m;
        ng.lambda = ng.beta / ((ng.alpha - 1.0) * var_m);
        ok = ng.alpha > 1.0 && var_m > 0.0 && std::isfinite(var_m);
      }
      ok = ok && admissible(ng);
    }
    if (!ok) ng = c.responsibility >= 0.5 ? c.updated : c.prior;
    frag.classes.emplace_back(c.cls, ng);
  }

  for (const DirichletMoments& d : g.dirichlet) {
    const std::size_t K = d.mean.size();
    double rho = 0.0;
    std::size_t top = 0;
    for (std::size_t j = 0; j < K; ++j) {
      rho += d.responsibility[j];
      if (d.responsibility[j] > d.responsibility[top]) top = j;
    }
    if (rho < kUntouched) continue;
    std::vector<double> a(K);
    if (d.responsibility[top] > kCollapsed) {
      a = d.prior;
      a[top] += 1.0;
    } else {
      for (std::size_t i = 0; i < K; ++i) {
        const double e = d.mean[i];
        const double s = d.second[i];
        const double gap = s - e * e;
        double ai = std::numeric_limits<double>::quiet_NaN();
        if (gap > kJensenGap * e * e) ai = e * (e - s) / gap;
        // Responsibility-weighted counts when the moment ratio is unusable.
        if (!std::isfinite(ai)) ai = d.prior[i] + d.responsibility[i];
        a[i] = std::max(ai, kDirichletFloor);
      }
    }
    frag.dirichlet.emplace_back(d.support, std::move(a));
  }
  return frag;
}

void apply_fragment(SpmParams& P, const SpmFragment& frag) {
  for (const auto& [i, ng] : frag.classes) P.cls(i) = ng;
  for (const auto& [l, row] : frag.dirichlet) P.set_row(l, row);
}

void apply_property_update(SpmParams& P, double y, const InterpWeights& w) {
  const PosteriorMixture pm = property_posterior(P, y, w);
  apply_fragment(P, bmm_project(posterior_moments(pm, P)));
}

SpmParams property_update(const SpmParams& P, const PropertyMeasurement& m,
                          const InterpWeights& w) {
  SpmParams out = P;
  apply_property_update(out, m.y, w);
  return out;
}

double class_predictive_variance(const NormalGamma& ng, const PredictConfig& cfg) {
  if (!(ng.alpha > 1.0) || !(ng.lambda > 0.0)) return cfg.variance_cap;
  return ng.beta / (ng.alpha - 1.0) * (ng.lambda + 1.0) / ng.lambda;
}

namespace {

// Per-support constants C_l = sum_i wbar_i mu_i and S_l = sum_i wbar_i (Var_i + mu_i^2).
std::pair<double, double> support_constants(const SpmParams& P, std::size_t l,
                                            const PredictConfig& cfg) {
  const auto row = P.alpha_row(l);
  double a0 = 0.0;
  for (double a : row) a0 += a;
  double c = 0.0, s = 0.0;
  for (std::size_t i = 0; i < P.K(); ++i) {
    const NormalGamma& ng = P.cls(i);
    const double wbar = row[i] / a0;
    c += wbar * ng.mu;
    s += wbar * (class_predictive_variance(ng, cfg) + ng.mu * ng.mu);
  }
  return {c, s};
}

}  // namespace

PropertyMoments predict_moments(const SpmParams& P, const PathCoord& v, const SupportGrid& grid,
                                const SparseKernelConfig& kernel, const PredictConfig& cfg) {
  const InterpWeights w = interp_weights(kernel, grid, v);
  double mean = 0.0, second = 0.0;
  for (const auto& [l, weight] : w.entries) {
    const auto [c, s] = support_constants(P, l, cfg);
    mean += weight * c;
    second += weight * s;
  }
  return {mean, second - mean * mean};
}

PropertyMomentsGradient predict_moments_gradient(const SpmParams& P, const PathCoord& v,
                                                 const SupportGrid& grid,
                                                 const SparseKernelConfig& kernel,
                                                 const PredictConfig& cfg) {
  PropertyMomentsGradient out;
  double second = 0.0, dsec_ds = 0.0, dsec_de = 0.0;
  for (const WeightGradient& g : interp_weight_gradients(kernel, grid, v)) {
    const auto [c, s] = support_constants(P, g.index, cfg);
    out.value.mean += g.weight * c;
    out.dmean_ds += g.d_ds * c;
    out.dmean_de += g.d_de * c;
    second += g.weight * s;
    dsec_ds += g.d_ds * s;
    dsec_de += g.d_de * s;
  }
  const double m = out.value.mean;
  out.value.variance = second - m * m;
  out.dvar_ds = dsec_ds - 2.0 * m * out.dmean_ds;
  out.dvar_de = dsec_de - 2.0 * m * out.dmean_de;
  return out;
}

std::vector<double> class_likelihoods(const SpmParams& P, const PathCoord& v,
                                      const SupportGrid& grid, const SparseKernelConfig& kernel) {
  const InterpWeights w = interp_weights(kernel, grid, v);
  std::vector<double> p(P.K(), 0.0);
  for (const auto& [l, weight] : w.entries) {
    const auto row = P.alpha_row(l);
    double a0 = 0.0;
    for (double a : row) a0 += a;
    for (std::size_t i = 0; i < P.K(); ++i) p[i] += weight * row[i] / a0;
  }
  return p;
}

SemanticPropertyMap::SemanticPropertyMap(SpmParams params, std::shared_ptr<const SupportGrid> grid,
                                         MapConfig cfg)
    : params_(std::move(params)), grid_(std::move(grid)), cfg_(cfg) {
  if (!grid_) throw ArgumentError("map needs a support grid");
  if (params_.L() != grid_->size()) {
    throw ArgumentError("parameter count does not match the support grid");
  }
  cfg_.kernel.validate();
  if (!(cfg_.predict.variance_cap > 0.0)) throw ArgumentError("variance cap must be positive");
}

bool SemanticPropertyMap::add_semantic(const SemanticMeasurement& m) {
  InterpWeights w;
  try {
    w = interp_weights(cfg_.kernel, *grid_, m.v);
  } catch (const CoverageError&) {
    std::unique_lock lock(mutex_);
    ++stats_.dropped_semantic;
    return false;
  }
  std::unique_lock lock(mutex_);
  apply_semantic_update(params_, m.cls, w);
  ++stats_.semantic_updates;
  ++version_;
  return true;
}

bool SemanticPropertyMap::add_property(const PropertyMeasurement& m) {
  InterpWeights w;
  try {
    w = interp_weights(cfg_.kernel, *grid_, m.v);
  } catch (const CoverageError&) {
    std::unique_lock lock(mutex_);
    ++stats_.dropped_property;
    return false;
  }
  std::unique_lock lock(mutex_);
  apply_property_update(params_, m.y, w);
  ++stats_.property_updates;
  ++version_;
  return true;
}

PropertyMoments SemanticPropertyMap::predict(const PathCoord& v) const {
  std::shared_lock lock(mutex_);
  return predict_moments(params_, v, *grid_, cfg_.kernel, cfg_.predict);
}

std::vector<double> SemanticPropertyMap::class_likelihoods(const PathCoord& v) const {
  std::shared_lock lock(mutex_);
  return spm::class_likelihoods(params_, v, *grid_, cfg_.kernel);
}

MapSnapshot SemanticPropertyMap::snapshot() const {
  std::shared_lock lock(mutex_);
  return {version_, params_};
}

MapStats SemanticPropertyMap::stats() const {
  std::shared_lock lock(mutex_);
  return stats_;
}

std::uint64_t SemanticPropertyMap::version() const {
  std::shared_lock lock(mutex_);
  return version_;
}

nlohmann::json map_to_json(const SpmParams& P, const SupportGrid& grid,
                           const SparseKernelConfig& kernel) {
  using nlohmann::json;
  json doc;
  doc["format_version"] = 1;
  doc["K"] = P.K();
  doc["L"] = P.L();
  if (const auto& layout = grid.layout()) {
    doc["layout"] = {{"type", "lattice"},
                     {"s_min", layout->s_min},
                     {"s_max", layout->s_max},
                     {"e_min", layout->e_min},
                     {"e_max", layout->e_max},
                     {"spacing_s", layout->spacing_s},
                     {"spacing_e", layout->spacing_e},
                     {"closed", layout->closed}};
  } else {
    json pts = json::array();
    for (const PathCoord& p : grid.points()) {
      pts.push_back(p.s);
      pts.push_back(p.e);
    }
    const auto [s_lo, s_hi, e_lo, e_hi] = grid.bounds();
    doc["layout"] = {{"type", "points"}, {"s_min", s_lo}, {"s_max", s_hi},
                     {"e_min", e_lo},    {"e_max", e_hi}, {"closed", grid.closed()},
                     {"points", pts}};
  }
  doc["kernel"] = {{"D", kernel.D}, {"sigma", kernel.sigma}};
  doc["dirichlet"] = std::vector<double>(P.dirichlet().begin(), P.dirichlet().end());
  json classes = json::array();
  for (const NormalGamma& ng : P.classes()) {
    classes.push_back({ng.mu, ng.lambda, ng.alpha, ng.beta});
  }
  doc["classes"] = classes;
  return doc;
}

LoadedMap map_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format_version").get<int>() != 1) throw ParseError("unsupported map format");
    const auto K = doc.at("K").get<std::size_t>();
    const auto L = doc.at("L").get<std::size_t>();
    LoadedMap out;
    out.kernel.D = doc.at("kernel").at("D").get<double>();
    out.kernel.sigma = doc.at("kernel").at("sigma").get<double>();
    out.kernel.validate();

    const auto& lay = doc.at("layout");
    const auto type = lay.at("type").get<std::string>();
    if (type == "lattice") {
      SupportLayout layout;
      layout.s_min = lay.at("s_min").get<double>();
      layout.s_max = lay.at("s_max").get<double>();
      layout.e_min = lay.at("e_min").get<double>();
      layout.e_max = lay.at("e_max").get<double>();
      layout.spacing_s = lay.at("spacing_s").get<double>();
      layout.spacing_e = lay.at("spacing_e").get<double>();
      layout.closed = lay.at("closed").get<bool>();
      out.grid = std::make_shared<SupportGrid>(layout, out.kernel.D);
    } else if (type == "points") {
      const auto flat = lay.at("points").get<std::vector<double>>();
      if (flat.size() % 2 != 0 || flat.empty()) throw ParseError("malformed support points");
      std::vector<PathCoord> pts;
      for (std::size_t k = 0; k < flat.size(); k += 2) pts.push_back({flat[k], flat[k + 1]});
      out.grid = std::make_shared<SupportGrid>(
          std::move(pts), lay.at("s_min").get<double>(), lay.at("s_max").get<double>(),
          lay.at("e_min").get<double>(), lay.at("e_max").get<double>(),
          lay.at("closed").get<bool>(), out.kernel.D);
    } else {
      throw ParseError("unknown support layout type '" + type + "'");
    }
    if (out.grid->size() != L) throw ParseError("support layout does not produce L points");

    std::vector<NormalGamma> classes;
    for (const auto& row : doc.at("classes")) {
      if (row.size() != 4) throw ParseError("class rows must hold mu, lambda, alpha, beta");
      classes.push_back(
          {row[0].get<double>(), row[1].get<double>(), row[2].get<double>(), row[3].get<double>()});
    }
    out.params =
        SpmParams(K, L, doc.at("dirichlet").get<std::vector<double>>(), std::move(classes));
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed map document: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ParseError(std::string("invalid map parameters: ") + e.what());
  }
}

}  // namespace spm
