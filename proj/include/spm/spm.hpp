#pragma once

#include <cstddef>
#include <cstdint>
#include <json.hpp>
#include <memory>
#include <shared_mutex>
#include <span>
#include <vector>

#include "spm/geometry.hpp"
#include "spm/kernels.hpp"

namespace spm {

// Normal-gamma parameters of one class: m | tau ~ N(mu, 1/(lambda tau)),
// tau ~ Gamma(alpha, rate beta).
struct NormalGamma {
  double mu = 0.0;
  double lambda = 1.0;
  double alpha = 1.0;
  double beta = 1.0;

  bool operator==(const NormalGamma&) const = default;
};

// Map parameters: one Dirichlet concentration vector per support point and
// one normal-gamma parameter set per class, shared by all support points.
class SpmParams {
 public:
  SpmParams() = default;
  // Every Dirichlet entry set to `a0`, every class to `cls`.
  SpmParams(std::size_t K, std::size_t L, double a0 = 1.0, NormalGamma cls = {});
  SpmParams(std::size_t K, std::size_t L, std::vector<double> dirichlet,
            std::vector<NormalGamma> classes);

  std::size_t K() const { return K_; }
  std::size_t L() const { return L_; }

  double a(std::size_t l, std::size_t i) const { return dirichlet_[l * K_ + i]; }
  double& a(std::size_t l, std::size_t i) { return dirichlet_[l * K_ + i]; }
  std::span<const double> alpha_row(std::size_t l) const {
    return {dirichlet_.data() + l * K_, K_};
  }
  void set_row(std::size_t l, std::span<const double> row);
  std::span<const double> dirichlet() const { return dirichlet_; }

  const NormalGamma& cls(std::size_t i) const { return classes_[i]; }
  NormalGamma& cls(std::size_t i) { return classes_[i]; }
  std::span<const NormalGamma> classes() const { return classes_; }

  // Throws ArgumentError when a parameter leaves its admissible range.
  void validate() const;
  bool all_finite() const;

  bool operator==(const SpmParams&) const = default;

 private:
  std::size_t K_ = 0;
  std::size_t L_ = 0;
  std::vector<double> dirichlet_;  // L x K, row-major
  std::vector<NormalGamma> classes_;
};

struct SemanticMeasurement {
  std::size_t cls = 0;  // zero-based class index
  PathCoord v;
};

struct PropertyMeasurement {
  double y = 0.0;
  PathCoord v;
};

// ---------------------------------------------------------------------------
// Semantic (categorical) update

void apply_semantic_update(SpmParams& P, std::size_t cls, const InterpWeights& w);
SpmParams semantic_update(const SpmParams& P, const SemanticMeasurement& m, const InterpWeights& w);

// ---------------------------------------------------------------------------
// Exact posterior after one property measurement

// Conjugate normal-gamma update of a single class with observation y.
NormalGamma conjugate_update(const NormalGamma& prior, double y);
// log c*: log of the marginal likelihood of y under the class prior.
double log_evidence(const NormalGamma& prior, double y);

// One mixture term: the measurement is explained by class `cls` at support
// point `support`. Its Dirichlet factor is Dir(a^support + e_cls) and its
// normal-gamma factor for `cls` is the conjugate update; all other factors
// keep their prior parameters.
struct PosteriorComponent {
  std::size_t support = 0;
  std::size_t cls = 0;
  double log_weight = 0.0;  // log(I^l u_j^l c_j*)
};

struct PosteriorMixture {
  std::vector<NormalGamma> updated;  // per class, conjugate update with y
  std::vector<double> log_evidence;  // per class, log c_j*
  std::vector<PosteriorComponent> components;
  double log_normalizer = 0.0;  // log M

  double responsibility(std::size_t k) const;
};

PosteriorMixture property_posterior(const SpmParams& P, double y, const InterpWeights& w);

// ---------------------------------------------------------------------------
// Sufficient moments and moment matching

struct ClassMoments {
  std::size_t cls = 0;
  double m = 0.0;      // E[m]
  double tau = 0.0;    // E[tau]
  double tau2 = 0.0;   // E[tau^2]
  double m2tau = 0.0;  // E[m^2 tau]
  // E[m^2], infinite when alpha <= 1. Not part of the matched set; it
  // pins lambda when E[m^2 tau] - E[m]^2 E[tau] <= 0, which no normal-gamma
  // can reproduce.
  double m2 = 0.0;
  // Total posterior mass of components that updated this class, and the two
  // parameter sets the mixture is made of. Used when moment division is
  // ill-conditioned.
  double responsibility = 0.0;
  NormalGamma prior;
  NormalGamma updated;
};

struct DirichletMoments {
  std::size_t support = 0;
  std::vector<double> mean;            // E[w_i]
  std::vector<double> second;          // E[w_i^2]
  std::vector<double> responsibility;  // per class, mass of (support, i) components
  std::vector<double> prior;           // a^support before the update
};

struct MomentSet {
  std::vector<ClassMoments> classes;
  std::vector<DirichletMoments> dirichlet;
};

// Closed-form normal-gamma and Dirichlet moments.
ClassMoments normal_gamma_moments(const NormalGamma& ng);
void dirichlet_moments(std::span<const double> a, std::vector<double>& mean,
                       std::vector<double>& second);

MomentSet posterior_moments(const PosteriorMixture& pm, const SpmParams& P);

struct SpmFragment {
  std::vector<std::pair<std::size_t, NormalGamma>> classes;
  std::vector<std::pair<std::size_t, std::vector<double>>> dirichlet;
};

inline constexpr double kDirichletFloor = 1e-8;

SpmFragment bmm_project(const MomentSet& g);
void apply_fragment(SpmParams& P, const SpmFragment& frag);

void apply_property_update(SpmParams& P, double y, const InterpWeights& w);
SpmParams property_update(const SpmParams& P, const PropertyMeasurement& m, const InterpWeights& w);

// ---------------------------------------------------------------------------
// Externalized statistics

struct PredictConfig {
  // Per-class predictive variance used where the Student-t variance is
  // undefined (alpha <= 1 or lambda = 0).
  double variance_cap = 1.0;
};

double class_predictive_variance(const NormalGamma& ng, const PredictConfig& cfg);

struct PropertyMoments {
  double mean = 0.0;
  double variance = 0.0;
};

struct PropertyMomentsGradient {
  PropertyMoments value;
  double dmean_ds = 0.0, dmean_de = 0.0;
  double dvar_ds = 0.0, dvar_de = 0.0;
};

PropertyMoments predict_moments(const SpmParams& P, const PathCoord& v, const SupportGrid& grid,
                                const SparseKernelConfig& kernel, const PredictConfig& cfg = {});
PropertyMomentsGradient predict_moments_gradient(const SpmParams& P, const PathCoord& v,
                                                 const SupportGrid& grid,
                                                 const SparseKernelConfig& kernel,
                                                 const PredictConfig& cfg = {});
std::vector<double> class_likelihoods(const SpmParams& P, const PathCoord& v,
                                      const SupportGrid& grid, const SparseKernelConfig& kernel);

// ---------------------------------------------------------------------------
// Map container

struct MapConfig {
  SparseKernelConfig kernel;
  PredictConfig predict;
};

struct MapStats {
  std::uint64_t semantic_updates = 0;
  std::uint64_t property_updates = 0;
  std::uint64_t dropped_semantic = 0;  // no kernel coverage
  std::uint64_t dropped_property = 0;
};

struct MapSnapshot {
  std::uint64_t version = 0;
  SpmParams params;
};

// Single writer, many readers. Updates take an exclusive lock and bump the
// version; readers either query under a shared lock or copy a snapshot.
class SemanticPropertyMap {
 public:
  SemanticPropertyMap(SpmParams params, std::shared_ptr<const SupportGrid> grid, MapConfig cfg);

  // Return false (and count the drop) when v has no kernel coverage.
  bool add_semantic(const SemanticMeasurement& m);
  bool add_property(const PropertyMeasurement& m);

  PropertyMoments predict(const PathCoord& v) const;
  std::vector<double> class_likelihoods(const PathCoord& v) const;

  MapSnapshot snapshot() const;
  MapStats stats() const;
  std::uint64_t version() const;

  const SupportGrid& grid() const { return *grid_; }
  std::shared_ptr<const SupportGrid> grid_ptr() const { return grid_; }
  const MapConfig& config() const { return cfg_; }

 private:
  mutable std::shared_mutex mutex_;
  SpmParams params_;
  std::shared_ptr<const SupportGrid> grid_;
  MapConfig cfg_;
  MapStats stats_;
  std::uint64_t version_ = 0;
};

// JSON container: format_version, K, L, support layout (lattice descriptor or
// explicit points), kernel, Dirichlet matrix (L x K, row-major) and class table.
nlohmann::json map_to_json(const SpmParams& P, const SupportGrid& grid,
                           const SparseKernelConfig& kernel);
struct LoadedMap {
  SpmParams params;
  std::shared_ptr<const SupportGrid> grid;
  SparseKernelConfig kernel;
};
LoadedMap map_from_json(const nlohmann::json& doc);

}  // namespace spm
