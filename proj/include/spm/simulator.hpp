#pragma once

#include <cstdint>
#include <iosfwd>
#include <json.hpp>
#include <random>
#include <vector>

#include "spm/geometry.hpp"
#include "spm/kernels.hpp"
#include "spm/projection.hpp"
#include "spm/spm.hpp"

namespace spm {

// Class indices used by the synthetic world.
inline constexpr std::size_t kGravel = 0;
inline constexpr std::size_t kAsphalt = 1;
inline constexpr std::size_t kWater = 2;

struct TrueMapConfig {
  // Normal-gamma parameters per class (gravel, asphalt, water). The mean is
  // the friction level; alpha / beta sets the measurement precision, here a
  // noise standard deviation of about 0.1.
  std::vector<NormalGamma> classes = {
      {0.55, 5.0, 3.0, 0.03}, {0.9, 5.0, 3.0, 0.03}, {0.35, 5.0, 3.0, 0.03}};
  double dominant_concentration = 50.0;
  double other_concentration = 1.0;

  // Water patches: a zero-mean, unit-variance squared-exponential field over
  // (s, e) thresholded so that each point is wet with this probability.
  double water_intensity = 0.07;
  double water_length_s = 30.0;
  double water_length_e = 2.0;

  // Gravel patches along both road edges: |e| >= gravel_edge where a 1-D
  // field along s exceeds its median-shifted threshold.
  double gravel_edge = 4.5;
  double gravel_fraction = 0.5;
  double gravel_length_s = 40.0;

  void validate() const;
};

struct TrueMap {
  SpmParams params;
  // Frozen latent realization: w (L x K row-major), per-class m and tau.
  std::vector<double> w;
  std::vector<double> m;
  std::vector<double> tau;
  std::vector<std::size_t> dominant;  // per support point

  std::size_t K() const { return params.K(); }
  std::size_t L() const { return params.L(); }
  std::span<const double> w_row(std::size_t l) const { return {w.data() + l * K(), K()}; }
};

TrueMap generate_true_map(std::uint64_t seed, const SupportGrid& grid, const TrueMapConfig& cfg);

// Interpolated latent class probabilities sum_l I^l w^l at v.
std::vector<double> true_class_probabilities(const TrueMap& truth, const SupportGrid& grid,
                                             const SparseKernelConfig& kernel, const PathCoord& v);
// Mean property of the latent model at v: sum_l I^l sum_i w_i^l m_i.
double true_property_mean(const TrueMap& truth, const SupportGrid& grid,
                          const SparseKernelConfig& kernel, const PathCoord& v);

// Single draws from the latent model at v, as used by the measurement
// synthesizer: a semantic label, and a (class, property value) pair.
std::size_t sample_semantic(const TrueMap& truth, const SupportGrid& grid,
                            const SparseKernelConfig& kernel, const PathCoord& v,
                            std::mt19937_64& rng);
std::pair<std::size_t, double> sample_property(const TrueMap& truth, const SupportGrid& grid,
                                               const SparseKernelConfig& kernel, const PathCoord& v,
                                               std::mt19937_64& rng);

// Prior for the experiments: a^l = `dirichlet` for every l, and each
// normal-gamma parameter scaled by an independent factor 1 + U(-p, p).
SpmParams perturbed_prior(const TrueMap& truth, double perturbation, std::uint64_t seed,
                          const std::vector<double>& dirichlet = {1.0, 5.0, 1.0});

nlohmann::json true_map_to_json(const TrueMap& truth, const SupportGrid& grid,
                                const SparseKernelConfig& kernel);

// Lateral offset e(s) = offset + amplitude * sin(2 pi s / period).
struct LateralProfile {
  double offset = 0.0;
  double amplitude = 0.0;
  double period = 200.0;

  double at(double s) const;
  double max_abs() const;
};

struct TrajectoryConfig {
  double speed = 15.0;     // m/s along the centerline
  double duration = 40.0;  // s
  double rate = 40.0;      // Hz, pose sampling
  double s_start = 0.0;
  LateralProfile lateral;
};

struct VehicleState {
  double t = 0.0;
  double s = 0.0;
  double e = 0.0;
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

class Trajectory {
 public:
  Trajectory(const PathSpline& spline, const TrajectoryConfig& cfg, double e_max);

  const std::vector<VehicleState>& states() const { return states_; }
  // Exact state at time t (not limited to the sampling grid).
  VehicleState state_at(double t) const;
  const TrajectoryConfig& config() const { return cfg_; }

 private:
  const PathSpline* spline_;
  TrajectoryConfig cfg_;
  std::vector<VehicleState> states_;
};

Trajectory generate_trajectory(const PathSpline& spline, const TrajectoryConfig& cfg, double e_max);

struct CameraConfig {
  CameraIntrinsics intrinsics = CameraIntrinsics::pinhole(600.0, 600.0, 640.0, 360.0, 1280, 720);
  CameraExtrinsics extrinsics{0.0, 0.0, 1.5, 0.0, 6.0 * 3.14159265358979323846 / 180.0, 0.0};
  double plane_z = 0.0;
};

struct SensorConfig {
  double semantic_rate = 20.0;  // frames per second
  double property_rate = 40.0;  // Hz
  std::size_t pixels_per_frame = 64;
  double near_range = 6.0;   // m ahead of the vehicle
  double far_range = 100.0;  // m ahead of the vehicle
};

struct StreamRecord {
  enum class Type { kSemantic, kProperty };
  Type type = Type::kSemantic;
  double t = 0.0;
  PathCoord v;
  std::size_t cls = 0;  // semantic class (zero-based)
  double y = 0.0;       // property value
};

struct MeasurementStream {
  std::vector<StreamRecord> records;  // time-ordered, properties first on ties
  std::uint64_t dropped_pixels = 0;   // outside the image or the corridor
  std::uint64_t dropped_properties = 0;
};

struct SynthesisContext {
  const PathSpline& spline;
  const SupportGrid& grid;
  const SparseKernelConfig& kernel;
  double e_max;
};

MeasurementStream synthesize_measurements(const TrueMap& truth, const Trajectory& trajectory,
                                          const CameraConfig& camera, const SensorConfig& sensors,
                                          const SynthesisContext& ctx, std::uint64_t seed);

// JSON lines, one record per measurement; classes are written one-based.
void write_stream(std::ostream& os, const MeasurementStream& stream);
MeasurementStream read_stream(std::istream& is, std::size_t K);

}  // namespace spm
