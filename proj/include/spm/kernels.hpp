#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "spm/geometry.hpp"

namespace spm {

struct SparseKernelConfig {
  double D = 3.0;      // support radius [m]
  double sigma = 1.0;  // amplitude

  void validate() const;
};

// Compactly supported kernel: sigma at d = 0, decaying to exactly 0 at d = D
// with zero slope, and 0 beyond.
double kernel_eval(const SparseKernelConfig& cfg, double d);
// dK/dd; continuous everywhere and zero at d = 0 and for d >= D.
double kernel_derivative(const SparseKernelConfig& cfg, double d);

// Regular lattice of support points in path coordinates. On closed paths
// s_max is the period and no lattice row is placed at s_max itself.
struct SupportLayout {
  double s_min = 0.0;
  double s_max = 0.0;
  double e_min = -6.0;
  double e_max = 6.0;
  double spacing_s = 2.0;
  double spacing_e = 1.0;
  bool closed = false;

  std::size_t rows_s() const;
  std::size_t cols_e() const;
  void validate() const;
};

// Support points {v_l} with a uniform bucket index for radius queries.
// Immutable after construction.
class SupportGrid {
 public:
  // Lattice points, index l = k * cols_e + j for s-row k and e-column j.
  SupportGrid(const SupportLayout& layout, double radius);
  // Arbitrary points inside [s_min, s_max] x [e_min, e_max].
  SupportGrid(std::vector<PathCoord> points, double s_min, double s_max, double e_min, double e_max,
              bool closed, double radius);

  std::size_t size() const { return points_.size(); }
  const PathCoord& point(std::size_t l) const { return points_[l]; }
  std::span<const PathCoord> points() const { return points_; }
  const std::optional<SupportLayout>& layout() const { return layout_; }
  bool closed() const { return closed_; }
  double radius() const { return radius_; }
  struct Bounds {
    double s_min, s_max, e_min, e_max;
  };
  Bounds bounds() const { return {s_lo_, s_hi_, e_lo_, e_hi_}; }

  // Euclidean distance in (s, e) with s wrapped on closed paths.
  double distance(const PathCoord& a, const PathCoord& b) const;
  // Signed s-difference a.s - b.s, wrapped to the shortest value when closed.
  double delta_s(double a, double b) const;

  // Indices of all points strictly closer than radius() to v, ascending.
  std::vector<std::size_t> neighbors(const PathCoord& v) const;

 private:
  void build_index();

  std::vector<PathCoord> points_;
  std::optional<SupportLayout> layout_;
  double s_lo_ = 0.0, s_hi_ = 0.0, e_lo_ = 0.0, e_hi_ = 0.0;
  bool closed_ = false;
  double radius_ = 0.0;

  std::size_t ns_ = 1, ne_ = 1;
  double ws_ = 1.0, we_ = 1.0;
  std::vector<std::vector<std::size_t>> buckets_;
};

// Sparse normalized interpolation weights, sorted by support index.
struct InterpWeights {
  std::vector<std::pair<std::size_t, double>> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

// I_v^l = K(|v - v_l|) / sum_l' K(|v - v_l'|). Throws CoverageError if no
// support point lies within D of v.
InterpWeights interp_weights(const SparseKernelConfig& cfg, const SupportGrid& grid,
                             const PathCoord& v);

struct WeightGradient {
  std::size_t index = 0;
  double weight = 0.0;
  double d_ds = 0.0;
  double d_de = 0.0;
};

// Interpolation weights together with their partial derivatives in s and e.
std::vector<WeightGradient> interp_weight_gradients(const SparseKernelConfig& cfg,
                                                    const SupportGrid& grid, const PathCoord& v);

}  // namespace spm
