#pragma once

// Per-velocity temporal alignment and multi-velocity fusion.
//
// OTAM runs a monotone-path dynamic program over the query x support cost
// matrix whose support axis is padded with a zero-cost column on each side:
//
//   padded column index j = 0 .. T_s + 1 (0 and T_s + 1 are padding)
//   R(0, 0) = 0
//   R(i, j) = c(i, j) + min{ R(i, j-1), R(i-1, j-1), R(i-1, j) if j is pad }
//   distance = R(T_q - 1, T_s + 1) / T_q
//
// Every support frame is visited exactly once in order; query frames may
// repeat, and may be skipped only inside the padding columns. The soft
// variant replaces min with -gamma * log-sum-exp(-x / gamma).

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvp/autodiff.hpp"
#include "mvp/sti.hpp"

namespace mvp {

enum class Metric { kOtam, kBiMhm };

std::string_view metric_name(Metric m);
/// Accepts "otam" and "bimhm"; throws ConfigError otherwise.
Metric parse_metric(std::string_view name);

enum class AlphaMode { kFixed, kLearned };

std::string_view alpha_mode_name(AlphaMode m);
AlphaMode parse_alpha_mode(std::string_view name);

/// Which velocity scales take part in fusion. Written as a string of '0'/'1'
/// with character k standing for scale k+1, e.g. "101".
class ScaleMask {
 public:
  ScaleMask() = default;
  explicit ScaleMask(std::vector<bool> enabled);
  static ScaleMask all(std::size_t levels);
  /// Throws ConfigError on characters other than 0/1 or an all-zero mask.
  static ScaleMask parse(std::string_view text);

  std::size_t levels() const { return enabled_.size(); }
  bool enabled(std::size_t level_index) const { return enabled_[level_index]; }
  /// Zero-based level indices that are enabled, ascending.
  std::vector<std::size_t> active() const;
  std::string str() const;

  friend bool operator==(const ScaleMask&, const ScaleMask&) = default;

 private:
  std::vector<bool> enabled_;
};

/// Frame-pair cosine distances, rows = query tokens, cols = support tokens.
struct CostMatrix {
  Tensor entries;

  std::size_t query_len() const { return entries.rows(); }
  std::size_t support_len() const { return entries.cols(); }
};

/// Entry (i, j) = 1 - cos(q_i, s_j), computed as |u_i - v_j|^2 / 2 over the
/// unit-normalized rows so identical rows give exactly 0. Throws
/// DegenerateInputError naming a zero-norm row.
CostMatrix cosine_cost(const Tensor& query, const Tensor& support);

/// Hard-min OTAM distance normalized by the query length.
Real otam_distance(const CostMatrix& cost);
/// Soft-min OTAM; gamma == 0 falls back to the hard min.
Real otam_soft_distance(const CostMatrix& cost, Real gamma);

/// mean_i min_j c(i, j) + mean_j min_i c(i, j).
Real bimhm_distance(const CostMatrix& cost);
Real bimhm_soft_distance(const CostMatrix& cost, Real gamma);

Real metric_distance(const CostMatrix& cost, Metric metric, Real gamma = 0);

/// sum_n alpha_n d_n. Throws DimensionError on a length mismatch.
Real fuse_velocities(std::span<const Real> distances,
                     std::span<const Real> alphas);

struct ScaleDistance {
  std::size_t scale;  // 1-based velocity scale
  Real distance;
};

struct DistanceProfile {
  std::vector<ScaleDistance> per_scale;
  std::vector<Real> alphas;
  Real fused = 0;
};

/// Per-scale distances over the enabled scales, fused with `alphas` (one per
/// enabled scale). Throws ContractError when the pyramids differ in shape.
DistanceProfile distance_profile(const VelocityPyramid& support,
                                 const VelocityPyramid& query,
                                 std::span<const Real> alphas, Metric metric,
                                 const ScaleMask& scales);

/// Fusion weights over the enabled scales: uniform when fixed, softmax of the
/// model's alpha logits when learned.
std::vector<Real> fusion_weights(const ModelParams& model, AlphaMode mode,
                                 const ScaleMask& scales);

// Tape versions used for training.

Var cosine_cost(Var query, Var support);
/// gamma == 0 records the hard min, differentiated along the argmin path.
Var otam_distance(Var cost, Real gamma);
Var bimhm_distance(Var cost, Real gamma);
Var metric_distance(Var cost, Metric metric, Real gamma);
/// 1 x k fusion weights for the k enabled scales.
Var fusion_weights(Tape& tape, const ModelParams& model, AlphaMode mode,
                   const ScaleMask& scales);
/// Fused distance as a 1 x 1 node.
Var fused_distance(const PyramidVars& support, const PyramidVars& query,
                   Var alphas, Metric metric, Real gamma,
                   const ScaleMask& scales);

}  // namespace mvp
