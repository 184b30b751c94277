#include "mvp/alignment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>

#include "mvp/error.hpp"

namespace mvp {

std::string_view metric_name(Metric m) {
  return m == Metric::kOtam ? "otam" : "bimhm";
}

Metric parse_metric(std::string_view name) {
  if (name == "otam") return Metric::kOtam;
  if (name == "bimhm") return Metric::kBiMhm;
  throw ConfigError("unknown metric '" + std::string(name) +
                    "' (expected otam or bimhm)");
}

std::string_view alpha_mode_name(AlphaMode m) {
  return m == AlphaMode::kFixed ? "fixed" : "learned";
}

AlphaMode parse_alpha_mode(std::string_view name) {
  if (name == "fixed") return AlphaMode::kFixed;
  if (name == "learned") return AlphaMode::kLearned;
  throw ConfigError("unknown alpha mode '" + std::string(name) +
                    "' (expected fixed or learned)");
}

ScaleMask::ScaleMask(std::vector<bool> enabled) : enabled_(std::move(enabled)) {
  if (std::none_of(enabled_.begin(), enabled_.end(), [](bool b) { return b; })) {
    throw ConfigError("scale mask enables no velocity scale");
  }
}

ScaleMask ScaleMask::all(std::size_t levels) {
  return ScaleMask(std::vector<bool>(levels, true));
}

ScaleMask ScaleMask::parse(std::string_view text) {
  std::vector<bool> enabled;
  for (char ch : text) {
    if (ch != '0' && ch != '1') {
      throw ConfigError("scale mask '" + std::string(text) +
                        "' must consist of 0/1 characters");
    }
    enabled.push_back(ch == '1');
  }
  if (enabled.empty()) throw ConfigError("empty scale mask");
  return ScaleMask(std::move(enabled));
}

std::vector<std::size_t> ScaleMask::active() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < enabled_.size(); ++i)
    if (enabled_[i]) out.push_back(i);
  return out;
}

std::string ScaleMask::str() const {
  std::string s;
  for (bool b : enabled_) s += b ? '1' : '0';
  return s;
}

// ---------------------------------------------------------------------------
// Cosine cost

namespace {

std::vector<Real> row_norms(const Tensor& x, const char* which) {
  std::vector<Real> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Real ss = 0;
    for (Real v : x.row(i)) ss += v * v;
    norms[i] = std::sqrt(ss);
    if (!(norms[i] > 0)) {
      throw DegenerateInputError(std::string("cosine_cost: ") + which +
                                 " row " + std::to_string(i) +
                                 " has zero norm");
    }
  }
  return norms;
}

Tensor normalize_rows(const Tensor& x, const std::vector<Real>& norms) {
  Tensor u = x;
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (Real& v : u.row(i)) v /= norms[i];
  return u;
}

Tensor half_squared_distances(const Tensor& u, const Tensor& v) {
  Tensor out = Tensor::zeros({u.rows(), v.rows()});
  for (std::size_t i = 0; i < u.rows(); ++i) {
    for (std::size_t j = 0; j < v.rows(); ++j) {
      Real acc = 0;
      for (std::size_t k = 0; k < u.cols(); ++k) {
        const Real d = u(i, k) - v(j, k);
        acc += d * d;
      }
      out(i, j) = Real(0.5) * acc;
    }
  }
  return out;
}

void check_cost_inputs(const Tensor& q, const Tensor& s) {
  if (q.cols() != s.cols()) {
    throw DimensionError("cosine_cost: token widths " +
                         std::to_string(q.cols()) + " and " +
                         std::to_string(s.cols()) + " differ");
  }
  if (q.rows() == 0 || s.rows() == 0) {
    throw ContractError("cosine_cost: empty token sequence");
  }
}

}  // namespace

CostMatrix cosine_cost(const Tensor& query, const Tensor& support) {
  check_cost_inputs(query, support);
  const Tensor u = normalize_rows(query, row_norms(query, "query"));
  const Tensor v = normalize_rows(support, row_norms(support, "support"));
  return {half_squared_distances(u, v)};
}

Var cosine_cost(Var query, Var support) {
  Tape& tape = query.tape();
  check_cost_inputs(query.value(), support.value());
  auto qn = row_norms(query.value(), "query");
  auto sn = row_norms(support.value(), "support");
  Tensor u = normalize_rows(query.value(), qn);
  Tensor v = normalize_rows(support.value(), sn);
  Tensor cost = half_squared_distances(u, v);
  const std::size_t iq = query.id(), is = support.id();
  return tape.record(
      std::move(cost),
      [iq, is, u = std::move(u), v = std::move(v), qn = std::move(qn),
       sn = std::move(sn)](Tape& t, std::size_t self) {
        const Real f = backward_fault_factor("cosine_cost");
        const Tensor& g = t.out_grad(self);
        const std::size_t tq = u.rows(), ts = v.rows(), c = u.cols();
        Tensor gu = Tensor::zeros({tq, c});
        Tensor gv = Tensor::zeros({ts, c});
        for (std::size_t i = 0; i < tq; ++i) {
          for (std::size_t j = 0; j < ts; ++j) {
            const Real gij = g(i, j);
            if (gij == 0) continue;
            for (std::size_t k = 0; k < c; ++k) {
              const Real d = u(i, k) - v(j, k);
              gu(i, k) += gij * d;
              gv(j, k) -= gij * d;
            }
          }
        }
        // Through x -> x / |x|: dx = (du - (du . u) u) / |x|.
        auto project = [f](const Tensor& unit, const Tensor& gunit,
                           const std::vector<Real>& norms, Tensor& gx) {
          for (std::size_t i = 0; i < unit.rows(); ++i) {
            Real dot = 0;
            for (std::size_t k = 0; k < unit.cols(); ++k)
              dot += gunit(i, k) * unit(i, k);
            for (std::size_t k = 0; k < unit.cols(); ++k)
              gx(i, k) += f * (gunit(i, k) - dot * unit(i, k)) / norms[i];
          }
        };
        project(u, gu, qn, t.grad_buffer(iq));
        project(v, gv, sn, t.grad_buffer(is));
      });
}

// ---------------------------------------------------------------------------
// Soft / hard minimum helpers

namespace {

constexpr Real kInf = std::numeric_limits<Real>::infinity();

// Soft minimum of finite candidates; gamma == 0 gives the exact minimum.
Real soft_min(std::span<const Real> values, Real gamma) {
  Real m = kInf;
  for (Real v : values) m = std::min(m, v);
  if (gamma == 0 || !std::isfinite(m)) return m;
  Real total = 0;
  for (Real v : values)
    if (std::isfinite(v)) total += std::exp(-(v - m) / gamma);
  return m - gamma * std::log(total);
}

// d soft_min / d values[k]; one-hot on the first minimum when gamma == 0.
void soft_min_weights(std::span<const Real> values, Real gamma,
                      std::span<Real> weights) {
  Real m = kInf;
  std::size_t arg = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k] < m) {
      m = values[k];
      arg = k;
    }
  }
  std::fill(weights.begin(), weights.end(), Real(0));
  if (!std::isfinite(m)) return;
  if (gamma == 0) {
    weights[arg] = 1;
    return;
  }
  Real total = 0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    weights[k] = std::isfinite(values[k]) ? std::exp(-(values[k] - m) / gamma) : 0;
    total += weights[k];
  }
  for (Real& w : weights) w /= total;
}

// ---------------------------------------------------------------------------
// OTAM table

struct Cell {
  std::size_t i, j;
};

class OtamTable {
 public:
  OtamTable(const Tensor& cost, Real gamma)
      : rows_(cost.rows()),
        cols_(cost.cols() + 2),
        acc_(rows_ * cols_, kInf) {
    if (rows_ == 0 || cost.cols() == 0) {
      throw ContractError("otam: empty cost matrix");
    }
    for (std::size_t i = 0; i < rows_; ++i) {
      for (std::size_t j = 0; j < cols_; ++j) {
        if (i == 0 && j == 0) {
          acc_[0] = 0;
          continue;
        }
        std::array<Real, 3> vals;
        const std::size_t n = predecessor_values(i, j, vals);
        acc(i, j) = (is_pad(j) ? Real(0) : cost(i, j - 1)) +
                    soft_min(std::span<const Real>(vals.data(), n), gamma);
      }
    }
  }

  Real distance() const {
    return acc(rows_ - 1, cols_ - 1) / static_cast<Real>(rows_);
  }

  // Gradient of distance() w.r.t. the unpadded cost entries, scaled by g.
  void backward(Real gamma, Real g, Tensor& grad_cost) const {
    std::vector<Real> adj(rows_ * cols_, 0);
    adj.back() = g / static_cast<Real>(rows_);
    for (std::size_t i = rows_; i-- > 0;) {
      for (std::size_t j = cols_; j-- > 0;) {
        const Real a = adj[i * cols_ + j];
        if (a == 0 || (i == 0 && j == 0)) continue;
        if (!is_pad(j)) grad_cost(i, j - 1) += a;
        std::array<Cell, 3> preds;
        std::array<Real, 3> vals, weights;
        const std::size_t n = predecessors(i, j, preds);
        for (std::size_t k = 0; k < n; ++k) vals[k] = acc(preds[k].i, preds[k].j);
        soft_min_weights(std::span<const Real>(vals.data(), n), gamma,
                         std::span<Real>(weights.data(), n));
        for (std::size_t k = 0; k < n; ++k)
          adj[preds[k].i * cols_ + preds[k].j] += a * weights[k];
      }
    }
  }

 private:
  bool is_pad(std::size_t j) const { return j == 0 || j == cols_ - 1; }

  Real& acc(std::size_t i, std::size_t j) { return acc_[i * cols_ + j]; }
  Real acc(std::size_t i, std::size_t j) const { return acc_[i * cols_ + j]; }

  // Order: horizontal, diagonal, vertical (padding columns only).
  std::size_t predecessors(std::size_t i, std::size_t j,
                           std::array<Cell, 3>& out) const {
    std::size_t n = 0;
    if (j > 0) out[n++] = {i, j - 1};
    if (i > 0 && j > 0) out[n++] = {i - 1, j - 1};
    if (i > 0 && is_pad(j)) out[n++] = {i - 1, j};
    return n;
  }

  std::size_t predecessor_values(std::size_t i, std::size_t j,
                                 std::array<Real, 3>& vals) const {
    std::array<Cell, 3> preds;
    const std::size_t n = predecessors(i, j, preds);
    for (std::size_t k = 0; k < n; ++k) vals[k] = acc(preds[k].i, preds[k].j);
    return n;
  }

  std::size_t rows_, cols_;
  std::vector<Real> acc_;
};

// ---------------------------------------------------------------------------
// Bi-MHM

struct DirectionalMins {
  std::vector<Real> row_min;  // per query token, over support
  std::vector<Real> col_min;  // per support token, over query
};

DirectionalMins directional_mins(const Tensor& c, Real gamma) {
  const std::size_t tq = c.rows(), ts = c.cols();
  if (tq == 0 || ts == 0) throw ContractError("bimhm: empty cost matrix");
  DirectionalMins out{std::vector<Real>(tq), std::vector<Real>(ts)};
  if (gamma == 0) {
    // Single sweep updating both directions.
    std::fill(out.row_min.begin(), out.row_min.end(), kInf);
    std::fill(out.col_min.begin(), out.col_min.end(), kInf);
    for (std::size_t i = 0; i < tq; ++i) {
      for (std::size_t j = 0; j < ts; ++j) {
        const Real v = c(i, j);
        out.row_min[i] = std::min(out.row_min[i], v);
        out.col_min[j] = std::min(out.col_min[j], v);
      }
    }
    return out;
  }
  std::vector<Real> buf(std::max(tq, ts));
  for (std::size_t i = 0; i < tq; ++i) {
    for (std::size_t j = 0; j < ts; ++j) buf[j] = c(i, j);
    out.row_min[i] = soft_min(std::span<const Real>(buf.data(), ts), gamma);
  }
  for (std::size_t j = 0; j < ts; ++j) {
    for (std::size_t i = 0; i < tq; ++i) buf[i] = c(i, j);
    out.col_min[j] = soft_min(std::span<const Real>(buf.data(), tq), gamma);
  }
  return out;
}

Real bimhm_from_mins(const DirectionalMins& m) {
  Real rows = 0, cols = 0;
  for (Real v : m.row_min) rows += v;
  for (Real v : m.col_min) cols += v;
  return rows / static_cast<Real>(m.row_min.size()) +
         cols / static_cast<Real>(m.col_min.size());
}

}  // namespace

Real otam_distance(const CostMatrix& cost) {
  return OtamTable(cost.entries, 0).distance();
}

Real otam_soft_distance(const CostMatrix& cost, Real gamma) {
  if (gamma < 0) throw ContractError("otam: negative temperature");
  return OtamTable(cost.entries, gamma).distance();
}

Real bimhm_distance(const CostMatrix& cost) {
  return bimhm_from_mins(directional_mins(cost.entries, 0));
}

Real bimhm_soft_distance(const CostMatrix& cost, Real gamma) {
  if (gamma < 0) throw ContractError("bimhm: negative temperature");
  return bimhm_from_mins(directional_mins(cost.entries, gamma));
}

Real metric_distance(const CostMatrix& cost, Metric metric, Real gamma) {
  return metric == Metric::kOtam ? otam_soft_distance(cost, gamma)
                                 : bimhm_soft_distance(cost, gamma);
}

Real fuse_velocities(std::span<const Real> distances,
                     std::span<const Real> alphas) {
  if (distances.size() != alphas.size()) {
    throw DimensionError("fuse_velocities: " +
                         std::to_string(distances.size()) + " distances vs " +
                         std::to_string(alphas.size()) + " weights");
  }
  Real total = 0;
  for (std::size_t n = 0; n < distances.size(); ++n)
    total += alphas[n] * distances[n];
  return total;
}

namespace {

void check_pyramid_pair(std::size_t support_levels, std::size_t query_levels,
                        const ScaleMask& scales, std::size_t alphas) {
  if (support_levels != query_levels) {
    throw ContractError("distance_profile: pyramids have " +
                        std::to_string(support_levels) + " and " +
                        std::to_string(query_levels) + " scales");
  }
  if (scales.levels() != support_levels) {
    throw ContractError("distance_profile: scale mask " + scales.str() +
                        " does not cover " + std::to_string(support_levels) +
                        " scales");
  }
  if (alphas != scales.active().size()) {
    throw DimensionError("distance_profile: " + std::to_string(alphas) +
                         " fusion weights for " +
                         std::to_string(scales.active().size()) +
                         " enabled scales");
  }
}

}  // namespace

DistanceProfile distance_profile(const VelocityPyramid& support,
                                 const VelocityPyramid& query,
                                 std::span<const Real> alphas, Metric metric,
                                 const ScaleMask& scales) {
  check_pyramid_pair(support.scales(), query.scales(), scales, alphas.size());
  DistanceProfile profile;
  std::vector<Real> d;
  for (std::size_t n : scales.active()) {
    const Tensor& s = support.levels[n].tokens;
    const Tensor& q = query.levels[n].tokens;
    if (s.rows() != q.rows() || s.cols() != q.cols()) {
      throw ContractError("distance_profile: scale " + std::to_string(n + 1) +
                          " token shapes differ");
    }
    const Real dn = metric_distance(cosine_cost(q, s), metric, 0);
    profile.per_scale.push_back({n + 1, dn});
    d.push_back(dn);
  }
  profile.alphas.assign(alphas.begin(), alphas.end());
  profile.fused = fuse_velocities(d, alphas);
  return profile;
}

std::vector<Real> fusion_weights(const ModelParams& model, AlphaMode mode,
                                 const ScaleMask& scales) {
  Tape tape;
  const auto w = fusion_weights(tape, model, mode, scales).value().data();
  return std::vector<Real>(w.begin(), w.end());
}

// ---------------------------------------------------------------------------
// Tape ops

Var otam_distance(Var cost, Real gamma) {
  if (gamma < 0) throw ContractError("otam: negative temperature");
  auto table = std::make_shared<OtamTable>(cost.value(), gamma);
  const Real value = table->distance();
  const std::size_t ic = cost.id();
  return cost.tape().record(
      Tensor::scalar(value), [ic, gamma, table](Tape& t, std::size_t self) {
        const Real f = backward_fault_factor("otam");
        table->backward(gamma, f * t.out_grad(self)[0], t.grad_buffer(ic));
      });
}

Var bimhm_distance(Var cost, Real gamma) {
  if (gamma < 0) throw ContractError("bimhm: negative temperature");
  const Tensor& c = cost.value();
  const Real value = bimhm_from_mins(directional_mins(c, gamma));
  const std::size_t ic = cost.id();
  return cost.tape().record(
      Tensor::scalar(value), [ic, gamma](Tape& t, std::size_t self) {
        const Real f = backward_fault_factor("bimhm");
        const Real g = f * t.out_grad(self)[0];
        const Tensor& c = t.value(ic);
        Tensor& gc = t.grad_buffer(ic);
        const std::size_t tq = c.rows(), ts = c.cols();
        std::vector<Real> vals(std::max(tq, ts)), w(std::max(tq, ts));
        for (std::size_t i = 0; i < tq; ++i) {
          for (std::size_t j = 0; j < ts; ++j) vals[j] = c(i, j);
          soft_min_weights(std::span<const Real>(vals.data(), ts), gamma,
                           std::span<Real>(w.data(), ts));
          for (std::size_t j = 0; j < ts; ++j)
            gc(i, j) += g * w[j] / static_cast<Real>(tq);
        }
        for (std::size_t j = 0; j < ts; ++j) {
          for (std::size_t i = 0; i < tq; ++i) vals[i] = c(i, j);
          soft_min_weights(std::span<const Real>(vals.data(), tq), gamma,
                           std::span<Real>(w.data(), tq));
          for (std::size_t i = 0; i < tq; ++i)
            gc(i, j) += g * w[i] / static_cast<Real>(ts);
        }
      });
}

Var metric_distance(Var cost, Metric metric, Real gamma) {
  return metric == Metric::kOtam ? otam_distance(cost, gamma)
                                 : bimhm_distance(cost, gamma);
}

Var fusion_weights(Tape& tape, const ModelParams& model, AlphaMode mode,
                   const ScaleMask& scales) {
  if (scales.levels() != model.config.levels) {
    throw ConfigError("scale mask " + scales.str() + " does not match N=" +
                      std::to_string(model.config.levels));
  }
  const auto active = scales.active();
  if (mode == AlphaMode::kFixed) {
    return tape.constant(Tensor::filled(
        {1, active.size()}, Real(1) / static_cast<Real>(active.size())));
  }
  Var logits = tape.param(model.alpha_logits);
  std::vector<Var> picked;
  for (std::size_t n : active) picked.push_back(slice_cols(logits, n, n + 1));
  return softmax_rows(concat_cols(picked));
}

Var fused_distance(const PyramidVars& support, const PyramidVars& query,
                   Var alphas, Metric metric, Real gamma,
                   const ScaleMask& scales) {
  check_pyramid_pair(support.levels.size(), query.levels.size(), scales,
                     alphas.value().size());
  std::vector<Var> d;
  for (std::size_t n : scales.active()) {
    d.push_back(metric_distance(
        cosine_cost(query.levels[n].tokens, support.levels[n].tokens), metric,
        gamma));
  }
  Var row = assemble(d, 1, d.size());
  return sum(mul(row, alphas));
}

}  // namespace mvp
