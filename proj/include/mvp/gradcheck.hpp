#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvp/autodiff.hpp"

namespace mvp {

struct GradEntry {
  std::string name;
  /// max_k |a_k - n_k| / max(1e-12, max_k |a_k| + max_k |n_k|)
  Real max_rel_error = 0;
  Real max_abs_analytic = 0;
  Real max_abs_numeric = 0;
  bool pass = true;
};

struct GradReport {
  std::vector<GradEntry> entries;
  Real tolerance = 0;

  bool passed() const;
  /// Entry with the largest relative error; nullptr when empty.
  const GradEntry* worst() const;
};

/// Builds the scalar loss of one forward pass on the given tape.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients of `forward` against central differences
/// with step `h`, one entry per param. Params are perturbed in place and
/// restored before returning.
GradReport grad_check(const LossBuilder& forward,
                      std::span<Param* const> params, Real h, Real tol);

}  // namespace mvp
