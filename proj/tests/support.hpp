#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mvp/rng.hpp"
#include "mvp/sti.hpp"

namespace mvp::test {

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols,
                            double lo = -1, double hi = 1) {
  std::vector<Real> v(rows * cols);
  for (Real& x : v) x = static_cast<Real>(rng.uniform(lo, hi));
  return Tensor({rows, cols}, std::move(v));
}

inline Param random_param(Rng& rng, std::string name, std::size_t rows,
                          std::size_t cols) {
  return Param(std::move(name), random_tensor(rng, rows, cols));
}

inline ModelConfig small_config(std::size_t channels = 8, std::size_t frames = 8,
                                std::size_t levels = 3, std::size_t heads = 2) {
  ModelConfig c;
  c.channels = channels;
  c.frames = frames;
  c.levels = levels;
  c.heads = heads;
  return c.resolved();
}

/// Randomizes every parameter, including the ones init_model leaves at
/// zero or one, so that no branch of the model is silently inactive.
inline void randomize(ModelParams& m, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (Param* p : m.params()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->value[i] += static_cast<Real>(rng.uniform(-scale, scale));
    }
  }
}

inline VelocityPyramid random_pyramid(Rng& rng, const ModelConfig& c) {
  VelocityPyramid p;
  for (std::size_t n = 1; n <= c.levels; ++n) {
    p.levels.push_back({random_tensor(rng, c.tokens_at(n), c.channels),
                        random_tensor(rng, 1, c.channels)});
  }
  return p;
}

inline bool same_bits(const VelocityPyramid& a, const VelocityPyramid& b) {
  if (a.levels.size() != b.levels.size()) return false;
  for (std::size_t n = 0; n < a.levels.size(); ++n) {
    if (!a.levels[n].tokens.identical(b.levels[n].tokens) ||
        !a.levels[n].text.identical(b.levels[n].text))
      return false;
  }
  return true;
}

/// Exact-erf GELU from the Maclaurin series of erf.
inline double gelu_erf_series(double x) {
  const double z = x / std::sqrt(2.0);
  double term = z, sum = z;
  for (int n = 1; n < 80; ++n) {
    term *= -z * z / n;
    sum += term / (2 * n + 1);
  }
  const double erf = 2 / std::sqrt(std::acos(-1.0)) * sum;
  return 0.5 * x * (1 + erf);
}

}  // namespace mvp::test
