#include "mvp/oracles.hpp"

#include <limits>

#include "mvp/error.hpp"

namespace mvp::oracle {

namespace {

struct Walker {
  const Tensor& cost;
  std::size_t last_row;
  std::size_t end_col;  // padded index of the trailing zero column
  Real best = std::numeric_limits<Real>::infinity();

  bool pad(std::size_t j) const { return j == 0 || j == end_col; }

  Real cell(std::size_t i, std::size_t j) const {
    return pad(j) ? Real(0) : cost(i, j - 1);
  }

  // `total` already includes the cost of (i, j).
  void walk(std::size_t i, std::size_t j, Real total) {
    if (i == last_row && j == end_col) {
      if (total < best) best = total;
      return;
    }
    if (j < end_col) walk(i, j + 1, total + cell(i, j + 1));
    if (i < last_row && j < end_col) walk(i + 1, j + 1, total + cell(i + 1, j + 1));
    if (i < last_row && pad(j)) walk(i + 1, j, total + cell(i + 1, j));
  }
};

}  // namespace

Real otam_bruteforce(const CostMatrix& cost) {
  const std::size_t tq = cost.query_len(), ts = cost.support_len();
  if (tq == 0 || ts == 0) throw ContractError("otam oracle: empty matrix");
  if (tq > kMaxBruteForceLen || ts > kMaxBruteForceLen) {
    throw ContractError("otam oracle: " + std::to_string(tq) + "x" +
                        std::to_string(ts) + " exceeds enumeration guard " +
                        std::to_string(kMaxBruteForceLen));
  }
  Walker w{cost.entries, tq - 1, ts + 1};
  w.walk(0, 0, 0);
  return w.best / static_cast<Real>(tq);
}

Real bimhm_two_loop(const CostMatrix& cost) {
  const Tensor& c = cost.entries;
  const std::size_t tq = c.rows(), ts = c.cols();
  if (tq == 0 || ts == 0) throw ContractError("bimhm oracle: empty matrix");
  Real forward = 0;
  for (std::size_t i = 0; i < tq; ++i) {
    Real m = c(i, 0);
    for (std::size_t j = 1; j < ts; ++j)
      if (c(i, j) < m) m = c(i, j);
    forward += m;
  }
  Real backward = 0;
  for (std::size_t j = 0; j < ts; ++j) {
    Real m = c(0, j);
    for (std::size_t i = 1; i < tq; ++i)
      if (c(i, j) < m) m = c(i, j);
    backward += m;
  }
  return forward / static_cast<Real>(tq) + backward / static_cast<Real>(ts);
}

}  // namespace mvp::oracle
