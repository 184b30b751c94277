#include "mvp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mvp {

bool GradReport::passed() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const GradEntry& e) { return e.pass; });
}

const GradEntry* GradReport::worst() const {
  if (entries.empty()) return nullptr;
  return &*std::max_element(entries.begin(), entries.end(),
                            [](const GradEntry& a, const GradEntry& b) {
                              return a.max_rel_error < b.max_rel_error;
                            });
}

namespace {

Real evaluate(const LossBuilder& forward) {
  Tape tape;
  return forward(tape).value()[0];
}

}  // namespace

GradReport grad_check(const LossBuilder& forward,
                      std::span<Param* const> params, Real h, Real tol) {
  GradReport report;
  report.tolerance = tol;

  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var loss = forward(tape);
    tape.backward(loss);
    for (const Param* p : params) analytic.push_back(tape.grad(*p));
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    GradEntry entry;
    entry.name = p.name;
    Real max_diff = 0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const Real saved = p.value[i];
      p.value[i] = saved + h;
      const Real plus = evaluate(forward);
      p.value[i] = saved - h;
      const Real minus = evaluate(forward);
      p.value[i] = saved;
      const Real numeric = (plus - minus) / (2 * h);
      const Real a = analytic[k][i];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(a));
      entry.max_abs_numeric = std::max(entry.max_abs_numeric, std::abs(numeric));
    }
    entry.max_rel_error =
        max_diff / std::max(Real(1e-12),
                            entry.max_abs_analytic + entry.max_abs_numeric);
    entry.pass = entry.max_rel_error < tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mvp
