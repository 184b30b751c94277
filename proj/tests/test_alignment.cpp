#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mvp/alignment.hpp"
#include "mvp/error.hpp"
#include "mvp/gradcheck.hpp"
#include "mvp/oracles.hpp"
#include "support.hpp"

using namespace mvp;
using test::random_tensor;

namespace {

CostMatrix random_cost(Rng& rng, std::size_t tq, std::size_t ts, bool coarse = false) {
  Tensor t = random_tensor(rng, tq, ts, 0, 2);
  if (coarse) {
    for (Real& v : t.data()) v = std::floor(v * 2) / 2;
  }
  return CostMatrix{t};
}

CostMatrix matrix(std::initializer_list<std::initializer_list<Real>> rows) {
  return CostMatrix{Tensor::from_rows(rows)};
}

}  // namespace

TEST_CASE("cosine cost") {
  Rng rng(1);
  const Tensor a = random_tensor(rng, 4, 6);
  const CostMatrix self = cosine_cost(a, a);
  for (std::size_t i = 0; i < 4; ++i) CHECK(self.entries(i, i) == 0);

  const CostMatrix orth = cosine_cost(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{0, 3}}));
  CHECK(orth.entries(0, 0) == doctest::Approx(1).epsilon(1e-15));
  const CostMatrix anti = cosine_cost(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{-2, -4}}));
  CHECK(anti.entries(0, 0) == doctest::Approx(2).epsilon(1e-15));

  const Tensor b = random_tensor(rng, 5, 6);
  const CostMatrix c = cosine_cost(a, b);
  CHECK(c.query_len() == 4);
  CHECK(c.support_len() == 5);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      const auto qi = a.row(i), sj = b.row(j);
      double dot = 0, nq = 0, ns = 0;
      for (std::size_t k = 0; k < 6; ++k) {
        dot += qi[k] * sj[k];
        nq += qi[k] * qi[k];
        ns += sj[k] * sj[k];
      }
      const double want = 1 - dot / std::sqrt(nq * ns);
      CHECK(std::abs(c.entries(i, j) - want) < 1e-14);
      CHECK(c.entries(i, j) >= 0);
      CHECK(c.entries(i, j) <= 2);
    }
  }

  Tensor zero_row = random_tensor(rng, 3, 6);
  for (Real& v : zero_row.row(1)) v = 0;
  try {
    cosine_cost(a, zero_row);
    FAIL("expected DegenerateInputError");
  } catch (const DegenerateInputError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("otam closed forms") {
  CHECK(otam_distance(CostMatrix{Tensor::zeros({3, 5})}) == 0);
  CHECK(otam_distance(matrix({{0.7}})) == Real(0.7));
  CHECK(oracle::otam_bruteforce(matrix({{0.7}})) == Real(0.7));
  CHECK(oracle::otam_bruteforce(CostMatrix{Tensor::zeros({4, 4})}) == 0);
  // The admissible paths of a 2 x 2 grid give the sums c10+c11, c00+c11 and
  // c00+c01; the smallest is 1 + 2.
  CHECK(otam_distance(matrix({{1, 2}, {3, 4}})) == Real(1.5));
  CHECK(otam_distance(matrix({{5, 1}, {1, 5}})) == Real(3));
  CHECK_THROWS_AS(otam_distance(CostMatrix{Tensor::zeros({0, 0})}), ContractError);
  CHECK_THROWS_AS(oracle::otam_bruteforce(CostMatrix{Tensor::zeros({9, 2})}),
                  ContractError);
}

TEST_CASE("otam equals the exhaustive path oracle") {
  Rng rng(2);
  int trials = 0;
  for (auto [tq, ts] : {std::pair{4, 4}, std::pair{4, 6}}) {
    for (int seed = 0; seed < 100; ++seed) {
      const CostMatrix c = random_cost(rng, tq, ts, seed % 4 == 0);
      CHECK(otam_distance(c) == oracle::otam_bruteforce(c));
      ++trials;
    }
  }
  for (std::size_t tq = 1; tq <= 6; ++tq) {
    for (std::size_t ts = 1; ts <= 6; ++ts) {
      for (int rep = 0; rep < 4; ++rep) {
        const CostMatrix c = random_cost(rng, tq, ts, rep % 2 == 1);
        INFO(tq << "x" << ts);
        CHECK(otam_distance(c) == oracle::otam_bruteforce(c));
        ++trials;
      }
    }
  }
  CHECK(trials >= 100);
}

TEST_CASE("otam is monotone in every entry") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t tq = 1 + rng.below(6), ts = 1 + rng.below(6);
    CostMatrix c = random_cost(rng, tq, ts);
    const Real before = otam_distance(c);
    c.entries(rng.below(tq), rng.below(ts)) += static_cast<Real>(rng.uniform(0, 1));
    CHECK(otam_distance(c) >= before);
  }
}

TEST_CASE("bimhm") {
  CHECK(bimhm_distance(CostMatrix{Tensor::zeros({2, 3})}) == 0);
  CHECK(bimhm_distance(matrix({{0, 1}, {1, 0}})) == 0);
  CHECK(bimhm_distance(matrix({{1, 2}, {3, 4}})) == Real((1 + 3) / 2.0 + (1 + 2) / 2.0));
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const CostMatrix c = random_cost(rng, 5, 5, trial % 3 == 0);
    CHECK(bimhm_distance(c) == oracle::bimhm_two_loop(c));
    const std::size_t tq = 1 + rng.below(6), ts = 1 + rng.below(6);
    const CostMatrix r = random_cost(rng, tq, ts);
    Tensor tr = Tensor::zeros({ts, tq});
    for (std::size_t i = 0; i < tq; ++i)
      for (std::size_t j = 0; j < ts; ++j) tr(j, i) = r.entries(i, j);
    CHECK(bimhm_distance(r) == bimhm_distance(CostMatrix{tr}));
    CHECK(bimhm_distance(r) == oracle::bimhm_two_loop(r));
  }
}

TEST_CASE("soft-min converges to the hard min") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const CostMatrix c = random_cost(rng, 2 + rng.below(5), 2 + rng.below(5));
    for (Metric m : {Metric::kOtam, Metric::kBiMhm}) {
      const Real hard = metric_distance(c, m);
      std::vector<Real> gaps;
      for (Real gamma : {Real(1e-1), Real(1e-2), Real(1e-3)}) {
        gaps.push_back(hard - metric_distance(c, m, gamma));
      }
      CHECK(gaps[0] > 0);
      CHECK(gaps[1] < gaps[0]);
      CHECK(gaps[2] <= gaps[1]);
      CHECK(gaps[2] >= 0);
      CHECK(gaps[2] < 1e-2);
    }
  }
  // A single query token admits exactly one path, so the soft value is exact.
  const CostMatrix row = random_cost(rng, 1, 5);
  CHECK(otam_soft_distance(row, Real(0.1)) == otam_distance(row));
  const CostMatrix c = random_cost(rng, 3, 4);
  CHECK(otam_soft_distance(c, 0) == otam_distance(c));
  CHECK(bimhm_soft_distance(c, 0) == bimhm_distance(c));
}

TEST_CASE("fuse_velocities") {
  const Real d[] = {0.3, 0.9, 1.7};
  const Real sel[] = {1, 0, 0};
  CHECK(fuse_velocities(d, sel) == Real(0.3));
  const Real ones[] = {1, 2, 3};
  const Real a[] = {0.5, 0.3, 0.2};
  CHECK(fuse_velocities(ones, a) == doctest::Approx(1.7).epsilon(1e-15));
  const Real zero[] = {0, 0, 0};
  CHECK(fuse_velocities(d, zero) == 0);
  const Real two[] = {0.5, 0.5};
  CHECK_THROWS_AS(fuse_velocities(d, two), DimensionError);
}

TEST_CASE("scale masks and fusion weights") {
  CHECK(ScaleMask::parse("101").active() == std::vector<std::size_t>{0, 2});
  CHECK(ScaleMask::parse("101").str() == "101");
  CHECK(ScaleMask::all(3).str() == "111");
  CHECK_THROWS_AS(ScaleMask::parse("000"), ConfigError);
  CHECK_THROWS_AS(ScaleMask::parse("12"), ConfigError);
  CHECK_THROWS_AS(ScaleMask::parse(""), ConfigError);
  CHECK(parse_metric("bimhm") == Metric::kBiMhm);
  CHECK_THROWS_AS(parse_metric("dtw"), ConfigError);
  CHECK_THROWS_AS(parse_alpha_mode("tuned"), ConfigError);

  ModelParams m = init_model(test::small_config(8, 8, 3), 0);
  const auto fixed = fusion_weights(m, AlphaMode::kFixed, ScaleMask::parse("101"));
  CHECK(fixed == std::vector<Real>{0.5, 0.5});
  m.alpha_logits.value = Tensor::from_rows({{0, 1, std::log(2.0)}});
  const auto learned = fusion_weights(m, AlphaMode::kLearned, ScaleMask::all(3));
  REQUIRE(learned.size() == 3);
  const double z = 1 + std::exp(1.0) + 2;
  CHECK(learned[0] == doctest::Approx(1 / z).epsilon(1e-14));
  CHECK(learned[1] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
  CHECK(learned[2] == doctest::Approx(2 / z).epsilon(1e-14));
  const auto sub = fusion_weights(m, AlphaMode::kLearned, ScaleMask::parse("011"));
  CHECK(sub[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 2)).epsilon(1e-14));
}

TEST_CASE("distance profile") {
  const ModelConfig cfg = test::small_config(8, 8, 3);
  Rng rng(6);
  const VelocityPyramid p = test::random_pyramid(rng, cfg);
  const VelocityPyramid q = test::random_pyramid(rng, cfg);
  const Real alphas[] = {0.2, 0.5, 0.3};
  for (Metric m : {Metric::kOtam, Metric::kBiMhm}) {
    const DistanceProfile self = distance_profile(p, p, alphas, m, ScaleMask::all(3));
    for (const ScaleDistance& sd : self.per_scale) CHECK(sd.distance == 0);
    CHECK(self.fused == 0);

    const DistanceProfile prof = distance_profile(p, q, alphas, m, ScaleMask::all(3));
    REQUIRE(prof.per_scale.size() == 3);
    std::vector<Real> d;
    for (std::size_t n = 0; n < 3; ++n) {
      const CostMatrix c = cosine_cost(q.levels[n].tokens, p.levels[n].tokens);
      d.push_back(metric_distance(c, m));
      CHECK(prof.per_scale[n].scale == n + 1);
      CHECK(prof.per_scale[n].distance == d.back());
    }
    CHECK(prof.fused == fuse_velocities(d, alphas));
    CHECK(prof.alphas == std::vector<Real>(alphas, alphas + 3));
  }

  const Real one[] = {0.8};
  const DistanceProfile single = distance_profile(p, q, one, Metric::kOtam, ScaleMask::parse("100"));
  REQUIRE(single.per_scale.size() == 1);
  CHECK(single.fused == Real(0.8) * single.per_scale[0].distance);

  VelocityPyramid short_q = q;
  short_q.levels.pop_back();
  CHECK_THROWS_AS(distance_profile(p, short_q, alphas, Metric::kOtam, ScaleMask::all(3)),
                  ContractError);
}

TEST_CASE("argmin is invariant under positive scaling of alpha") {
  const ModelConfig cfg = test::small_config(8, 8, 3);
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const VelocityPyramid q = test::random_pyramid(rng, cfg);
    std::vector<VelocityPyramid> protos;
    for (int k = 0; k < 5; ++k) protos.push_back(test::random_pyramid(rng, cfg));
    const Real base[] = {Real(rng.uniform()), Real(rng.uniform()), Real(rng.uniform())};
    const Real factor = static_cast<Real>(rng.uniform(0.1, 10));
    const Real scaled[] = {base[0] * factor, base[1] * factor, base[2] * factor};
    auto argmin = [&](std::span<const Real> a) {
      std::size_t best = 0;
      Real best_d = INFINITY;
      for (std::size_t k = 0; k < protos.size(); ++k) {
        const Real d = distance_profile(protos[k], q, a, Metric::kOtam, ScaleMask::all(3)).fused;
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      return best;
    };
    CHECK(argmin(base) == argmin(scaled));
  }
}

TEST_CASE("tape versions agree with the tensor versions") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor a = random_tensor(rng, 1 + rng.below(6), 8);
    const Tensor b = random_tensor(rng, 1 + rng.below(6), 8);
    const CostMatrix c = cosine_cost(a, b);
    Tape t;
    Var vc = cosine_cost(t.constant(a), t.constant(b));
    CHECK(vc.value().identical(c.entries));
    CHECK(otam_distance(vc, 0).value()[0] == otam_distance(c));
    CHECK(otam_distance(vc, Real(0.1)).value()[0] == otam_soft_distance(c, Real(0.1)));
    CHECK(bimhm_distance(vc, 0).value()[0] == bimhm_distance(c));
    CHECK(bimhm_distance(vc, Real(0.1)).value()[0] == bimhm_soft_distance(c, Real(0.1)));
  }

  const ModelConfig cfg = test::small_config(8, 8, 3);
  ModelParams m = init_model(cfg, 1);
  m.alpha_logits.value = random_tensor(rng, 1, 3);
  const VelocityPyramid p = test::random_pyramid(rng, cfg);
  const VelocityPyramid q = test::random_pyramid(rng, cfg);
  for (AlphaMode mode : {AlphaMode::kFixed, AlphaMode::kLearned}) {
    for (const char* mask : {"111", "101", "010"}) {
      const ScaleMask scales = ScaleMask::parse(mask);
      const auto alphas = fusion_weights(m, mode, scales);
      const Real want = distance_profile(p, q, alphas, Metric::kOtam, scales).fused;
      Tape t;
      PyramidVars pv, qv;
      for (std::size_t n = 0; n < 3; ++n) {
        pv.levels.push_back({t.constant(p.levels[n].tokens), t.constant(p.levels[n].text)});
        qv.levels.push_back({t.constant(q.levels[n].tokens), t.constant(q.levels[n].text)});
      }
      Var fused = fused_distance(pv, qv, fusion_weights(t, m, mode, scales),
                                 Metric::kOtam, 0, scales);
      CHECK(fused.value()[0] == want);
    }
  }
}

TEST_CASE("alignment gradients pass a finite-difference check") {
  Rng rng(9);
  Param a = test::random_param(rng, "query", 4, 6);
  Param b = test::random_param(rng, "support", 5, 6);
  std::vector<Param*> ps = {&a, &b};
  for (Metric m : {Metric::kOtam, Metric::kBiMhm}) {
    for (Real gamma : {Real(0.1), Real(1)}) {
      const GradReport r = grad_check(
          [&](Tape& t) {
            return metric_distance(cosine_cost(t.param(a), t.param(b)), m, gamma);
          },
          ps, Real(1e-5), Real(1e-6));
      INFO(metric_name(m) << " gamma " << gamma);
      CHECK(r.passed());
    }
  }
  // Hard min on a random matrix has a unique argmin path.
  Param c = test::random_param(rng, "cost", 4, 5);
  std::vector<Param*> pc = {&c};
  for (Metric m : {Metric::kOtam, Metric::kBiMhm}) {
    CHECK(grad_check([&](Tape& t) { return metric_distance(t.param(c), m, 0); }, pc,
                     Real(1e-6), Real(1e-6))
              .passed());
  }

  ModelParams model = init_model(test::small_config(6, 4, 2), 2);
  model.alpha_logits.value = random_tensor(rng, 1, 2);
  Param p1 = test::random_param(rng, "p1", 4, 6), p2 = test::random_param(rng, "p2", 2, 6);
  Param q1 = test::random_param(rng, "q1", 4, 6), q2 = test::random_param(rng, "q2", 2, 6);
  std::vector<Param*> pf = {&p1, &p2, &q1, &q2, &model.alpha_logits};
  const GradReport fused = grad_check(
      [&](Tape& t) {
        Var text = t.constant(Tensor::zeros({1, 6}));
        PyramidVars pv{{{t.param(p1), text}, {t.param(p2), text}}};
        PyramidVars qv{{{t.param(q1), text}, {t.param(q2), text}}};
        return fused_distance(pv, qv,
                              fusion_weights(t, model, AlphaMode::kLearned, ScaleMask::all(2)),
                              Metric::kOtam, Real(0.1), ScaleMask::all(2));
      },
      pf, Real(1e-5), Real(1e-6));
  CHECK(fused.passed());
}
