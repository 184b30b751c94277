#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "mvp/autodiff.hpp"
#include "mvp/error.hpp"
#include "mvp/gradcheck.hpp"
#include "mvp/sti.hpp"
#include "support.hpp"

using namespace mvp;
using test::random_param;
using test::random_tensor;

namespace {

Tensor run(const std::function<Var(Tape&)>& f) {
  Tape t;
  return f(t).value();
}

// Loss that weights every output element differently so that gradient
// errors cannot cancel in a plain sum.
Var weighted_sum(Var y, std::uint64_t seed) {
  Rng rng(seed);
  Var w = y.tape().constant(random_tensor(rng, y.rows(), y.cols()));
  return sum(mul(y, w));
}

GradReport check_unary(const std::function<Var(Var)>& op, Param& x,
                       Real tol = Real(1e-6)) {
  Param* ps[] = {&x};
  return grad_check([&](Tape& t) { return weighted_sum(op(t.param(x)), 99); },
                    ps, Real(1e-5), tol);
}

}  // namespace

TEST_CASE("matmul identity and annihilator") {
  Rng rng(1);
  const Tensor a = random_tensor(rng, 2, 3);
  const Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  CHECK(run([&](Tape& t) { return matmul(t.constant(eye), t.constant(a)); })
            .identical(a));
  const Tensor zero = Tensor::zeros({3, 4});
  const Tensor out =
      run([&](Tape& t) { return matmul(t.constant(a), t.constant(zero)); });
  for (Real v : out.data()) CHECK(v == 0);
}

TEST_CASE("matmul matches a triple-loop oracle exactly") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor(rng, 3, 4), b = random_tensor(rng, 4, 2);
    const Tensor got =
        run([&](Tape& t) { return matmul(t.constant(a), t.constant(b)); });
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        Real acc = 0;
        for (std::size_t k = 0; k < 4; ++k) acc += a(i, k) * b(k, j);
        CHECK(got(i, j) == acc);
      }
    }
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape t;
  Var a = t.constant(Tensor::zeros({2, 3}));
  Var b = t.constant(Tensor::zeros({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("softmax rows") {
  const Tensor eq = run([](Tape& t) {
    return softmax_rows(t.constant(Tensor::from_rows({{3, 3, 3, 3}})));
  });
  for (Real v : eq.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  const Tensor two = run([](Tape& t) {
    return softmax_rows(t.constant(Tensor::from_rows({{0, std::log(3.0)}})));
  });
  CHECK(std::abs(two[0] - 0.25) < 1e-15);
  CHECK(std::abs(two[1] - 0.75) < 1e-15);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(rng, 4, 4, -10, 10);
    const Tensor p = run([&](Tape& t) { return softmax_rows(t.constant(x)); });
    for (std::size_t r = 0; r < 4; ++r) {
      Real s = 0;
      for (Real v : p.row(r)) s += v;
      CHECK(std::abs(s - 1) < 1e-12);
    }
  }
}

TEST_CASE("layer norm") {
  auto ln = [](const Tensor& x) {
    return run([&](Tape& t) {
      const std::size_t c = x.cols();
      return layer_norm(t.constant(x), t.constant(Tensor::filled({1, c}, 1)),
                        t.constant(Tensor::zeros({1, c})));
    });
  };
  const Tensor flat = ln(Tensor::from_rows({{2, 2, 2}}));
  for (Real v : flat.data()) CHECK(v == 0);

  const Tensor two = ln(Tensor::from_rows({{1, 3}}));
  const double expect = 1 / std::sqrt(1 + 1e-5);
  CHECK(two[0] == doctest::Approx(-expect).epsilon(1e-14));
  CHECK(two[1] == doctest::Approx(expect).epsilon(1e-14));

  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor(rng, 1, 16, -10, 10);
    const Tensor y = ln(x);
    auto moments = [](const Tensor& t) {
      double mean = 0, var = 0;
      for (Real v : t.data()) mean += v;
      mean /= 16;
      for (Real v : t.data()) var += (v - mean) * (v - mean);
      return std::pair{mean, var / 16};
    };
    const auto [in_mean, in_var] = moments(x);
    const auto [mean, var] = moments(y);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(var - in_var / (in_var + 1e-5)) < 1e-12);
    CHECK(std::abs(var - 1) < 1e-6);
  }
}

TEST_CASE("activations, mean_rows and concat") {
  const Tensor r = run([](Tape& t) {
    return relu(t.constant(Tensor::from_rows({{-1, 2}})));
  });
  CHECK(r[0] == 0);
  CHECK(r[1] == 2);

  const Tensor m = run([](Tape& t) {
    return mean_rows(t.constant(Tensor::from_rows({{1, 2}, {3, 4}})));
  });
  CHECK(m[0] == 2);
  CHECK(m[1] == 3);

  CHECK(gelu_value(0) == 0);
  CHECK(test::gelu_erf_series(0) == 0);
  const double x = 1.5;
  // x * Phi(x) - (-x) * Phi(-x) = x * (Phi(x) + Phi(-x)) = x
  CHECK(std::abs(test::gelu_erf_series(x) - test::gelu_erf_series(-x) - x) < 1e-14);
  CHECK(std::abs(gelu_value(x) - gelu_value(-x) - x) < 1e-14);
  for (double v = -4; v <= 4; v += 0.25) {
    CHECK(std::abs(gelu_value(v) - test::gelu_erf_series(v)) < 1e-3);
  }

  Tape t;
  CHECK_THROWS_AS(concat_rows(t.constant(Tensor::zeros({1, 2})),
                              t.constant(Tensor::zeros({1, 3}))),
                  DimensionError);
}

TEST_CASE("backward on simple graphs") {
  Rng rng(5);
  Param a = random_param(rng, "A", 3, 4);
  const Tensor x = random_tensor(rng, 4, 1);
  {
    Tape t;
    Var loss = sum(matmul(t.param(a), t.constant(x)));
    t.backward(loss);
    const Tensor g = t.grad(a);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < 4; ++k) CHECK(g(i, k) == x[k]);
  }
  Param w("W", random_tensor(rng, 3, 3, 0.1, 1));
  {
    Tape t;
    Var loss = sum(relu(t.param(w)));
    t.backward(loss);
    const Tensor g = t.grad(w);
    for (Real v : g.data()) CHECK(v == 1);
  }
  {
    Tape t;
    Var y = relu(t.param(w));
    CHECK_THROWS_AS(t.backward(y), ContractError);
  }
  {
    Param* ps[] = {&w};
    zero_grads(ps);
    for (int rep = 0; rep < 2; ++rep) {
      Tape t;
      backward(sum(t.param(w)), ps);
    }
    for (Real v : w.grad.data()) CHECK(v == 2);
  }
}

TEST_CASE("grad_check contract") {
  Rng rng(6);
  Param a = random_param(rng, "a", 2, 3);
  Param unused = random_param(rng, "unused", 2, 2);
  const Tensor x = random_tensor(rng, 3, 2);
  Param* ps[] = {&a, &unused};

  const GradReport linear = grad_check(
      [&](Tape& t) { return sum(matmul(t.param(a), t.constant(x))); }, ps,
      Real(1e-5), Real(1e-5));
  REQUIRE(linear.entries.size() == 2);
  CHECK(linear.entries[0].name == "a");
  CHECK(linear.entries[0].max_rel_error < 1e-9);
  CHECK(linear.entries[1].max_abs_analytic == 0);
  CHECK(linear.entries[1].max_abs_numeric == 0);
  CHECK(linear.passed());

  Param w("w", Tensor::from_rows({{0.5, -0.7, 1.2}, {-0.3, 0.9, -1.1}}));
  Param* pw[] = {&w};
  const Tensor before = w.value;
  const GradReport kinked = grad_check(
      [&](Tape& t) { return weighted_sum(relu(t.param(w)), 7); }, pw,
      Real(1e-5), Real(1e-5));
  CHECK(kinked.passed());
  CHECK(w.value.identical(before));
}

TEST_CASE("every op passes a finite-difference check") {
  Rng rng(7);
  Param x = random_param(rng, "x", 4, 6);
  Param y = random_param(rng, "y", 4, 6);
  Param z = random_param(rng, "z", 6, 3);
  Param row = random_param(rng, "row", 1, 6);
  Param s = random_param(rng, "s", 1, 1);
  Param w2 = random_param(rng, "w2", 1, 2);

  CHECK(check_unary([](Var v) { return transpose(v); }, x).passed());
  CHECK(check_unary([](Var v) { return softmax_rows(scale(v, 3)); }, x).passed());
  CHECK(check_unary([](Var v) { return gelu(v); }, x).passed());
  CHECK(check_unary([](Var v) { return relu(v); }, x).passed());
  CHECK(check_unary([](Var v) { return mean_rows(v); }, x).passed());
  CHECK(check_unary([](Var v) { return slice_rows(v, 1, 3); }, x).passed());
  CHECK(check_unary([](Var v) { return slice_cols(v, 2, 5); }, x).passed());
  CHECK(check_unary([](Var v) { return element(v, 2, 3); }, x).passed());

  auto multi = [&](std::vector<Param*> ps, const std::function<Var(Tape&)>& f) {
    return grad_check([&](Tape& t) { return weighted_sum(f(t), 11); }, ps,
                      Real(1e-5), Real(1e-6));
  };
  CHECK(multi({&x, &z}, [&](Tape& t) { return matmul(t.param(x), t.param(z)); })
            .passed());
  CHECK(multi({&x, &y}, [&](Tape& t) { return add(t.param(x), t.param(y)); })
            .passed());
  CHECK(multi({&x, &y}, [&](Tape& t) { return sub(t.param(x), t.param(y)); })
            .passed());
  CHECK(multi({&x, &y}, [&](Tape& t) { return mul(t.param(x), t.param(y)); })
            .passed());
  CHECK(multi({&x, &row}, [&](Tape& t) { return add_row(t.param(x), t.param(row)); })
            .passed());
  CHECK(multi({&x, &s}, [&](Tape& t) { return mul_scalar(t.param(x), t.param(s)); })
            .passed());
  CHECK(multi({&x, &y}, [&](Tape& t) { return concat_rows(t.param(x), t.param(y)); })
            .passed());
  CHECK(multi({&x, &y}, [&](Tape& t) { return concat_cols(t.param(x), t.param(y)); })
            .passed());
  CHECK(multi({&x, &w2}, [&](Tape& t) { return pair_pool(t.param(x), t.param(w2)); })
            .passed());
  Param gain = random_param(rng, "gain", 1, 6), bias = random_param(rng, "bias", 1, 6);
  CHECK(multi({&x, &gain, &bias},
              [&](Tape& t) {
                return layer_norm(t.param(x), t.param(gain), t.param(bias));
              })
            .passed());
  CHECK(multi({&x, &y},
              [&](Tape& t) {
                std::vector<Var> parts{element(t.param(x), 0, 0),
                                       element(t.param(y), 1, 2),
                                       element(t.param(x), 3, 5),
                                       element(t.param(y), 0, 1)};
                return assemble(parts, 2, 2);
              })
            .passed());

  Param logits = random_param(rng, "logits", 3, 4);
  Param* pl[] = {&logits};
  const std::vector<int> labels = {2, 0, 3};
  CHECK(grad_check(
            [&](Tape& t) {
              return cross_entropy(softmax_rows(t.param(logits)), labels);
            },
            pl, Real(1e-5), Real(1e-6))
            .passed());
}

TEST_CASE("full interaction stage passes a finite-difference check") {
  ModelParams m = init_model(test::small_config(8, 4, 1), 3);
  test::randomize(m, 4, 0.3);
  Rng rng(8);
  const Tensor x = random_tensor(rng, 4, 8), q = random_tensor(rng, 1, 8);
  std::vector<Param*> ps;
  m.stages[0].collect(ps);
  const GradReport r = grad_check(
      [&](Tape& t) {
        const StageTokens st =
            temporal_relation(t.constant(x), t.constant(q), m.stages[0]);
        Var out = channel_correction(st.tokens, st.text, m.stages[0]);
        return add(weighted_sum(out, 1), weighted_sum(st.text, 2));
      },
      ps, Real(1e-5), Real(1e-6));
  for (const GradEntry& e : r.entries) {
    INFO(e.name);
    CHECK(e.max_rel_error < 1e-6);
  }
}

#ifdef MVP_FAULT_INJECTION
TEST_CASE("fault injection breaks the gradient check") {
  Rng rng(9);
  Param x = random_param(rng, "x", 3, 4);
  Param* ps[] = {&x};
  auto check = [&] {
    return grad_check([&](Tape& t) { return weighted_sum(gelu(t.param(x)), 3); },
                      ps, Real(1e-5), Real(1e-5));
  };
  CHECK(check().passed());
  set_backward_fault("gelu");
  const GradReport broken = check();
  set_backward_fault("");
  CHECK_FALSE(broken.passed());
  CHECK(check().passed());
}
#endif
