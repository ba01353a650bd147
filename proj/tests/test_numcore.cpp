#include <cmath>
#include <functional>
#include <numeric>

#include "doctest.h"
#include "hidepet/numcore/gradcheck.hpp"
#include "hidepet/numcore/kernels.hpp"
#include "hidepet/numcore/optim.hpp"
#include "hidepet/numcore/rng.hpp"
#include "hidepet/numcore/tape.hpp"

using namespace hidepet;
using T = Tensor<double>;

namespace {

T random_tensor(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  T t({r, c});
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("affine on identity input returns W") {
  Tape<double> tape;
  T w = T::matrix(2, 2, {1, 2, 3, 4});
  auto y = affine(tape, tape.constant(T::identity(2)), tape.constant(w));
  CHECK(tape.value(y).bit_equal(w));
}

TEST_CASE("affine adds a row bias") {
  Tape<double> tape;
  auto y = affine(tape, tape.constant(T::matrix(1, 2, {1, 1})), tape.constant(T::identity(2)),
                  tape.constant(T({2}, std::vector<double>{5, 5})));
  CHECK(tape.value(y)[0] == 6.0);
  CHECK(tape.value(y)[1] == 6.0);
}

TEST_CASE("affine 3x4 by 4x2 against exact product") {
  // exact in binary: every entry is a short dyadic fraction
  T a = T::matrix(3, 4, {0.5, -1.0, 2.0, 0.25, 1.5, 0.75, -0.5, 3.0, -2.0, 1.25, 0.0, -1.5});
  T b = T::matrix(4, 2, {1.0, -0.5, 0.25, 2.0, -1.5, 0.5, 0.75, -1.25});
  const double expect[] = {-2.5625, -1.5625, 4.6875, -3.25, -2.8125, 5.375};
  Tape<double> tape;
  auto y = matmul(tape, tape.constant(a), tape.constant(b));
  for (int i = 0; i < 6; ++i) CHECK(std::abs(tape.value(y)[i] - expect[i]) <= 1e-12);
}

TEST_CASE("affine rejects mismatched inner dimension") {
  Tape<double> tape;
  CHECK_THROWS_AS(matmul(tape, tape.constant(T({3, 4})), tape.constant(T({3, 2}))), DimensionError);
  CHECK_THROWS_AS(affine(tape, tape.constant(T({3, 4})), tape.constant(T({4, 2})),
                         tape.constant(T({3}))),
                  DimensionError);
}

TEST_CASE("softmax rows") {
  Tape<double> tape;
  auto y = softmax_rows(tape, tape.constant(T::matrix(1, 2, {0, 0})));
  CHECK(tape.value(y)[0] == doctest::Approx(0.5).epsilon(1e-15));

  auto z = softmax_rows(tape, tape.constant(T::matrix(1, 3, {1, 2, 3})));
  const double expect[] = {0.090030573170380457998, 0.24472847105479765247, 0.66524095577482188953};
  for (int i = 0; i < 3; ++i) CHECK(std::abs(tape.value(z)[i] - expect[i]) <= 1e-15);

  auto s = softmax_rows(tape, tape.constant(T::matrix(1, 3, {1 + 7.5, 2 + 7.5, 3 + 7.5})));
  for (int i = 0; i < 3; ++i) CHECK(std::abs(tape.value(s)[i] - tape.value(z)[i]) <= 1e-15);

  CHECK_THROWS_AS(softmax_rows(tape, tape.constant(T::matrix(1, 2, {NAN, 0}))), NumericError);
}

TEST_CASE("softmax property: rows are distributions") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tape<double> tape;
    T x = random_tensor(rng, 5, 7, 10.0);
    const auto& y = tape.value(softmax_rows(tape, tape.constant(x)));
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0;
      for (double v : y.row(r)) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("cross entropy values") {
  std::vector<std::size_t> tgt = {1};
  Tape<double> tape;
  auto sat = cross_entropy(tape, tape.constant(T::matrix(1, 3, {0, 40, 0})), std::span(tgt));
  CHECK(tape.value(sat)[0] <= 1e-6);
  CHECK(tape.value(sat)[0] >= 0.0);

  auto uni = cross_entropy(tape, tape.constant(T({1, 5})), std::span(tgt));
  CHECK(std::abs(tape.value(uni)[0] - std::log(5.0)) <= 1e-15);

  T l = T::matrix(4, 3, {0.3, -1.2, 2.0, 1.5, 0.1, -0.7, -0.4, 0.9, 0.25, 2.2, 2.1, -3.0});
  std::vector<std::size_t> t4 = {2, 0, 1, 1};
  auto ce = cross_entropy(tape, tape.constant(l), std::span(t4));
  CHECK(std::abs(tape.value(ce)[0] - 0.45982516336012773067) <= 1e-10);

  std::vector<std::size_t> bad = {3};
  CHECK_THROWS_AS(cross_entropy(tape, tape.constant(T({1, 3})), std::span(bad)), IndexError);
}

TEST_CASE("backward on simple functionals") {
  T x({2, 3}, 0.7);
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    tape.backward(sum(tape, tape.param(x)));
  }
  for (double g : x.grad()) CHECK(g == 1.0);

  T s({1, 1}, 3.0);
  s.set_requires_grad(true);
  Tape<double> tape;
  Var v = tape.param(s);
  Var loss = mul(tape, v, v);
  tape.backward(loss);
  CHECK(s.grad()[0] == 6.0);
  tape.backward(loss);
  CHECK(s.grad()[0] == 12.0);  // accumulates until cleared
  s.zero_grad();
  CHECK(s.grad()[0] == 0.0);

  Tape<double> t2;
  CHECK_THROWS_AS(t2.backward(t2.param(x)), ContractError);
}

TEST_CASE("frozen leaves receive no gradient") {
  T w({2, 2}, 1.0);
  T x({1, 2}, 1.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  tape.backward(sum(tape, matmul(tape, tape.param(x), tape.param(w))));
  CHECK_FALSE(w.has_grad());
  CHECK(x.grad()[0] == 2.0);
}

TEST_CASE("finite differences: x squared") {
  T x({1, 1}, 1.3);
  auto rep = finite_diff_check(
      [&](Tape<double>& t) {
        Var v = t.param(x);
        return sum(t, mul(t, v, v));
      },
      {{"x", &x}}, 1e-5);
  CHECK(rep[0].max_rel_err <= 1e-8);
  CHECK(rep[0].max_abs_err >= 0.0);
}

TEST_CASE("finite differences: eps range and determinism contract") {
  T x({1, 1}, 1.0);
  auto f = [&](Tape<double>& t) { return sum(t, t.param(x)); };
  CHECK_THROWS_AS(finite_diff_check(f, {{"x", &x}}, 1e-2), ContractError);
  CHECK_THROWS_AS(finite_diff_check(f, {{"x", &x}}, 1e-9), ContractError);
  double drift = 0.0;
  auto g = [&](Tape<double>& t) {
    drift += 1.0;
    return sum(t, t.constant(T({1, 1}, drift)));
  };
  CHECK_THROWS_AS(finite_diff_check(g, {{"x", &x}}, 1e-5), ContractError);
}

TEST_CASE("finite differences: cross entropy of affine") {
  Rng rng(5);
  T x = random_tensor(rng, 6, 4);
  T w = random_tensor(rng, 4, 3);
  T b = random_tensor(rng, 1, 3);
  std::vector<std::size_t> y = {0, 2, 1, 1, 0, 2};
  auto rep = finite_diff_check(
      [&](Tape<double>& t) {
        return cross_entropy(t, affine(t, t.param(x), t.param(w), t.param(b)), std::span(y));
      },
      {{"x", &x}, {"W", &w}, {"b", &b}}, 1e-5);
  for (const auto& r : rep) CHECK_MESSAGE(r.max_rel_err <= 1e-6, r.param_name);
}

// Each op is checked on 20 random instances; a random linear functional
// turns non-scalar outputs into a scalar loss.
TEST_CASE("finite differences: every op on 20 random instances") {
  Rng rng(2024);
  using Builder = std::function<Var(Tape<double>&, std::vector<Var>&)>;
  struct Case {
    const char* name;
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    Builder build;
  };
  std::vector<std::size_t> cols = {2, 0, 2};
  std::vector<std::size_t> targets = {1, 0, 3};
  std::vector<Case> cases = {
      {"affine", {{3, 4}, {4, 5}, {1, 5}}, [](auto& t, auto& v) { return affine(t, v[0], v[1], v[2]); }},
      {"add", {{3, 4}, {3, 4}}, [](auto& t, auto& v) { return add(t, v[0], v[1]); }},
      {"scale", {{3, 4}}, [](auto& t, auto& v) { return scale(t, v[0], -1.7); }},
      {"mul", {{3, 4}, {3, 4}}, [](auto& t, auto& v) { return mul(t, v[0], v[1]); }},
      {"gelu", {{3, 4}}, [](auto& t, auto& v) { return gelu(t, v[0]); }},
      {"layer_norm", {{3, 6}}, [](auto& t, auto& v) { return layer_norm_rows(t, v[0]); }},
      {"softmax", {{3, 5}}, [](auto& t, auto& v) { return softmax_rows(t, v[0]); }},
      {"cross_entropy", {{3, 4}},
       [&](auto& t, auto& v) { return cross_entropy(t, v[0], std::span(targets)); }},
      {"select_columns", {{3, 4}},
       [&](auto& t, auto& v) { return select_columns(t, v[0], std::span(cols)); }},
      {"prepend_rows", {{2, 4}, {6, 4}}, [](auto& t, auto& v) { return prepend_rows(t, v[0], v[1], 2); }},
      {"take_row", {{6, 4}}, [](auto& t, auto& v) { return take_row(t, v[0], 2, 3, 1); }},
      {"attention", {{6, 4}, {8, 4}, {8, 4}},
       [](auto& t, auto& v) { return attention(t, v[0], v[1], v[2], 2, 2); }},
  };
  for (auto& c : cases) {
    for (int inst = 0; inst < 20; ++inst) {
      std::vector<T> params;
      for (auto [r, k] : c.shapes) params.push_back(random_tensor(rng, r, k));
      T probe;
      {
        Tape<double> t;
        std::vector<Var> vs;
        for (auto& p : params) vs.push_back(t.constant(p));
        const auto& out = t.value(c.build(t, vs));
        probe = random_tensor(rng, out.rows(), out.cols());
      }
      std::vector<NamedParam> named;
      for (std::size_t i = 0; i < params.size(); ++i) named.push_back({std::to_string(i), &params[i]});
      auto rep = finite_diff_check(
          [&](Tape<double>& t) {
            std::vector<Var> vs;
            for (auto& p : params) vs.push_back(t.param(p));
            Var out = c.build(t, vs);
            return sum(t, mul(t, out, t.constant(probe)));
          },
          named, 1e-5);
      for (const auto& r : rep) {
        CHECK_MESSAGE(r.max_rel_err <= 1e-6, c.name << " param " << r.param_name << " instance " << inst
                                                    << " rel " << r.max_rel_err);
      }
    }
  }
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  Rng rng(9);
  for (std::size_t m : {3u, 64u, 300u}) {
    const std::size_t k = 32, n = 40;
    std::vector<float> a(m * k), b(k * n), bt(n * k), at(k * m), c1(m * n), c2(m * n);
    for (auto& v : a) v = static_cast<float>(rng.normal());
    for (auto& v : b) v = static_cast<float>(rng.normal());
    for (auto& v : bt) v = static_cast<float>(rng.normal());
    for (auto& v : at) v = static_cast<float>(rng.normal());
    kernels::gemm_nn<float>(m, k, n, a, b, c1);
    kernels::reference::gemm_nn<float>(m, k, n, a, b, c2);
    CHECK(c1 == c2);
    kernels::gemm_nt<float>(m, k, n, a, bt, c1);
    kernels::reference::gemm_nt<float>(m, k, n, a, bt, c2);
    CHECK(c1 == c2);
    kernels::gemm_tn<float>(m, k, n, at, b, c1);
    kernels::reference::gemm_tn<float>(m, k, n, at, b, c2);
    CHECK(c1 == c2);
  }
  kernels::AttentionShape s{16, 4, 9, 11, 32};
  std::vector<double> q(s.batch * s.tq * s.dim), k(s.batch * s.tk * s.dim), v(k.size()), dout(q.size());
  for (auto* vec : {&q, &k, &v, &dout})
    for (auto& x : *vec) x = rng.normal();
  std::vector<double> p1(s.probs_size()), p2(p1.size()), o1(q.size()), o2(q.size());
  kernels::attention_forward<double>(s, q, k, v, p1, o1);
  kernels::reference::attention_forward<double>(s, q, k, v, p2, o2);
  CHECK(p1 == p2);
  CHECK(o1 == o2);
  std::vector<double> dq1(q.size()), dq2(q.size()), dk1(k.size()), dk2(k.size()), dv1(v.size()),
      dv2(v.size());
  kernels::attention_backward<double>(s, q, k, v, p1, dout, dq1, dk1, dv1);
  kernels::reference::attention_backward<double>(s, q, k, v, p2, dout, dq2, dk2, dv2);
  CHECK(dq1 == dq2);
  CHECK(dk1 == dk2);
  CHECK(dv1 == dv2);
}

TEST_CASE("rng determinism and splitting") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c = Rng(42).split(1), d = Rng(42).split(2);
  CHECK(c.next_u64() != d.next_u64());
  Rng n(3);
  double m = 0, s2 = 0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    const double x = n.normal();
    m += x;
    s2 += x * x;
  }
  m /= N;
  CHECK(std::abs(m) < 0.01);
  CHECK(std::abs(s2 / N - 1.0) < 0.02);
}

TEST_CASE("identical op sequences are bit-identical") {
  auto run = [] {
    Rng rng(77);
    T x = random_tensor(rng, 4, 6);
    T w = random_tensor(rng, 6, 6);
    w.set_requires_grad(true);
    Tape<double> t;
    Var h = layer_norm_rows(t, gelu(t, matmul(t, t.constant(x), t.param(w))));
    std::vector<std::size_t> y = {0, 1, 2, 3};
    t.backward(cross_entropy(t, h, std::span(y)));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  CHECK(run() == run());
}

TEST_CASE("adam with cosine schedule minimises a quadratic") {
  Tensor<float> x({1, 3}, std::vector<float>{3.f, -2.f, 1.f});
  x.set_requires_grad(true);
  Adam<float> opt({&x}, AdamConfig{0.1});
  for (int s = 0; s < 300; ++s) {
    opt.zero_grad();
    Tape<float> t;
    Var v = t.param(x);
    t.backward(sum(t, mul(t, v, v)));
    opt.step(cosine_lr(0.1, s, 300));
  }
  for (float v : x.data()) CHECK(std::abs(v) < 1e-2f);
  CHECK(cosine_lr(1.0, 0, 10) == 1.0);
  CHECK(std::abs(cosine_lr(1.0, 10, 10)) < 1e-12);
}
