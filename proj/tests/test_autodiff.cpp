#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "anchornet/autodiff.hpp"
#include "anchornet/optim.hpp"
#include "anchornet/rng.hpp"

using namespace anchornet;

namespace {

Tensor random_tensor(Rng& rng, std::vector<size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

// Plain nested-loop valid cross-correlation, written from the definition.
Tensor conv1d_oracle(const Tensor& x, const Tensor& w, const Tensor& b) {
  const size_t L = x.dim(0), ci = x.dim(1), k = w.dim(0), co = w.dim(2);
  Tensor out({L - k + 1, co});
  for (size_t t = 0; t + k <= L; ++t)
    for (size_t o = 0; o < co; ++o) {
      double acc = b.at(o);
      for (size_t d = 0; d < k; ++d)
        for (size_t c = 0; c < ci; ++c) acc += x.at(t + d, c) * w.at(d, c, o);
      out.at(t, o) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("conv1d forward matches the nested-loop definition") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t L = 3 + size_t(rng.uniform_int(0, 9));
    const size_t k = 1 + size_t(rng.uniform_int(0, int64_t(L) - 1));
    const size_t ci = 1 + size_t(rng.uniform_int(0, 4));
    const size_t co = 1 + size_t(rng.uniform_int(0, 4));
    const Tensor x = random_tensor(rng, {L, ci});
    const Tensor w = random_tensor(rng, {k, ci, co});
    const Tensor b = random_tensor(rng, {co});
    Tape t;
    const Tensor& got = t.value(t.conv1d(t.leaf(x), t.leaf(w), t.leaf(b)));
    const Tensor want = conv1d_oracle(x, w, b);
    REQUIRE(got.shape == want.shape);
    for (size_t i = 0; i < got.size(); ++i)
      CHECK(got.at(i) == Catch::Approx(want.at(i)).margin(1e-12));
  }
}

TEST_CASE("softmax is a max-shifted exponential distribution") {
  Tape t;
  Var p = t.softmax_vec(t.leaf(Tensor({2}, {0.0, std::log(3.0)})));
  CHECK(t.value(p).at(0) == Catch::Approx(0.25).epsilon(1e-12));
  CHECK(t.value(p).at(1) == Catch::Approx(0.75).epsilon(1e-12));

  // Shift invariance, including very large inputs.
  Tape t2;
  Var a = t2.softmax_vec(t2.leaf(Tensor({3}, {1000.0, 1001.0, 1002.0})));
  Var b = t2.softmax_vec(t2.leaf(Tensor({3}, {0.0, 1.0, 2.0})));
  double suma = 0.0;
  for (size_t i = 0; i < 3; ++i) {
    CHECK(t2.value(a).at(i) == Catch::Approx(t2.value(b).at(i)).epsilon(1e-12));
    suma += t2.value(a).at(i);
  }
  CHECK(suma == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cross entropy is the negative log of the picked probability") {
  Tape t;
  Var ce = t.cross_entropy(t.leaf(Tensor({3}, {0.2, 0.5, 0.3})), 1);
  CHECK(t.value(ce).at(0) == Catch::Approx(-std::log(0.5)).epsilon(1e-12));
  Var floored = t.cross_entropy(t.leaf(Tensor({2}, {0.0, 1.0})), 0);
  CHECK(t.value(floored).at(0) == Catch::Approx(-std::log(1e-12)).epsilon(1e-9));
  CHECK_THROWS_AS(t.cross_entropy(t.leaf(Tensor({2}, {0.5, 0.5})), 2), std::invalid_argument);
}

TEST_CASE("every op's gradient survives a finite-difference check") {
  Rng rng(99);
  const size_t L = 6, C = 4, A = 3, CO = 3;

  Param x("x", random_tensor(rng, {L, C}));
  Param w("w", random_tensor(rng, {2, C, CO}));
  Param b("b", random_tensor(rng, {CO}));
  Param gate("gate", random_tensor(rng, {L}));
  Param chan("chan", random_tensor(rng, {C}));
  Param fcw("fcw", random_tensor(rng, {C, A}));
  Param fcb("fcb", random_tensor(rng, {A}));
  Param table("table", random_tensor(rng, {5, C}));
  const std::vector<int> idx = {0, 3, 1, 4, 2, 2};

  struct Case {
    const char* name;
    LossBuilder build;
    std::vector<Param*> params;
  };
  std::vector<Case> cases;
  cases.push_back({"conv relu softmax ce",
                   [&](Tape& t) {
                     Var h = t.relu(t.conv1d(t.param(x), t.param(w), t.param(b)));
                     Var m = t.spatial_mean(h);
                     return t.cross_entropy(t.softmax_vec(m), 1);
                   },
                   {&x, &w, &b}});
  cases.push_back({"weighted spatial sum",
                   [&](Tape& t) {
                     Var g = t.softmax_vec(t.param(gate));
                     Var c = t.weighted_spatial_sum(t.param(x), g);
                     return t.cross_entropy(t.softmax_vec(c), 0);
                   },
                   {&x, &gate}});
  cases.push_back({"weighted channel sum",
                   [&](Tape& t) {
                     Var c = t.softmax_vec(t.param(chan));
                     Var s = t.weighted_channel_sum(t.param(x), c);
                     return t.cross_entropy(t.softmax_vec(s), 2);
                   },
                   {&x, &chan}});
  cases.push_back({"scale rows",
                   [&](Tape& t) {
                     Var s = t.softmax_vec(t.param(gate));
                     Var f = t.scale_rows(t.param(x), s);
                     return t.cross_entropy(t.softmax_vec(t.spatial_mean(f)), 1);
                   },
                   {&x, &gate}});
  cases.push_back({"fc",
                   [&](Tape& t) {
                     Var h = t.fc(t.param(chan), t.param(fcw), t.param(fcb));
                     return t.cross_entropy(t.softmax_vec(h), 0);
                   },
                   {&chan, &fcw, &fcb}});
  cases.push_back({"gather rows",
                   [&](Tape& t) {
                     Var e = t.gather_rows(t.param(table), idx);
                     return t.cross_entropy(t.softmax_vec(t.spatial_mean(e)), 1);
                   },
                   {&table}});
  cases.push_back({"add scale reshape",
                   [&](Tape& t) {
                     Var a = t.reshape(t.param(x), {C, L});
                     Var s = t.add(a, a);
                     Var m = t.spatial_mean(t.scale(s, 0.25));
                     return t.cross_entropy(t.softmax_vec(m), 3);
                   },
                   {&x}});

  for (const Case& c : cases) {
    CAPTURE(c.name);
    const double err = grad_check(c.build, c.params, 1e-5, 40, 555);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("shape and geometry violations throw before any compute") {
  Tape t;
  Var x = t.leaf(Tensor({4, 3}));
  Var w = t.leaf(Tensor({2, 5, 2}));  // wrong input channels
  Var b = t.leaf(Tensor({2}));
  CHECK_THROWS_AS(t.conv1d(x, w, b), std::invalid_argument);
  Var wide = t.leaf(Tensor({6, 3, 2}));  // kernel longer than input
  CHECK_THROWS_AS(t.conv1d(x, wide, b), GeometryError);
  CHECK_THROWS_AS(t.softmax_vec(x), std::invalid_argument);
  CHECK_THROWS_AS(t.add(x, b), std::invalid_argument);
  CHECK_THROWS_AS(t.reshape(x, {5, 5}), std::invalid_argument);
  CHECK_THROWS_AS(t.weighted_spatial_sum(x, b), std::invalid_argument);
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);  // non-scalar loss
}

TEST_CASE("non-finite values are rejected at the op boundary") {
  Tape t;
  Tensor bad({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(t.leaf(bad), NumericalError);
  Tensor inf({1}, {std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(t.leaf(inf), NumericalError);
}

TEST_CASE("backward accumulates into parameters and respects the seed") {
  Param p("p", Tensor({2}, {3.0, -1.0}));
  p.zero_grad();
  {
    Tape t;
    Var v = t.param(p);
    Var loss = t.cross_entropy(t.softmax_vec(v), 0);
    t.backward(loss, 0.5);
  }
  {
    Tape t;
    Var v = t.param(p);
    Var loss = t.cross_entropy(t.softmax_vec(v), 0);
    t.backward(loss, 0.5);
  }
  // Two half-seeded passes equal one full pass.
  Param q("q", Tensor({2}, {3.0, -1.0}));
  q.zero_grad();
  {
    Tape t;
    Var v = t.param(q);
    Var loss = t.cross_entropy(t.softmax_vec(v), 0);
    t.backward(loss);
  }
  CHECK(p.grad.at(0) == Catch::Approx(q.grad.at(0)).epsilon(1e-12));
  CHECK(p.grad.at(1) == Catch::Approx(q.grad.at(1)).epsilon(1e-12));
}

TEST_CASE("sgd applies decay, momentum, and the learning rate in order") {
  Param p("p", Tensor({1}, {1.0}));
  p.zero_grad();
  p.grad.at(0) = 0.5;
  Sgd opt({0.1, 0.9, 0.01});
  std::vector<Param*> ps = {&p};
  opt.step(ps);
  // g' = 0.5 + 0.01*1.0 = 0.51; buf = 0.51; p = 1 - 0.1*0.51 = 0.949
  CHECK(p.value.at(0) == Catch::Approx(0.949).epsilon(1e-12));
  p.grad.at(0) = 0.5;
  opt.step(ps);
  // g' = 0.5 + 0.01*0.949 = 0.50949; buf = 0.9*0.51 + 0.50949 = 0.96849
  // p = 0.949 - 0.1*0.96849 = 0.852151
  CHECK(p.value.at(0) == Catch::Approx(0.852151).epsilon(1e-12));

  p.grad.at(0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(ps), NumericalError);
  CHECK_THROWS_AS(Sgd({-0.1, 0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(Sgd({0.1, 1.0, 0.0}), std::invalid_argument);
}

TEST_CASE("fgsm moves each coordinate by eps against the gradient sign") {
  Tensor x({4}, {1.0, 2.0, 3.0, 4.0});
  Tensor g({4}, {0.5, -0.25, 0.0, 2.0});
  const Tensor out = fgsm_perturb(x, g, 0.2);
  CHECK(out.at(0) == Catch::Approx(1.2));
  CHECK(out.at(1) == Catch::Approx(1.8));
  CHECK(out.at(2) == 3.0);  // sign(0) leaves the value alone
  CHECK(out.at(3) == Catch::Approx(4.2));

  const Tensor same = fgsm_perturb(x, g, 0.0);
  CHECK(same.data == x.data);

  Tensor wrong({3}, {0.0, 0.0, 0.0});
  CHECK_THROWS_AS(fgsm_perturb(x, wrong, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(fgsm_perturb(x, g, -0.1), std::invalid_argument);
}

TEST_CASE("grad_check polices its epsilon range") {
  Param p("p", Tensor({1}, {1.0}));
  auto build = [&](Tape& t) { return t.cross_entropy(t.softmax_vec(t.param(p)), 0); };
  std::vector<Param*> ps = {&p};
  CHECK_THROWS_AS(grad_check(build, ps, 1e-8), std::invalid_argument);
  CHECK_THROWS_AS(grad_check(build, ps, 1e-2), std::invalid_argument);
}
