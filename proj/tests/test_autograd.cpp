#include "voxalign/core/autograd.hpp"
#include "voxalign/core/matrix.hpp"
#include "voxalign/core/nn.hpp"
#include "voxalign/core/optim.hpp"
#include "voxalign/core/rng.hpp"

#include "support/gradcheck.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace voxalign;
using voxalign::testing::max_grad_rel_error;

namespace {
Matrix randm(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal(0.0, scale);
  return m;
}
}  // namespace

TEST_CASE("elementwise and broadcast ops match finite differences") {
  Rng rng(11);
  Matrix a = randm(rng, 3, 4), b = randm(rng, 3, 4), v = randm(rng, 1, 4);
  double err = max_grad_rel_error({a, b, v}, [](Tape&, std::vector<Var>& L) {
    Var x = ag::mul(ag::add(L[0], L[1]), ag::sub(L[0], L[1]));
    x = ag::add_rowvec(x, L[2]);
    x = ag::mul(x, ag::sigmoid(L[0]));
    x = ag::add(ag::tanh(x), ag::gelu(L[1]));
    return ag::mean_all(ag::mul(x, x));
  });
  CHECK(err < 1e-7);
}

TEST_CASE("matmul family matches finite differences") {
  Rng rng(12);
  Matrix a = randm(rng, 3, 5), b = randm(rng, 5, 2), c = randm(rng, 4, 5),
         d = randm(rng, 3, 4);
  double err = max_grad_rel_error({a, b, c, d}, [](Tape&, std::vector<Var>& L) {
    Var ab = ag::matmul(L[0], L[1]);          // 3x2
    Var ac = ag::matmul_nt(L[0], L[2]);       // 3x4
    Var da = ag::matmul_tn(L[3], L[0]);       // 4x5
    Var t = ag::transpose(ab);                // 2x3
    Var s = ag::add(ag::sum_all(ag::mul(ac, ac)), ag::sum_all(ag::mul(da, da)));
    return ag::add(s, ag::sum_all(ag::mul(t, t)));
  });
  CHECK(err < 1e-7);
}

TEST_CASE("softmax, log-softmax and cross-entropy match finite differences") {
  Rng rng(13);
  Matrix logits = randm(rng, 4, 6, 2.0);
  double err = max_grad_rel_error({logits}, [](Tape&, std::vector<Var>& L) {
    Var p = ag::softmax_rows(L[0]);
    Var lp = ag::log_softmax_rows(L[0]);
    Var ce = ag::cross_entropy_rows(L[0], {1, 0, 5, 3});
    return ag::add(ce, ag::mean_all(ag::mul(p, lp)));
  });
  CHECK(err < 1e-7);
}

TEST_CASE("softmax rows sum to one under an additive mask") {
  Rng rng(14);
  Matrix logits = randm(rng, 5, 5);
  Matrix mask(5, 5, 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) mask(i, j) = -1e9;
  Tape t;
  Var p = ag::softmax_rows(t.var(logits), &mask);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      s += p.val()(r, c);
      if (c > r) CHECK(p.val()(r, c) < 1e-12);  // masked keys get no mass
    }
    CHECK(s == Catch::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("slicing, concat, reshape and gathers match finite differences") {
  Rng rng(15);
  Matrix a = randm(rng, 4, 6), b = randm(rng, 2, 6), c = randm(rng, 4, 3);
  double err = max_grad_rel_error({a, b, c}, [](Tape&, std::vector<Var>& L) {
    Var top = ag::slice_rows(L[0], 0, 2);
    Var cat = ag::concat_rows({top, L[1]});          // 4x6
    Var side = ag::concat_cols({cat, L[2]});         // 4x9
    Var flat = ag::reshape(side, 2, 18);
    Var picked = ag::gather_rows(L[0], {3, 1, 1, 0});
    Var elems = ag::gather_elems(L[0], {{0, 0}, {3, 5}, {2, 2}});
    Var s = ag::add(ag::sum_all(ag::mul(flat, flat)), ag::sum_all(ag::mul(picked, picked)));
    return ag::add(s, ag::sum_all(ag::mul(elems, elems)));
  });
  CHECK(err < 1e-7);
}

TEST_CASE("row normalization, scaling and reductions match finite differences") {
  Rng rng(16);
  Matrix a = randm(rng, 5, 3), s = randm(rng, 5, 1), t1 = randm(rng, 1, 1);
  double err = max_grad_rel_error({a, s, t1}, [](Tape&, std::vector<Var>& L) {
    Var n = ag::normalize_rows(L[0]);
    Var scaled = ag::scale_rows(n, L[1]);
    Var temp = ag::scale_by(scaled, ag::exp(L[2]));
    Var r = ag::rowsum(ag::abs(temp));
    return ag::add(ag::mean_all(ag::square(r)), ag::mean_all(ag::sqrt(ag::add_scalar(ag::mul(L[0], L[0]), 1e-3))));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("normalized rows have unit norm") {
  Rng rng(17);
  Tape t;
  Var x = t.var(randm(rng, 7, 9, 3.0));
  Var n = ag::normalize_rows(x);
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) s += n.val()(r, c) * n.val()(r, c);
    CHECK(std::sqrt(s) == Catch::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("layer norm matches finite differences and normalizes rows") {
  Rng rng(18);
  Matrix x = randm(rng, 4, 8, 2.0), g = randm(rng, 1, 8), b = randm(rng, 1, 8);
  double err = max_grad_rel_error({x, g, b}, [](Tape&, std::vector<Var>& L) {
    Var y = ag::layer_norm_rows(L[0], L[1], L[2]);
    return ag::mean_all(ag::mul(y, ag::sigmoid(y)));
  });
  CHECK(err < 1e-6);

  Tape t;
  Var ones = t.var(Matrix(1, 8, 1.0)), zeros = t.var(Matrix(1, 8, 0.0));
  Var y = ag::layer_norm_rows(t.var(x), ones, zeros);
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mu += y.val()(r, c);
    mu /= 8.0;
    for (std::size_t c = 0; c < 8; ++c) {
      double d = y.val()(r, c) - mu;
      var += d * d;
    }
    CHECK(std::abs(mu) < 1e-12);
    CHECK(var / 8.0 == Catch::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("bce with logits matches a naive formula and its gradient") {
  Rng rng(19);
  Matrix x = randm(rng, 6, 1, 2.0);
  Matrix y(6, 1);
  for (std::size_t i = 0; i < 6; ++i) y[i] = (i % 2 == 0) ? 1.0 : 0.0;
  const double w_pos = 2.5;
  Matrix acoef(6, 1), bcoef(6, 1);
  for (std::size_t i = 0; i < 6; ++i) {
    acoef[i] = w_pos * y[i];
    bcoef[i] = 1.0 - y[i];
  }

  double naive = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    naive += -(acoef[i] * std::log(s) + bcoef[i] * std::log(1.0 - s));
  }
  naive /= 6.0;

  Tape t;
  Var loss = ag::bce_logits(t.var(x), acoef, bcoef);
  CHECK(loss.scalar() == Catch::Approx(naive).epsilon(1e-12));

  double err = max_grad_rel_error({x}, [&](Tape&, std::vector<Var>& L) {
    return ag::bce_logits(L[0], acoef, bcoef);
  });
  CHECK(err < 1e-7);
}

TEST_CASE("bce with logits is stable at extreme logits") {
  Matrix x(2, 1);
  x[0] = 500.0;
  x[1] = -500.0;
  Matrix a(2, 1), b(2, 1);
  a[0] = 1.0; b[0] = 0.0;  // y=1 at huge positive logit: ~0 loss
  a[1] = 1.0; b[1] = 0.0;  // y=1 at huge negative logit: ~|x| loss
  Tape t;
  Var loss = ag::bce_logits(t.var(x), a, b);
  CHECK(std::isfinite(loss.scalar()));
  CHECK(loss.scalar() == Catch::Approx(250.0).epsilon(1e-9));
}

TEST_CASE("fill_diagonal blocks gradient through the diagonal") {
  Rng rng(20);
  Matrix a = randm(rng, 4, 4);
  double err = max_grad_rel_error({a}, [](Tape&, std::vector<Var>& L) {
    return ag::mean_all(ag::square(ag::fill_diagonal(L[0], -10.0)));
  });
  CHECK(err < 1e-7);

  Tape t;
  Var x = t.var(a);
  Var loss = ag::mean_all(ag::square(ag::fill_diagonal(x, -10.0)));
  t.backward(loss);
  const Matrix& g = t.grad(x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g(i, i) == 0.0);
}

TEST_CASE("stopgrad detaches") {
  Tape t;
  Var x = t.var(Matrix(2, 2, 3.0));
  Var y = ag::mul(ag::stopgrad(x), x);
  t.backward(ag::sum_all(y));
  const Matrix& g = t.grad(x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == Catch::Approx(3.0));  // not 6
}

TEST_CASE("transformer block gradient check end to end") {
  Rng rng(21);
  ParamStore store;
  TransformerBlock block(store, "blk", 8, 2, rng);
  Matrix x0 = randm(rng, 5, 8);
  double err = voxalign::testing::max_store_grad_rel_error(
      store,
      [&](Tape& t, TapeBinding& B) {
        Var y = block.forward(B, t.var(x0, false));
        return ag::mean_all(ag::mul(y, y));
      },
      1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("mlp with dropout disabled matches finite differences") {
  Rng rng(22);
  ParamStore store;
  Mlp mlp(store, "head", {6, 12, 6, 1}, rng, 0.1);
  Matrix x0 = randm(rng, 4, 6);
  double err = voxalign::testing::max_store_grad_rel_error(
      store,
      [&](Tape& t, TapeBinding& B) {
        Var y = mlp.forward(B, t.var(x0, false));  // eval mode: no dropout
        return ag::mean_all(ag::mul(y, y));
      },
      1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("adamw with decay shrinks an unused weight but not a bias") {
  ParamStore store;
  Param& w = store.add("w", Matrix(1, 1, 1.0), true);
  Param& b = store.add("b", Matrix(1, 1, 1.0), false);
  AdamW::Config cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt(cfg);
  store.zero_grad();
  opt.step(store);
  CHECK(w.value(0, 0) < 1.0);
  CHECK(b.value(0, 0) == Catch::Approx(1.0));
}

TEST_CASE("gradient clipping caps the global norm") {
  ParamStore store;
  Param& w = store.add("w", Matrix(1, 4, 0.0));
  for (std::size_t i = 0; i < 4; ++i) w.grad[i] = 10.0;
  const double pre = AdamW::clip_grad_norm(store, 1.0);
  CHECK(pre == Catch::Approx(20.0));
  double post = 0.0;
  for (std::size_t i = 0; i < 4; ++i) post += w.grad[i] * w.grad[i];
  CHECK(std::sqrt(post) == Catch::Approx(1.0));
}

TEST_CASE("cosine schedule warms up, decays, and hits the floor") {
  CHECK(cosine_lr(0, 100, 1.0, 10) == Catch::Approx(0.1));
  CHECK(cosine_lr(9, 100, 1.0, 10) == Catch::Approx(1.0));
  CHECK(cosine_lr(10, 100, 1.0, 10) == Catch::Approx(1.0));
  CHECK(cosine_lr(100, 100, 1.0, 10, 0.05) == Catch::Approx(0.05));
  CHECK(cosine_lr(55, 100, 1.0, 10) > cosine_lr(56, 100, 1.0, 10));
}

TEST_CASE("rng streams are deterministic and children are independent") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng parent(7);
  Rng c1 = parent.child(1), c2 = parent.child(2);
  CHECK(c1.next_u64() != c2.next_u64());
  // Child derivation does not consume parent state.
  Rng parent2(7);
  parent2.child(1);
  Rng parent3(7);
  CHECK(parent2.next_u64() == parent3.next_u64());
}

TEST_CASE("rng uniform and normal have sane moments") {
  Rng rng(99);
  double su = 0.0, sn = 0.0, sn2 = 0.0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    su += rng.uniform();
    double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / N == Catch::Approx(0.5).margin(0.01));
  CHECK(sn / N == Catch::Approx(0.0).margin(0.02));
  CHECK(sn2 / N == Catch::Approx(1.0).margin(0.02));
}
