#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "coworld/rng.hpp"
#include "coworld/tape.hpp"

using namespace coworld;

namespace {

void fill_random(Param& p, Rng& rng, double scale = 1.0) {
  for (auto& v : p.value.data) v = rng.uniform(-scale, scale);
}

// Central-difference check of d(loss)/d(param) for every entry of every param.
void check_grads(const std::vector<Param*>& params,
                 const std::function<TRef(Tape&)>& build, double tol = 1e-6,
                 double eps = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    Tape t;
    t.backward(build(t));
  }
  for (auto* p : params) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double save = p->value.data[i];
      p->value.data[i] = save + eps;
      double fp;
      {
        Tape t;
        fp = t.scalar(build(t));
      }
      p->value.data[i] = save - eps;
      double fm;
      {
        Tape t;
        fm = t.scalar(build(t));
      }
      p->value.data[i] = save;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = p->grad.data[i];
      const double denom = std::max({1.0, std::abs(fd), std::abs(ad)});
      INFO(p->name << "[" << i << "]: analytic " << ad << " vs fd " << fd);
      CHECK(std::abs(fd - ad) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("linear + tanh chain matches finite differences") {
  Rng rng(1);
  Param W("W", 4, 3), b("b", 1, 3);
  fill_random(W, rng);
  fill_random(b, rng);
  Tensor x(5, 4);
  for (auto& v : x.data) v = rng.uniform(-1, 1);
  check_grads({&W, &b}, [&](Tape& t) {
    TRef h = t.tanh_(t.add_rowvec(t.matmul(t.constant(x), t.param(W)), t.param(b)));
    return t.mean_all(t.square_(h));
  });
}

TEST_CASE("scalar nonlinearity zoo matches finite differences") {
  Rng rng(2);
  Param p("p", 3, 4);
  fill_random(p, rng, 0.8);
  check_grads({&p}, [&](Tape& t) {
    TRef x = t.param(p);
    TRef a = t.sigmoid_(x);
    TRef b = t.elu_(t.scale(x, 1.7));
    TRef c = t.softplus_(x);
    TRef d = t.exp_(t.scale(x, 0.5));
    TRef e = t.log_(t.add_scalar(t.square_(x), 0.3));
    TRef sum = t.add(t.add(a, b), t.add(c, t.add(d, e)));
    return t.mean_all(sum);
  });
}

TEST_CASE("softmax and log-softmax KL expression matches finite differences") {
  Rng rng(3);
  Param logits_p("lp", 4, 6), logits_q("lq", 4, 6);
  fill_random(logits_p, rng, 2.0);
  fill_random(logits_q, rng, 2.0);
  check_grads({&logits_p, &logits_q}, [&](Tape& t) {
    TRef p = t.softmax_g(t.param(logits_p), 3);
    TRef diff = t.sub(t.log_softmax_g(t.param(logits_p), 3), t.log_softmax_g(t.param(logits_q), 3));
    return t.mean_all(t.row_sum(t.mul(p, diff)));
  });
}

TEST_CASE("shape ops (concat/slice/stack/repeat) match finite differences") {
  Rng rng(4);
  Param a("a", 2, 3), b("b", 2, 2), c("c", 1, 5);
  fill_random(a, rng);
  fill_random(b, rng);
  fill_random(c, rng);
  check_grads({&a, &b, &c}, [&](Tape& t) {
    TRef cat = t.concat_cols(t.param(a), t.param(b));        // [2,5]
    TRef rep = t.repeat_rows(t.param(c), 3);                 // [3,5]
    TRef stacked = t.stack_rows({cat, rep});                 // [5,5]
    TRef sl = t.slice_cols(t.slice_rows(stacked, 1, 4), 1, 4);
    return t.mean_all(t.square_(sl));
  });
}

TEST_CASE("mul_colvec and reductions match finite differences") {
  Rng rng(5);
  Param x("x", 4, 3), w("w", 4, 1);
  fill_random(x, rng);
  fill_random(w, rng);
  check_grads({&x, &w}, [&](Tape& t) {
    TRef y = t.mul_colvec(t.tanh_(t.param(x)), t.param(w));
    return t.add(t.scale(t.sum_all(y), 0.25), t.mean_all(t.square_(y)));
  });
}

TEST_CASE("maximum and clamp_min match finite differences away from ties") {
  Rng rng(6);
  Param a("a", 3, 4), b("b", 3, 4);
  fill_random(a, rng, 2.0);
  fill_random(b, rng, 2.0);
  check_grads({&a, &b}, [&](Tape& t) {
    TRef m = t.maximum(t.param(a), t.param(b));
    TRef cl = t.clamp_min(t.param(a), 0.1);
    return t.add(t.mean_all(m), t.mean_all(t.square_(cl)));
  });
}

TEST_CASE("where_rows routes values and gradients by row") {
  Rng rng(7);
  Param a("a", 4, 3), b("b", 4, 3);
  fill_random(a, rng);
  fill_random(b, rng);
  const std::vector<uint8_t> mask = {1, 0, 0, 1};
  check_grads({&a, &b}, [&](Tape& t) {
    return t.mean_all(t.square_(t.where_rows(mask, t.param(a), t.param(b))));
  });

  Tape t;
  TRef w = t.where_rows(mask, t.param(a), t.param(b));
  for (int c = 0; c < 3; ++c) {
    CHECK(t.value(w).at(0, c) == a.value.at(0, c));
    CHECK(t.value(w).at(1, c) == b.value.at(1, c));
  }
}

TEST_CASE("stop_grad blocks every path") {
  Rng rng(8);
  Param p("p", 2, 2);
  fill_random(p, rng);
  p.zero_grad();
  Tape t;
  TRef x = t.stop_grad(t.tanh_(t.param(p)));
  t.backward(t.mean_all(t.square_(x)));
  for (double g : p.grad.data) CHECK(g == 0.0);
}

TEST_CASE("maximum sends the gradient to the first argument at exact ties") {
  Param a("a", 1, 2), b("b", 1, 2);
  a.value.data = {0.5, -1.0};
  b.value.data = {0.5, -1.0};
  a.zero_grad();
  b.zero_grad();
  Tape t;
  t.backward(t.sum_all(t.maximum(t.param(a), t.param(b))));
  CHECK(a.grad.data[0] == 1.0);
  CHECK(a.grad.data[1] == 1.0);
  CHECK(b.grad.data[0] == 0.0);
  CHECK(b.grad.data[1] == 0.0);
}

TEST_CASE("clamp_min zeroes the gradient on clamped entries") {
  Param p("p", 1, 3);
  p.value.data = {-0.5, 2.0, 1.0};
  p.zero_grad();
  Tape t;
  t.backward(t.sum_all(t.clamp_min(t.param(p), 1.0)));
  CHECK(p.grad.data[0] == 0.0);  // below the floor
  CHECK(p.grad.data[1] == 1.0);  // above
  CHECK(p.grad.data[2] == 0.0);  // exactly at the floor counts as clamped
}

TEST_CASE("straight-through sample: forward one-hot, backward identity to probs") {
  Rng rng(9);
  Param logits("logits", 3, 8);
  fill_random(logits, rng, 1.5);
  Tensor weight(3, 8);
  for (auto& v : weight.data) v = rng.uniform(-1, 1);

  // forward is one-hot per group of 4
  Rng draw(123);
  Tape t;
  TRef probs = t.softmax_g(t.param(logits), 4);
  TRef z = t.onehot_sample_st(probs, 4, draw);
  const Tensor& zv = t.value(z);
  for (int r = 0; r < 3; ++r)
    for (int g0 = 0; g0 < 8; g0 += 4) {
      double s = 0.0;
      int ones = 0;
      for (int j = 0; j < 4; ++j) {
        s += zv.at(r, g0 + j);
        ones += zv.at(r, g0 + j) == 1.0;
      }
      CHECK(s == 1.0);
      CHECK(ones == 1);
    }

  // backward through the sample equals backward through the probs directly
  logits.zero_grad();
  t.backward(t.mean_all(t.mul(z, t.constant(weight))));
  const auto grad_st = logits.grad.data;

  logits.zero_grad();
  Tape t2;
  TRef probs2 = t2.softmax_g(t2.param(logits), 4);
  t2.backward(t2.mean_all(t2.mul(probs2, t2.constant(weight))));
  for (size_t i = 0; i < grad_st.size(); ++i)
    CHECK(grad_st[i] == doctest::Approx(logits.grad.data[i]).epsilon(1e-12));
}

TEST_CASE("onehot_mode picks the argmax and carries no gradient") {
  Param logits("logits", 1, 4);
  logits.value.data = {0.1, 3.0, -1.0, 2.9};
  logits.zero_grad();
  Tape t;
  TRef z = t.onehot_mode(t.softmax_g(t.param(logits), 4), 4);
  CHECK(t.value(z).data == std::vector<double>{0, 1, 0, 0});
  t.backward(t.sum_all(z));
  for (double g : logits.grad.data) CHECK(g == 0.0);
}

TEST_CASE("params are deduplicated and reuse accumulates both contributions") {
  Rng rng(10);
  Param p("p", 2, 2);
  fill_random(p, rng);
  check_grads({&p}, [&](Tape& t) {
    TRef x1 = t.param(p);
    TRef x2 = t.param(p);  // same leaf
    return t.mean_all(t.add(t.square_(x1), t.tanh_(x2)));
  });
  Tape t;
  TRef a = t.param(p), b = t.param(p);
  CHECK(a.id == b.id);
}

TEST_CASE("two backward sweeps on one tape accumulate into params independently") {
  Param p("p", 1, 2);
  p.value.data = {2.0, 3.0};
  p.zero_grad();
  Tape t;
  TRef x = t.param(p);
  TRef l1 = t.sum_all(t.square_(x));       // d/dx = 2x = (4, 6)
  TRef l2 = t.sum_all(t.scale(x, 10.0));   // d/dx = 10
  t.backward(l1);
  CHECK(p.grad.data[0] == 4.0);
  t.backward(l2);
  CHECK(p.grad.data[0] == 14.0);  // accumulated across sweeps
  CHECK(p.grad.data[1] == 16.0);
}

TEST_CASE("FrozenScope records constants: values flow, no leaf gradients") {
  Rng rng(11);
  Param frozen("frozen", 2, 2), live("live", 2, 2);
  fill_random(frozen, rng);
  fill_random(live, rng);
  frozen.zero_grad();
  live.zero_grad();
  Tape t;
  TRef x;
  {
    Tape::FrozenScope fs(t);
    x = t.param(frozen);
  }
  TRef y = t.mul(x, t.param(live));  // gradient flows through x's values into live
  t.backward(t.mean_all(y));
  for (double g : frozen.grad.data) CHECK(g == 0.0);
  bool any = false;
  for (double g : live.grad.data) any |= g != 0.0;
  CHECK(any);
}

TEST_CASE("matmul gradient matches finite differences on a rectangular case") {
  Rng rng(12);
  Param A("A", 3, 5), B("B", 5, 2);
  fill_random(A, rng);
  fill_random(B, rng);
  check_grads({&A, &B}, [&](Tape& t) {
    return t.mean_all(t.square_(t.matmul(t.param(A), t.param(B))));
  });
}
