#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "coworld/behavior.hpp"
#include "coworld/errors.hpp"
#include "coworld/worldmodel.hpp"

using namespace coworld;

namespace {

constexpr double kGamma = 0.995;

CoWorldConfig tiny_config() {
  CoWorldConfig cfg;
  cfg.deter = 6;
  cfg.groups = 2;
  cfg.classes = 3;
  cfg.hidden = 6;
  return cfg;
}

EnvSpec tiny_env(int action_dim = 2) {
  EnvSpec s;
  s.image_size = 4;
  s.action_dim = action_dim;
  s.seed = 3;
  return s;
}

// posterior states from random observations, as imagination expects
std::pair<Tensor, Tensor> posterior_starts(const WorldModel& wm, int rows, Rng& rng) {
  std::vector<uint8_t> frames(static_cast<size_t>(rows) * wm.obs_dim());
  for (auto& x : frames) x = static_cast<uint8_t>(rng.uniform_int(256));
  Tape tp;
  const TRef obs = wm.obs_constant(tp, frames.data(), rows);
  const auto step = wm.observe_step(tp, wm.initial_state(tp, rows),
                                    tp.zeros(rows, wm.action_dim()), obs, {}, rng);
  return {tp.value(step.post.h), tp.value(step.post.z)};
}

// zero every layer so the critic outputs exactly `v` everywhere
void make_constant_critic(std::vector<Param*> params, double v) {
  for (Param* p : params)
    std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
  Param* out_bias = params.back();
  REQUIRE(out_bias->value.size() == 1);
  out_bias->value.data[0] = v;
}

void perturb(std::vector<Param*> params, double scale, Rng& rng) {
  for (Param* p : params)
    for (double& x : p->value.data) x += scale * rng.normal();
}

int fd_sweep(const std::function<double()>& re_eval, const std::vector<Param*>& params,
             int stride, double tol) {
  const double eps = 1e-5;
  int checked = 0;
  for (Param* p : params) {
    for (size_t i = 0; i < p->value.size(); i += static_cast<size_t>(stride)) {
      const double keep = p->value.data[i];
      p->value.data[i] = keep + eps;
      const double up = re_eval();
      p->value.data[i] = keep - eps;
      const double dn = re_eval();
      p->value.data[i] = keep;
      const double fd = (up - dn) / (2 * eps);
      const double an = p->grad.data[i];
      const double denom = std::max(std::abs(fd), std::abs(an));
      if (denom < 1e-7) continue;  // both effectively zero
      INFO(p->name, " [", i, "] fd=", fd, " an=", an);
      CHECK(std::abs(fd - an) / denom < tol);
      ++checked;
    }
  }
  return checked;
}

}  // namespace

TEST_CASE("lambda returns collapse to the textbook special cases") {
  Rng rng(11);
  const int h = 6;
  std::vector<double> r(h), d(h), v(h + 1);
  for (auto& x : r) x = rng.uniform(-1.0, 1.0);
  for (auto& x : d) x = rng.uniform(0.0, 1.0);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);

  SUBCASE("lambda 0 is one-step TD") {
    const auto V = lambda_returns(r, d, v, 0.0);
    for (int t = 0; t < h; ++t) CHECK(V[t] == r[t] + d[t] * v[t + 1]);
  }
  SUBCASE("lambda 1 over two steps telescopes the rewards") {
    const double v2 = 0.37;
    const auto V = lambda_returns({1.0, 1.0}, {kGamma, kGamma}, {9.0, 9.0, v2}, 1.0);
    CHECK(V[1] == 1.0 + kGamma * v2);
    CHECK(V[0] == 1.0 + kGamma * (1.0 + kGamma * v2));
  }
  SUBCASE("bad arguments are rejected") {
    CHECK_THROWS_AS(lambda_returns(r, d, v, -0.01), ConfigError);
    CHECK_THROWS_AS(lambda_returns(r, d, v, 1.01), ConfigError);
    CHECK_THROWS_AS(lambda_returns(r, d, std::vector<double>(h), 0.5), UsageError);
    CHECK_THROWS_AS(lambda_returns(r, std::vector<double>(h - 1), v, 0.5), UsageError);
  }
}

TEST_CASE("lambda returns match the n-step mixture over a thousand instances") {
  // independent oracle: V_t as the lambda-weighted mixture of n-step returns,
  // the closed form the backward recursion is supposed to implement
  Rng rng(12);
  for (int inst = 0; inst < 1000; ++inst) {
    const int h = 1 + rng.uniform_int(12);
    std::vector<double> r(h), d(h), v(h + 1);
    for (auto& x : r) x = rng.uniform(-2.0, 2.0);
    for (auto& x : d) x = rng.uniform(0.0, 1.0);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    const double lambda = rng.uniform();

    const auto V = lambda_returns(r, d, v, lambda);
    for (int t = 0; t < h; ++t) {
      const int n_max = h - t;
      auto nstep = [&](int n) {
        double g = 0.0, prod = 1.0;
        for (int i = 0; i < n; ++i) {
          g += prod * r[t + i];
          prod *= d[t + i];
        }
        return g + prod * v[t + n];
      };
      double expect = std::pow(lambda, n_max - 1) * nstep(n_max);
      for (int n = 1; n < n_max; ++n)
        expect += (1.0 - lambda) * std::pow(lambda, n - 1) * nstep(n);
      CHECK(std::abs(V[t] - expect) < 1e-6);
    }
  }
}

TEST_CASE("tape lambda returns reproduce the plain recursion bit for bit") {
  Rng rng(13);
  const int h = 5, rows = 3;
  std::vector<std::vector<double>> r(h), d(h);
  std::vector<std::vector<double>> v(h + 1);
  Tape tp;
  std::vector<TRef> rr, dr, vr;
  auto column = [&](std::vector<double>& dst, double lo, double hi) {
    dst.resize(rows);
    for (auto& x : dst) x = rng.uniform(lo, hi);
    Tensor t(rows, 1);
    t.data = dst;
    return tp.constant(std::move(t));
  };
  for (int t = 0; t < h; ++t) {
    rr.push_back(column(r[t], -1.0, 1.0));
    dr.push_back(column(d[t], 0.0, 1.0));
  }
  for (int t = 0; t <= h; ++t) vr.push_back(column(v[t], -1.0, 1.0));

  const auto V = lambda_returns_tape(tp, rr, dr, vr, 0.95);
  REQUIRE(V.size() == static_cast<size_t>(h));
  for (int row = 0; row < rows; ++row) {
    std::vector<double> rs(h), ds(h), vs(h + 1);
    for (int t = 0; t < h; ++t) rs[t] = r[t][row], ds[t] = d[t][row];
    for (int t = 0; t <= h; ++t) vs[t] = v[t][row];
    const auto plain = lambda_returns(rs, ds, vs, 0.95);
    for (int t = 0; t < h; ++t) CHECK(tp.value(V[t]).data[static_cast<size_t>(row)] == plain[t]);
  }
}

TEST_CASE("imagined rollouts honor the length and range contracts") {
  Rng rng(21);
  CoWorldConfig cfg = tiny_config();
  EnvSpec env = tiny_env();
  WorldModel wm(cfg, env, "target", rng);
  ActorCritic ac(cfg, wm.feat_size(), env.action_dim, "target", rng);
  Rng prng(22);
  auto [h0, z0] = posterior_starts(wm, 3, prng);

  SUBCASE("shapes, start state, and head ranges") {
    Tape tp;
    Rng irng(23);
    const int H = 4;
    const auto ro = imagine_trajectories(tp, wm, ac, h0, z0, H, kGamma, irng);
    CHECK(ro.rows == 3);
    CHECK(ro.horizon == H);
    REQUIRE(ro.states.size() == static_cast<size_t>(H + 1));
    REQUIRE(ro.feats.size() == static_cast<size_t>(H + 1));
    REQUIRE(ro.actions.size() == static_cast<size_t>(H));
    REQUIRE(ro.entropies.size() == static_cast<size_t>(H));
    REQUIRE(ro.rewards.size() == static_cast<size_t>(H + 1));
    REQUIRE(ro.discounts.size() == static_cast<size_t>(H + 1));
    REQUIRE(ro.values.size() == static_cast<size_t>(H + 1));

    // the first feature row is exactly the supplied posterior state
    const Tensor& f0 = tp.value(ro.feats[0]);
    REQUIRE(f0.rows == 3);
    REQUIRE(f0.cols == wm.feat_size());
    for (int b = 0; b < 3; ++b) {
      for (int c = 0; c < h0.cols; ++c)
        CHECK(f0.data[static_cast<size_t>(b) * f0.cols + c] ==
              h0.data[static_cast<size_t>(b) * h0.cols + c]);
      for (int c = 0; c < z0.cols; ++c)
        CHECK(f0.data[static_cast<size_t>(b) * f0.cols + h0.cols + c] ==
              z0.data[static_cast<size_t>(b) * z0.cols + c]);
    }

    for (const TRef& a : ro.actions) {
      const Tensor& t = tp.value(a);
      CHECK(t.rows == 3);
      CHECK(t.cols == env.action_dim);
      for (double x : t.data) {
        CHECK(x > -1.0);
        CHECK(x < 1.0);
      }
    }
    for (const TRef& d : ro.discounts) {
      const Tensor& t = tp.value(d);
      CHECK(t.cols == 1);
      for (double x : t.data) {
        CHECK(x > 0.0);
        CHECK(x < kGamma);
      }
    }
  }

  SUBCASE("horizon one makes exactly one transition") {
    Tape tp;
    Rng irng(24);
    const auto ro = imagine_trajectories(tp, wm, ac, h0, z0, 1, kGamma, irng);
    CHECK(ro.states.size() == 2);
    CHECK(ro.actions.size() == 1);
    CHECK(ro.values.size() == 2);
  }

  SUBCASE("horizon below one is rejected") {
    Tape tp;
    Rng irng(25);
    CHECK_THROWS_AS(imagine_trajectories(tp, wm, ac, h0, z0, 0, kGamma, irng), ConfigError);
  }

  SUBCASE("seeded rollouts are reproducible and reseeded ones diverge") {
    auto collect = [&](uint64_t seed, bool sample, LatentMode latents) {
      Tape tp;
      Rng irng(seed);
      const auto ro = imagine_trajectories(tp, wm, ac, h0, z0, 3, kGamma, irng, sample, latents);
      std::vector<double> flat;
      for (const TRef& a : ro.actions) {
        const Tensor& t = tp.value(a);
        flat.insert(flat.end(), t.data.begin(), t.data.end());
      }
      for (const TRef& r : ro.rewards) {
        const Tensor& t = tp.value(r);
        flat.insert(flat.end(), t.data.begin(), t.data.end());
      }
      return flat;
    };
    CHECK(collect(7, true, LatentMode::sample) == collect(7, true, LatentMode::sample));
    CHECK(collect(7, true, LatentMode::sample) != collect(8, true, LatentMode::sample));
    // mean actions + argmax latents consume no randomness at all
    CHECK(collect(7, false, LatentMode::mode) == collect(8, false, LatentMode::mode));
  }
}

TEST_CASE("policy head squashes, reproduces, and reports the Gaussian entropy") {
  Rng rng(31);
  CoWorldConfig cfg = tiny_config();
  EnvSpec env = tiny_env();
  WorldModel wm(cfg, env, "target", rng);
  ActorCritic ac(cfg, wm.feat_size(), env.action_dim, "target", rng);

  Rng frng(32);
  Tensor feat(4, wm.feat_size());
  for (double& x : feat.data) x = frng.uniform(-1.0, 1.0);

  Tape tp;
  const TRef f = tp.constant(feat);

  SUBCASE("fresh actors are centered with a known entropy") {
    Rng arng(33);
    const auto pol = ac.policy(tp, f, arng, false);
    const Tensor& a = tp.value(pol.action);
    for (double x : a.data) CHECK(x == 0.0);  // zero-initialized output layer
    const double sigma = std::log(2.0) + 0.1;  // softplus(0) + min std
    const double expect = env.action_dim * (std::log(sigma) + 1.4189385332046727);
    for (double e : tp.value(pol.entropy).data) CHECK(e == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("sampling is seed-reproducible and stays inside the box") {
    Rng p(34);
    perturb(ac.actor_params(), 0.3, p);
    Rng a1(35), a2(35), a3(36);
    Tape t1, t2, t3;
    const TRef f1 = t1.constant(feat), f2 = t2.constant(feat), f3 = t3.constant(feat);
    const auto s1 = ac.policy(t1, f1, a1, true);
    const auto s2 = ac.policy(t2, f2, a2, true);
    const auto s3 = ac.policy(t3, f3, a3, true);
    CHECK(t1.value(s1.action).data == t2.value(s2.action).data);
    CHECK(t1.value(s1.action).data != t3.value(s3.action).data);
    for (double x : t1.value(s1.action).data) {
      CHECK(x > -1.0);
      CHECK(x < 1.0);
    }
  }
}

TEST_CASE("slow critic is a snapshot refreshed only on demand") {
  Rng rng(41);
  CoWorldConfig cfg = tiny_config();
  EnvSpec env = tiny_env();
  WorldModel wm(cfg, env, "target", rng);
  ActorCritic ac(cfg, wm.feat_size(), env.action_dim, "target", rng);

  Rng frng(42);
  Tensor feat(3, wm.feat_size());
  for (double& x : feat.data) x = frng.uniform(-1.0, 1.0);

  auto values = [&](bool slow) {
    Tape tp;
    const TRef f = tp.constant(feat);
    return tp.value(slow ? ac.slow_value(tp, f) : ac.value(tp, f)).data;
  };

  CHECK(values(false) == values(true));  // synced at construction
  Rng p(43);
  perturb(ac.critic_params(), 0.2, p);
  CHECK(values(false) != values(true));
  ac.update_slow();
  CHECK(values(false) == values(true));

  // the live parameter set excludes the snapshot
  for (Param* q : ac.critic_params()) CHECK(q->name.find("slow") == std::string::npos);
  CHECK(ac.params().size() == 3 * ac.critic_params().size());
}

TEST_CASE("critic loss composes its report exactly and validates its inputs") {
  Rng rng(51);
  CoWorldConfig cfg = tiny_config();
  EnvSpec env = tiny_env();
  WorldModel wm(cfg, env, "target", rng);
  ActorCritic tgt(cfg, wm.feat_size(), env.action_dim, "target", rng);
  ActorCritic src(cfg, wm.feat_size(), env.action_dim, "source", rng);
  Rng p(52);
  perturb(tgt.critic_params(), 0.3, p);
  perturb(src.critic_params(), 0.3, p);

  Rng prng(53);
  auto [h0, z0] = posterior_starts(wm, 4, prng);

  Tape tp;
  Rng irng(54);
  const auto ro = imagine_trajectories(tp, wm, tgt, h0, z0, 5, kGamma, irng);

  const auto out = critic_loss(tp, tgt, &src, ro, 0.3, 0.8, 0.95);
  CHECK(out.report.total == out.report.td_loss + 0.3 * out.report.regularizer);
  CHECK(out.report.total == tp.scalar(out.total));
  CHECK(out.report.td_loss >= 0.0);
  CHECK(out.report.fraction_clamped >= 0.0);
  CHECK(out.report.fraction_clamped <= 1.0);
  REQUIRE(out.returns.size() == 5);

  // the returns it exposes are the lambda returns of the rollout arrays
  for (int row = 0; row < 4; ++row) {
    std::vector<double> rs, ds, vs;
    for (int t = 0; t < 5; ++t) {
      rs.push_back(tp.value(ro.rewards[t]).data[static_cast<size_t>(row)]);
      ds.push_back(tp.value(ro.discounts[t]).data[static_cast<size_t>(row)]);
    }
    for (int t = 0; t <= 5; ++t)
      vs.push_back(tp.value(ro.values[t]).data[static_cast<size_t>(row)]);
    const auto plain = lambda_returns(rs, ds, vs, 0.95);
    for (int t = 0; t < 5; ++t)
      CHECK(tp.value(out.returns[t]).data[static_cast<size_t>(row)] == plain[t]);
  }

  SUBCASE("alpha zero without a source is a pure regression") {
    const auto bare = critic_loss(tp, tgt, nullptr, ro, 0.0, 0.8, 0.95);
    CHECK(bare.report.regularizer == 0.0);
    CHECK(bare.report.fraction_clamped == 0.0);
    CHECK(bare.report.total == bare.report.td_loss);
  }
  SUBCASE("alpha without a source critic is rejected") {
    CHECK_THROWS_AS(critic_loss(tp, tgt, nullptr, ro, 0.1, 0.8, 0.95), ConfigError);
  }
  SUBCASE("lambda is validated") {
    CHECK_THROWS_AS(critic_loss(tp, tgt, &src, ro, 0.3, 0.8, 1.5), ConfigError);
  }
}

TEST_CASE("value regularizer gates its gradient on which critic wins the max") {
  Rng rng(61);
  CoWorldConfig cfg = tiny_config();
  EnvSpec env = tiny_env();
  WorldModel wm(cfg, env, "target", rng);
  ActorCritic tgt(cfg, wm.feat_size(), env.action_dim, "target", rng);
  ActorCritic src(cfg, wm.feat_size(), env.action_dim, "source", rng);

  Rng prng(62);
  auto [h0, z0] = posterior_starts(wm, 3, prng);
  const double alpha = 0.5, zeta = 1.5;

  // grads on the target critic under a given alpha, on a fresh rollout tape
  auto grads = [&](double a) {
    for (Param* p : tgt.critic_params()) p->zero_grad();
    Tape tp;
    Rng irng(63);
    const auto ro = imagine_trajectories(tp, wm, tgt, h0, z0, 4, kGamma, irng);
    const auto out = critic_loss(tp, tgt, &src, ro, a, zeta, 0.95);
    tp.backward(out.total);
    std::vector<double> g;
    for (Param* p : tgt.critic_params())
      g.insert(g.end(), p->grad.data.begin(), p->grad.data.end());
    return std::make_pair(g, out.report);
  };
  auto out_bias_grad = [&](const std::vector<double>& g) { return g.back(); };

  SUBCASE("source side wins: value contributes, gradient does not") {
    make_constant_critic(tgt.critic_params(), 2.0 / zeta);  // zeta * v = 2
    make_constant_critic(src.critic_params(), 3.0);
    const auto [g0, r0] = grads(0.0);
    const auto [g1, r1] = grads(alpha);
    CHECK(r1.regularizer == 3.0);
    CHECK(r1.total - r0.total == doctest::Approx(alpha * 3.0).epsilon(1e-12));
    CHECK(r1.fraction_clamped == 0.0);
    CHECK(g0 == g1);  // the max selected the stopped branch everywhere
  }

  SUBCASE("target side wins: gradient is exactly alpha times zeta") {
    make_constant_critic(tgt.critic_params(), 3.0 / zeta);  // zeta * v = 3
    make_constant_critic(src.critic_params(), 2.0);
    const auto [g0, r0] = grads(0.0);
    const auto [g1, r1] = grads(alpha);
    CHECK(r1.regularizer == 3.0);
    CHECK(r1.fraction_clamped == 1.0);
    // v equals the output bias everywhere, so d(reg)/d(bias) = zeta
    CHECK(out_bias_grad(g1) - out_bias_grad(g0) ==
          doctest::Approx(alpha * zeta).epsilon(1e-12));
    for (size_t i = 0; i + 1 < g0.size(); ++i) CHECK(g0[i] == g1[i]);
  }

  SUBCASE("ties count as clamped and follow the target branch") {
    make_constant_critic(tgt.critic_params(), 2.0 / zeta);
    make_constant_critic(src.critic_params(), 2.0);
    const auto [g0, r0] = grads(0.0);
    const auto [g1, r1] = grads(alpha);
    CHECK(r1.fraction_clamped == 1.0);
    CHECK(out_bias_grad(g1) - out_bias_grad(g0) ==
          doctest::Approx(alpha * zeta).epsilon(1e-12));
  }

  SUBCASE("raising alpha never lowers the regularizer term") {
    make_constant_critic(tgt.critic_params(), 3.0 / zeta);
    make_constant_critic(src.critic_params(), 2.0);
    double prev_total = -1e300, prev_reg = -1.0;
    for (const double a : {0.0, 0.1, 0.3, 0.9}) {
      const auto [g, r] = grads(a);
      CHECK(r.total >= prev_total);
      if (prev_reg >= 0.0) CHECK(r.regularizer == prev_reg);  // alpha-independent
      prev_total = r.total;
      prev_reg = r.regularizer;
    }
  }
}

TEST_CASE("critic gradients match finite differences and leak nowhere") {
  Rng rng(71);
  CoWorldConfig cfg = tiny_config();
  EnvSpec env = tiny_env();
  WorldModel wm(cfg, env, "target", rng);
  ActorCritic tgt(cfg, wm.feat_size(), env.action_dim, "target", rng);
  ActorCritic src(cfg, wm.feat_size(), env.action_dim, "source", rng);
  Rng p(72);
  perturb(tgt.critic_params(), 0.4, p);
  perturb(src.critic_params(), 0.4, p);

  Rng prng(73);
  auto [h0, z0] = posterior_starts(wm, 4, prng);
  const double alpha = 0.3, zeta = 0.9, lambda = 0.95;

  auto loss_value = [&]() {
    Tape tp;
    Rng irng(74);
    const auto ro = imagine_trajectories(tp, wm, tgt, h0, z0, 3, kGamma, irng);
    return critic_loss(tp, tgt, &src, ro, alpha, zeta, lambda).report.total;
  };

  std::vector<Param*> all;
  for (Param* q : tgt.params()) all.push_back(q);
  for (Param* q : src.params()) all.push_back(q);
  for (Param* q : wm.params()) all.push_back(q);
  for (Param* q : all) q->zero_grad();

  {
    Tape tp;
    Rng irng(74);
    const auto ro = imagine_trajectories(tp, wm, tgt, h0, z0, 3, kGamma, irng);
    const auto out = critic_loss(tp, tgt, &src, ro, alpha, zeta, lambda);

    // the loss is only piecewise smooth: differencing must not straddle a
    // branch flip of the max, so insist on a healthy margin at every state
    const TRef fs = tp.stack_rows({ro.feats.begin(), ro.feats.begin() + 3});
    const Tensor vt = tp.value(tgt.value(tp, fs));
    const Tensor vs = tp.value(src.value(tp, fs));
    for (size_t i = 0; i < vt.data.size(); ++i)
      REQUIRE(std::abs(zeta * vt.data[i] - vs.data[i]) > 1e-3);
    tp.backward(out.total);
  }

  // the full loss is smooth in the critic away from max ties; 1e-4 relative
  CHECK(fd_sweep(loss_value, tgt.critic_params(), 1, 1e-4) > 60);

  // nothing else may receive gradient: not the source critic (stopped), not
  // the actor or either slow critic (features stopped / frozen), not the
  // world model (recorded as constants)
  for (Param* q : src.params())
    for (double g : q->grad.data) CHECK(g == 0.0);
  for (Param* q : tgt.actor_params())
    for (double g : q->grad.data) CHECK(g == 0.0);
  for (Param* q : wm.params())
    for (double g : q->grad.data) CHECK(g == 0.0);
}

TEST_CASE("actor gradients match finite differences on a one-step toy") {
  // one step and one action dimension: the discount-weight product is the
  // constant 1, so no stopped branch hides any dependence from differencing;
  // relaxed latents replace the one-hot draw by its smooth surrogate
  Rng rng(81);
  CoWorldConfig cfg = tiny_config();
  EnvSpec env = tiny_env(1);
  WorldModel wm(cfg, env, "target", rng);
  ActorCritic ac(cfg, wm.feat_size(), env.action_dim, "target", rng);
  Rng p(82);
  perturb(ac.actor_params(), 0.3, p);

  Rng prng(83);
  auto [h0, z0] = posterior_starts(wm, 5, prng);
  const double eta = 1e-2, lambda = 0.9;

  auto loss_value = [&]() {
    Tape tp;
    Rng irng(84);
    const auto ro =
        imagine_trajectories(tp, wm, ac, h0, z0, 1, kGamma, irng, true, LatentMode::relaxed);
    const auto rets = lambda_returns_tape(tp, {ro.rewards.begin(), ro.rewards.begin() + 1},
                                          {ro.discounts.begin(), ro.discounts.begin() + 1},
                                          ro.values, lambda);
    return actor_loss(tp, ro, rets, eta).value;
  };

  std::vector<Param*> watched;
  for (Param* q : ac.params()) watched.push_back(q);
  for (Param* q : wm.params()) watched.push_back(q);
  for (Param* q : watched) q->zero_grad();
  {
    Tape tp;
    Rng irng(84);
    const auto ro =
        imagine_trajectories(tp, wm, ac, h0, z0, 1, kGamma, irng, true, LatentMode::relaxed);
    const auto rets = lambda_returns_tape(tp, {ro.rewards.begin(), ro.rewards.begin() + 1},
                                          {ro.discounts.begin(), ro.discounts.begin() + 1},
                                          ro.values, lambda);
    tp.backward(actor_loss(tp, ro, rets, eta).total);
  }

  CHECK(fd_sweep(loss_value, ac.actor_params(), 1, 1e-3) > 60);

  // dynamics gradients pass through the frozen model and snapshot critic
  // without ever reaching their parameters
  for (Param* q : wm.params())
    for (double g : q->grad.data) CHECK(g == 0.0);
  for (Param* q : ac.critic_params())
    for (double g : q->grad.data) CHECK(g == 0.0);
}

TEST_CASE("actor loss is exactly constant when nothing depends on the actor") {
  Rng rng(91);
  CoWorldConfig cfg = tiny_config();
  EnvSpec env = tiny_env();
  WorldModel wm(cfg, env, "target", rng);
  ActorCritic ac(cfg, wm.feat_size(), env.action_dim, "target", rng);
  Rng p(92);
  perturb(ac.actor_params(), 0.3, p);

  Rng prng(93);
  auto [h0, z0] = posterior_starts(wm, 3, prng);

  for (Param* q : ac.actor_params()) q->zero_grad();
  Tape tp;
  Rng irng(94);
  const auto ro = imagine_trajectories(tp, wm, ac, h0, z0, 4, kGamma, irng);
  // constant returns + zero entropy scale: the discount weights are the only
  // remaining path, and they are stopped by design
  std::vector<TRef> rets;
  for (int t = 0; t < 4; ++t) rets.push_back(tp.constant(Tensor(3, 1, 0.7)));
  const auto out = actor_loss(tp, ro, rets, 0.0);
  tp.backward(out.total);
  for (Param* q : ac.actor_params())
    for (double g : q->grad.data) CHECK(g == 0.0);

  SUBCASE("returns length is validated") {
    std::vector<TRef> bad(rets.begin(), rets.begin() + 2);
    CHECK_THROWS_AS(actor_loss(tp, ro, bad, 0.0), UsageError);
  }
}

TEST_CASE("entropy bonus alone pushes the policy toward higher entropy") {
  Rng rng(101);
  CoWorldConfig cfg = tiny_config();
  EnvSpec env = tiny_env();
  WorldModel wm(cfg, env, "target", rng);
  ActorCritic ac(cfg, wm.feat_size(), env.action_dim, "target", rng);
  Rng p(102);
  perturb(ac.actor_params(), 0.3, p);

  Rng frng(103);
  Tensor feat(2, wm.feat_size());
  for (double& x : feat.data) x = frng.uniform(-1.0, 1.0);

  double prev = -1e300;
  for (int iter = 0; iter < 6; ++iter) {
    for (Param* q : ac.actor_params()) q->zero_grad();
    Tape tp;
    Rng arng(104);
    const auto pol = ac.policy(tp, tp.constant(feat), arng, false);
    const TRef ent = tp.mean_all(pol.entropy);
    const double now = tp.scalar(ent);
    CHECK(now > prev);
    prev = now;
    tp.backward(tp.scale(ent, -1.0));  // minimize negative entropy
    for (Param* q : ac.actor_params())
      for (size_t i = 0; i < q->value.size(); ++i)
        q->value.data[i] -= 0.05 * q->grad.data[i];
  }
}

TEST_CASE("acting is deterministic in eval mode and reproducible in explore mode") {
  Rng rng(111);
  CoWorldConfig cfg = tiny_config();
  EnvSpec env = tiny_env();
  env.image_size = 8;  // smallest frame the renderer accepts
  WorldModel wm(cfg, env, "target", rng);
  ActorCritic ac(cfg, wm.feat_size(), env.action_dim, "target", rng);
  Rng p(112);
  perturb(ac.actor_params(), 0.3, p);

  Env world(env);
  const auto obs0 = world.reset_with_seed(5);
  const auto obs1 = world.step({0.3, -0.2}).observation;

  SUBCASE("eval repeats exactly and ignores the rng") {
    PolicyCarry c1, c2;
    Rng r1(1), r2(999);
    const auto a1 = act(wm, ac, c1, obs0, ActMode::eval, r1);
    const auto a2 = act(wm, ac, c2, obs0, ActMode::eval, r2);
    CHECK(a1 == a2);
    CHECK(c1.first == false);
    // second step depends on the carry, still deterministically
    const auto b1 = act(wm, ac, c1, obs1, ActMode::eval, r1);
    const auto b2 = act(wm, ac, c2, obs1, ActMode::eval, r2);
    CHECK(b1 == b2);
    CHECK(b1 != a1);
    for (double x : b1) {
      CHECK(x > -1.0);
      CHECK(x < 1.0);
    }
  }

  SUBCASE("explore is seed-reproducible and seed-sensitive") {
    PolicyCarry c1, c2, c3;
    Rng r1(7), r2(7), r3(8);
    auto run = [&](PolicyCarry& c, Rng& r) {
      std::vector<double> flat;
      for (const auto& o : {obs0, obs1}) {
        const auto a = act(wm, ac, c, o, ActMode::explore, r);
        flat.insert(flat.end(), a.begin(), a.end());
      }
      return flat;
    };
    const auto f1 = run(c1, r1), f2 = run(c2, r2), f3 = run(c3, r3);
    CHECK(f1 == f2);
    CHECK(f1 != f3);
  }

  SUBCASE("observations of the wrong size are rejected") {
    PolicyCarry c;
    Rng r(1);
    std::vector<uint8_t> bad(7, 0);
    CHECK_THROWS_AS(act(wm, ac, c, bad, ActMode::explore, r), UsageError);
  }

  SUBCASE("action dimension must be positive") {
    Rng r(1);
    CHECK_THROWS_AS(ActorCritic(cfg, wm.feat_size(), 0, "x", r), ConfigError);
  }
}
