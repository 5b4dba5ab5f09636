#include "coworld/behavior.hpp"

#include <cmath>
#include <cstddef>

#include "coworld/errors.hpp"

namespace coworld {

namespace {

constexpr double kMinStd = 0.1;
// entropy of a unit Gaussian: 0.5 * ln(2 * pi * e)
constexpr double kGaussEntropy = 1.4189385332046727;

int positive_actions(int a) {
  if (a < 1) throw ConfigError("actor-critic: action_dim must be positive");
  return a;
}

}  // namespace

ActorCritic::ActorCritic(const CoWorldConfig& cfg, int feat_size, int action_dim,
                         const std::string& role, Rng& rng)
    : action_dim_(positive_actions(action_dim)),
      actor_(role + ".actor", feat_size, {cfg.hidden, cfg.hidden}, 2 * action_dim),
      critic_(role + ".critic", feat_size, {cfg.hidden, cfg.hidden}, 1),
      slow_critic_(role + ".slow_critic", feat_size, {cfg.hidden, cfg.hidden}, 1) {
  Rng init = rng.fork(role + ".behavior_init");
  actor_.init(init, 0.0);  // zero output layer: initial policy centered at 0
  critic_.init(init);
  slow_critic_.init(init);
  update_slow();
}

ActorCritic::PolicyOut ActorCritic::policy(Tape& tp, TRef feat, Rng& rng, bool sample) const {
  const TRef out = actor_.apply(tp, feat);
  const int rows = tp.value(out).rows;
  const TRef mean = tp.slice_cols(out, 0, action_dim_);
  const TRef raw_std = tp.slice_cols(out, action_dim_, 2 * action_dim_);
  const TRef sigma = tp.add_scalar(tp.softplus_(raw_std), kMinStd);
  TRef pre = mean;
  if (sample) {
    Tensor eps(rows, action_dim_);
    for (double& v : eps.data) v = rng.normal();
    pre = tp.add(mean, tp.mul(sigma, tp.constant(std::move(eps))));
  }
  const TRef action = tp.tanh_(pre);
  const TRef entropy =
      tp.add_scalar(tp.row_sum(tp.log_(sigma)), action_dim_ * kGaussEntropy);
  return {action, entropy};
}

TRef ActorCritic::value(Tape& tp, TRef feat) const { return critic_.apply(tp, feat); }

TRef ActorCritic::slow_value(Tape& tp, TRef feat) const { return slow_critic_.apply(tp, feat); }

void ActorCritic::update_slow() {
  std::vector<Param*> src, dst;
  critic_.collect(src);
  slow_critic_.collect(dst);
  copy_params(src, dst);
}

std::vector<Param*> ActorCritic::actor_params() {
  std::vector<Param*> out;
  actor_.collect(out);
  return out;
}

std::vector<Param*> ActorCritic::critic_params() {
  std::vector<Param*> out;
  critic_.collect(out);
  return out;
}

std::vector<Param*> ActorCritic::params() {
  std::vector<Param*> out;
  actor_.collect(out);
  critic_.collect(out);
  slow_critic_.collect(out);
  return out;
}

ImaginedRollout imagine_trajectories(Tape& tp, const WorldModel& wm, const ActorCritic& ac,
                                     const Tensor& start_h, const Tensor& start_z, int horizon,
                                     double gamma, Rng& rng, bool sample_actions,
                                     LatentMode latents) {
  if (horizon < 1) throw ConfigError("imagination: horizon must be at least 1");
  if (start_h.rows != start_z.rows)
    throw UsageError("imagination: start state row counts disagree");
  if (start_h.cols != wm.deter() || start_z.cols != wm.groups() * wm.classes())
    throw UsageError("imagination: start state widths do not match the model");

  ImaginedRollout ro;
  ro.rows = start_h.rows;
  ro.horizon = horizon;

  RSSMState s{tp.constant(start_h), tp.constant(start_z), TRef{}};
  ro.states.push_back(s);
  ro.feats.push_back(wm.feat(tp, s));

  for (int i = 0; i < horizon; ++i) {
    const auto pol = ac.policy(tp, ro.feats.back(), rng, sample_actions);
    ro.actions.push_back(pol.action);
    ro.entropies.push_back(pol.entropy);
    {
      Tape::FrozenScope freeze(tp);
      s = wm.imagine_step(tp, s, pol.action, rng, latents);
    }
    ro.states.push_back(s);
    ro.feats.push_back(wm.feat(tp, s));
  }

  // heads over every imagined state in one pass, sliced back per step
  const TRef all = tp.stack_rows(ro.feats);
  TRef rew, disc, val;
  {
    Tape::FrozenScope freeze(tp);
    rew = wm.predict_reward(tp, all);
    disc = tp.scale(tp.sigmoid_(wm.predict_discount_logit(tp, all)), gamma);
    val = ac.slow_value(tp, all);
  }
  for (int i = 0; i <= horizon; ++i) {
    const int r0 = i * ro.rows, r1 = (i + 1) * ro.rows;
    ro.rewards.push_back(tp.slice_rows(rew, r0, r1));
    ro.discounts.push_back(tp.slice_rows(disc, r0, r1));
    ro.values.push_back(tp.slice_rows(val, r0, r1));
  }
  return ro;
}

std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& discounts,
                                   const std::vector<double>& values, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ConfigError("lambda returns: lambda must lie in [0, 1]");
  const size_t h = rewards.size();
  if (discounts.size() != h || values.size() != h + 1)
    throw UsageError("lambda returns: array lengths disagree");
  std::vector<double> out(h);
  double next = values[h];
  for (size_t t = h; t-- > 0;) {
    next = rewards[t] + discounts[t] * ((1.0 - lambda) * values[t + 1] + lambda * next);
    out[t] = next;
  }
  return out;
}

std::vector<TRef> lambda_returns_tape(Tape& tp, const std::vector<TRef>& rewards,
                                      const std::vector<TRef>& discounts,
                                      const std::vector<TRef>& values, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ConfigError("lambda returns: lambda must lie in [0, 1]");
  const size_t h = rewards.size();
  if (discounts.size() != h || values.size() != h + 1)
    throw UsageError("lambda returns: array lengths disagree");
  std::vector<TRef> out(h);
  TRef next = values[h];
  for (size_t t = h; t-- > 0;) {
    const TRef mix =
        tp.add(tp.scale(values[t + 1], 1.0 - lambda), tp.scale(next, lambda));
    next = tp.add(rewards[t], tp.mul(discounts[t], mix));
    out[t] = next;
  }
  return out;
}

CriticLossOut critic_loss(Tape& tp, const ActorCritic& target, const ActorCritic* source,
                          const ImaginedRollout& ro, double alpha, double zeta, double lambda) {
  if (alpha > 0.0 && source == nullptr)
    throw ConfigError("critic loss: alpha > 0 requires a source critic");
  const int h = ro.horizon;
  const int rows = ro.rows;

  CriticLossOut out;
  out.returns = lambda_returns_tape(
      tp, {ro.rewards.begin(), ro.rewards.begin() + h},
      {ro.discounts.begin(), ro.discounts.begin() + h}, ro.values, lambda);

  // stop the features so this sweep trains only value parameters
  const TRef feats =
      tp.stop_grad(tp.stack_rows({ro.feats.begin(), ro.feats.begin() + h}));
  const TRef v = target.value(tp, feats);
  const TRef targets = tp.stop_grad(tp.stack_rows(out.returns));
  const TRef td = tp.mean_all(tp.scale(tp.square_(tp.sub(v, targets)), 0.5));

  TRef reg = tp.zeros(1, 1);
  long clamped = 0;
  if (source != nullptr) {
    const TRef scaled = tp.scale(v, zeta);
    const TRef v_src = tp.stop_grad(source->value(tp, feats));
    reg = tp.mean_all(tp.maximum(scaled, v_src));
    const Tensor& a = tp.value(scaled);
    const Tensor& b = tp.value(v_src);
    for (size_t i = 0; i < a.data.size(); ++i)
      if (a.data[i] >= b.data[i]) ++clamped;
  }
  out.total = tp.add(td, tp.scale(reg, alpha));

  out.report.td_loss = tp.scalar(td);
  out.report.regularizer = tp.scalar(reg);
  out.report.total = tp.scalar(out.total);
  out.report.fraction_clamped =
      source != nullptr ? static_cast<double>(clamped) / (static_cast<double>(h) * rows) : 0.0;
  return out;
}

ActorLossOut actor_loss(Tape& tp, const ImaginedRollout& ro, const std::vector<TRef>& returns,
                        double entropy_scale) {
  const int h = ro.horizon;
  if (static_cast<int>(returns.size()) != h)
    throw UsageError("actor loss: returns length does not match the rollout horizon");

  std::vector<TRef> ret_rows, ent_rows;
  ret_rows.reserve(static_cast<size_t>(h));
  ent_rows.reserve(static_cast<size_t>(h));
  TRef weight = tp.constant(Tensor(ro.rows, 1, 1.0));
  for (int t = 0; t < h; ++t) {
    if (t > 0)
      weight = tp.stop_grad(tp.mul(weight, ro.discounts[static_cast<size_t>(t - 1)]));
    ret_rows.push_back(tp.mul(weight, returns[static_cast<size_t>(t)]));
    ent_rows.push_back(tp.mul(weight, ro.entropies[static_cast<size_t>(t)]));
  }
  const TRef ret_mean = tp.mean_all(tp.stack_rows(ret_rows));
  const TRef ent_mean = tp.mean_all(tp.stack_rows(ent_rows));

  ActorLossOut out;
  out.total = tp.sub(tp.scale(ret_mean, -1.0), tp.scale(ent_mean, entropy_scale));
  out.value = tp.scalar(out.total);
  out.mean_entropy = tp.scalar(ent_mean);
  return out;
}

std::vector<double> act(const WorldModel& wm, const ActorCritic& ac, PolicyCarry& carry,
                        const std::vector<uint8_t>& obs, ActMode mode, Rng& rng) {
  const int a_dim = ac.action_dim();
  if (static_cast<int>(obs.size()) != wm.obs_dim())
    throw UsageError("act: observation size does not match the model");

  Tape tp;
  Tape::FrozenScope freeze(tp);  // inference only; no leaves needed

  RSSMState prev;
  TRef prev_action;
  if (carry.first) {
    prev = wm.initial_state(tp, 1);
    prev_action = tp.zeros(1, a_dim);
  } else {
    prev = RSSMState{tp.constant(carry.h), tp.constant(carry.z), TRef{}};
    Tensor pa(1, a_dim);
    for (int i = 0; i < a_dim; ++i) pa.data[static_cast<size_t>(i)] = carry.prev_action[i];
    prev_action = tp.constant(std::move(pa));
  }

  const TRef obs_norm = wm.obs_constant(tp, obs.data(), 1);
  const bool explore = mode == ActMode::explore;
  const auto step = wm.observe_step(tp, prev, prev_action, obs_norm, {}, rng,
                                    explore ? LatentMode::sample : LatentMode::mode);
  const auto pol = ac.policy(tp, wm.feat(tp, step.post), rng, explore);

  const Tensor& a = tp.value(pol.action);
  std::vector<double> action(a.data.begin(), a.data.end());
  // quantize to f32 at the policy boundary: the carry, the env, and the
  // stored record all see the identical action, so replays are bit-exact
  for (double& v : action) v = static_cast<double>(static_cast<float>(v));
  carry.h = tp.value(step.post.h);
  carry.z = tp.value(step.post.z);
  carry.prev_action = action;
  carry.first = false;
  return action;
}

}  // namespace coworld
