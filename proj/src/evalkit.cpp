#include "coworld/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "coworld/errors.hpp"

namespace coworld {

namespace {

// shared episode loop: reset, pick-act-step until the env closes the episode
Episode run_episode(Env& env, const ScriptedPolicy& pick) {
  const EnvSpec& spec = env.spec();
  Episode ep;
  ep.H = spec.image_size;
  ep.W = spec.image_size;
  ep.C = spec.channels;
  ep.A = spec.action_dim;

  std::vector<uint8_t> obs = env.reset();
  ep.episode_seed = env.last_episode_seed();
  ep.observations = obs;
  while (true) {
    std::vector<double> a = pick(obs, env.state());
    if (static_cast<int>(a.size()) != spec.action_dim)
      throw UsageError("collect episode: policy returned " + std::to_string(a.size()) +
                       " action dims, env takes " + std::to_string(spec.action_dim));
    for (double& v : a) {
      const float f = static_cast<float>(v);
      ep.actions.push_back(f);
      v = static_cast<double>(f);  // step with exactly what the record replays
    }
    StepResult sr = env.step(a);
    ep.rewards.push_back(static_cast<float>(sr.reward));
    ep.discounts.push_back(static_cast<float>(sr.discount_flag));
    ep.observations.insert(ep.observations.end(), sr.observation.begin(), sr.observation.end());
    obs = std::move(sr.observation);
    ++ep.T;
    if (sr.discount_flag == 0.0) break;
  }
  ep.validate();
  return ep;
}

void check_bundle_fits_env(const EnvSpec& spec, const WorldModel& wm, const ActorCritic& ac) {
  if (wm.obs_dim() != spec.obs_size())
    throw UsageError("policy rollout: model takes " + std::to_string(wm.obs_dim()) +
                     "-dim frames, env emits " + std::to_string(spec.obs_size()));
  if (ac.action_dim() != spec.action_dim)
    throw UsageError("policy rollout: actor emits " + std::to_string(ac.action_dim()) +
                     " action dims, env takes " + std::to_string(spec.action_dim));
}

TRef row_constant(Tape& tp, const float* src, int n) {
  Tensor t(1, n);
  for (int i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = static_cast<double>(src[i]);
  return tp.constant(std::move(t));
}

}  // namespace

Episode collect_episode(Env& env, const WorldModel& wm, const ActorCritic& ac, ActMode mode,
                        Rng& rng) {
  check_bundle_fits_env(env.spec(), wm, ac);
  PolicyCarry carry;
  return run_episode(env, [&](const std::vector<uint8_t>& obs, const StepInfo&) {
    return act(wm, ac, carry, obs, mode, rng);
  });
}

Episode collect_episode_scripted(Env& env, const ScriptedPolicy& policy) {
  return run_episode(env, policy);
}

EvalReport summarize_returns(std::vector<double> returns) {
  if (returns.empty()) throw UsageError("summarize_returns: no returns");
  EvalReport r;
  r.episodes = static_cast<int>(returns.size());
  double sum = 0.0;
  for (double v : returns) sum += v;
  r.mean_return = sum / r.episodes;
  double sq = 0.0;
  for (double v : returns) sq += (v - r.mean_return) * (v - r.mean_return);
  r.std_return = std::sqrt(sq / r.episodes);
  r.per_episode_returns = std::move(returns);
  return r;
}

namespace {

double episode_return(const Episode& ep) {
  double sum = 0.0;
  for (float r : ep.rewards) sum += static_cast<double>(r);
  return sum;
}

}  // namespace

EvalReport evaluate_policy(const EnvSpec& spec, const WorldModel& wm, const ActorCritic& ac,
                           int episodes, uint64_t seed) {
  if (episodes < 1) throw UsageError("evaluate_policy: episodes must be >= 1");
  EnvSpec s = spec;
  s.seed = seed;
  Env env(s);
  Rng rng(seed);  // greedy acting never consumes it; keeps the call signature honest
  std::vector<double> returns;
  returns.reserve(static_cast<size_t>(episodes));
  for (int i = 0; i < episodes; ++i)
    returns.push_back(episode_return(collect_episode(env, wm, ac, ActMode::eval, rng)));
  return summarize_returns(std::move(returns));
}

EvalReport evaluate_policy_scripted(const EnvSpec& spec, const ScriptedPolicy& policy,
                                    int episodes, uint64_t seed) {
  if (episodes < 1) throw UsageError("evaluate_policy: episodes must be >= 1");
  EnvSpec s = spec;
  s.seed = seed;
  Env env(s);
  std::vector<double> returns;
  returns.reserve(static_cast<size_t>(episodes));
  for (int i = 0; i < episodes; ++i)
    returns.push_back(episode_return(collect_episode_scripted(env, policy)));
  return summarize_returns(std::move(returns));
}

ValueDiagnostic value_diagnostic(const EnvSpec& spec, const WorldModel& wm, const ActorCritic& ac,
                                 int horizon, double gamma) {
  if (horizon < 1) throw UsageError("value_diagnostic: horizon must be >= 1");
  if (!(gamma > 0.0) || gamma > 1.0)
    throw ConfigError("value_diagnostic: gamma must be in (0, 1]");
  EnvSpec s = spec;
  s.episode_limit = horizon;  // the roll must never be cut short
  check_bundle_fits_env(s, wm, ac);
  Env env(s);

  std::vector<uint8_t> obs = env.reset();
  Rng rng(s.seed);  // mode latents and mean actions never consume it
  Tensor h, z;
  std::vector<double> prev_action;
  bool first = true;

  ValueDiagnostic d;
  d.horizon = horizon;
  double discount_pow = 1.0;
  for (int t = 0; t < horizon; ++t) {
    Tape tp;
    Tape::FrozenScope freeze(tp);
    RSSMState prev;
    TRef act_prev;
    if (first) {
      prev = wm.initial_state(tp, 1);
      act_prev = tp.zeros(1, s.action_dim);
    } else {
      prev = RSSMState{tp.constant(h), tp.constant(z), TRef{}};
      Tensor pa(1, s.action_dim);
      for (int i = 0; i < s.action_dim; ++i) pa.data[static_cast<size_t>(i)] = prev_action[i];
      act_prev = tp.constant(std::move(pa));
    }
    const TRef obs_norm = wm.obs_constant(tp, obs.data(), 1);
    const auto step = wm.observe_step(tp, prev, act_prev, obs_norm, {}, rng, LatentMode::mode);
    const TRef feat = wm.feat(tp, step.post);
    d.estimated_value += tp.scalar(ac.value(tp, feat));

    const auto pol = ac.policy(tp, feat, rng, false);
    const Tensor& a = tp.value(pol.action);
    std::vector<double> action(a.data.begin(), a.data.end());
    for (double& v : action) v = static_cast<double>(static_cast<float>(v));
    h = tp.value(step.post.h);
    z = tp.value(step.post.z);
    prev_action = action;
    first = false;

    StepResult sr = env.step(action);
    d.true_value += discount_pow * sr.reward;
    discount_pow *= gamma;
    obs = std::move(sr.observation);
  }

  d.gap = d.estimated_value - d.true_value;
  const double scale = std::max(std::abs(d.true_value), std::abs(d.estimated_value));
  if (scale > 0.0) {
    d.true_scaled = d.true_value / scale;
    d.estimated_scaled = d.estimated_value / scale;
  }
  return d;
}

double alignment_divergence(const WorldModel& source, const WorldModel& target,
                            const std::vector<uint8_t>& observations, int rows) {
  if (rows < 1) throw UsageError("alignment divergence: empty batch");
  if (source.obs_dim() != target.obs_dim())
    throw UsageError("alignment divergence: encoder input sizes differ");
  if (source.groups() != target.groups() || source.classes() != target.classes())
    throw UsageError("alignment divergence: latent layouts differ");
  if (observations.size() != static_cast<size_t>(rows) * source.obs_dim())
    throw UsageError("alignment divergence: expected " +
                     std::to_string(static_cast<size_t>(rows) * source.obs_dim()) +
                     " frame bytes, got " + std::to_string(observations.size()));

  Tape tp;
  Tape::FrozenScope freeze(tp);
  const TRef obs = source.obs_constant(tp, observations.data(), rows);
  const TRef src_logits = source.encode(tp, obs);
  const TRef tgt_logits = target.encode(tp, obs);
  const TRef kl = categorical_kl_rows(tp, src_logits, tgt_logits, source.classes());
  return tp.scalar(tp.mean_all(kl)) / source.groups();
}

OpenLoopReport open_loop_prediction(const WorldModel& wm, const Episode& ep, int context,
                                    int horizon) {
  if (context < 1) throw UsageError("open-loop prediction: context must be >= 1");
  if (horizon < 0) throw UsageError("open-loop prediction: negative horizon");
  ep.validate();
  if (ep.T < context + horizon)
    throw UsageError("open-loop prediction: episode has " + std::to_string(ep.T) +
                     " steps, needs at least " + std::to_string(context + horizon));
  if (static_cast<int>(ep.frame_size()) != wm.obs_dim())
    throw UsageError("open-loop prediction: frame size does not match the model");
  if (ep.A != wm.action_dim())
    throw UsageError("open-loop prediction: action width does not match the model");

  const size_t frame = ep.frame_size();
  Tape tp;
  Tape::FrozenScope freeze(tp);
  Rng rng(0);  // mode latents never consume it

  RSSMState st = wm.initial_state(tp, 1);
  for (int l = 0; l < context; ++l) {
    const TRef act =
        l == 0 ? tp.zeros(1, ep.A) : row_constant(tp, ep.actions.data() + (l - 1) * ep.A, ep.A);
    const TRef obs_norm = wm.obs_constant(tp, ep.observations.data() + l * frame, 1);
    st = wm.observe_step(tp, st, act, obs_norm, {}, rng, LatentMode::mode).post;
  }

  OpenLoopReport rep;
  rep.context = context;
  rep.horizon = horizon;
  for (int i = 0; i < horizon; ++i) {
    const int t = context - 1 + i;  // recorded action driving frame t -> t+1
    const TRef act = row_constant(tp, ep.actions.data() + t * ep.A, ep.A);
    st = wm.imagine_step(tp, st, act, rng, LatentMode::mode);
    const TRef mu = wm.decode_obs(tp, wm.feat(tp, st));
    const TRef gt = wm.obs_constant(tp, ep.observations.data() + (t + 1) * frame, 1);
    rep.mse.push_back(tp.scalar(tp.mean_all(tp.square_(tp.sub(mu, gt)))));
    const Tensor mu_v = tp.value(mu);
    rep.predicted.emplace_back(mu_v.data.begin(), mu_v.data.end());
  }
  if (horizon > 0) {
    double sum = 0.0;
    for (double m : rep.mse) sum += m;
    rep.mean_mse = sum / horizon;
  }
  return rep;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"episodes", r.episodes},
       {"mean_return", r.mean_return},
       {"std_return", r.std_return},
       {"per_episode_returns", r.per_episode_returns}};
}

void to_json(nlohmann::json& j, const ValueDiagnostic& d) {
  j = {{"horizon", d.horizon},
       {"true_value", d.true_value},
       {"estimated_value", d.estimated_value},
       {"gap", d.gap},
       {"true_scaled", d.true_scaled},
       {"estimated_scaled", d.estimated_scaled}};
}

void to_json(nlohmann::json& j, const OpenLoopReport& r) {
  j = {{"context", r.context},
       {"horizon", r.horizon},
       {"mse", r.mse},
       {"mean_mse", r.mean_mse}};
}

}  // namespace coworld
