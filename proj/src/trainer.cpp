#include "coworld/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "coworld/errors.hpp"
#include "coworld/evalkit.hpp"

namespace coworld {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)

Tensor take_rows(const Tensor& t, int n) {
  Tensor out(n, t.cols);
  std::copy_n(t.data.begin(), static_cast<size_t>(n) * t.cols, out.data.begin());
  return out;
}

void add_to(WMLossReport& a, const WMLossReport& b) {
  a.image_loss += b.image_loss;
  a.reward_loss += b.reward_loss;
  a.discount_loss += b.discount_loss;
  a.kl_loss += b.kl_loss;
  a.domain_kl_loss += b.domain_kl_loss;
  a.total += b.total;
}

void add_to(CriticLossReport& a, const CriticLossReport& b) {
  a.td_loss += b.td_loss;
  a.regularizer += b.regularizer;
  a.total += b.total;
  a.fraction_clamped += b.fraction_clamped;
}

void scale_means(IterationStats& s, int updates) {
  if (updates < 1) return;
  const double inv = 1.0 / updates;
  s.wm.image_loss *= inv;
  s.wm.reward_loss *= inv;
  s.wm.discount_loss *= inv;
  s.wm.kl_loss *= inv;
  s.wm.domain_kl_loss *= inv;
  s.wm.total *= inv;
  s.critic.td_loss *= inv;
  s.critic.regularizer *= inv;
  s.critic.total *= inv;
  s.critic.fraction_clamped *= inv;
  s.actor_loss *= inv;
  s.actor_entropy *= inv;
  s.wm_grad_norm *= inv;
  s.actor_grad_norm *= inv;
  s.critic_grad_norm *= inv;
  s.reward_nll_source *= inv;
  s.reward_nll_target *= inv;
}

// one model update; hands back posterior snapshots as imagination starts
struct WMStepOut {
  Tensor start_h, start_z;
  WMLossReport report;
  RewardMLEReport mle;  // filled only when a relabel batch was given
  double grad_norm = 0.0;
};

WMStepOut wm_update(const CoWorldConfig& cfg, AgentBundle& b, const SequenceBatch& batch,
                    WorldModel* align_encoder, double beta2, const SequenceBatch* relabel_batch,
                    Rng& rng) {
  Tape tp;
  const WMLossOut out = wm_loss(tp, b.wm, batch, align_encoder, cfg.beta1, beta2, cfg.free_bits,
                                cfg.kl_balance, rng);
  TRef total = out.total;
  WMStepOut r;
  r.report = out.report;
  if (relabel_batch) {
    // the model loss above already fits rewards on the home batch; only the
    // cross-domain half is added here
    const TRef nll = relabeled_reward_nll(tp, b.wm, *relabel_batch, cfg.k, rng);
    r.mle.source_nll = out.report.reward_loss;
    r.mle.target_nll = tp.scalar(nll);
    r.mle.total = r.mle.source_nll + r.mle.target_nll;
    if (!std::isfinite(r.mle.target_nll))
      throw NumericError("relabeled reward loss: non-finite total");
    total = tp.add(total, nll);
  }
  tp.backward(total);
  r.grad_norm = b.wm_opt.step(b.wm.params());

  r.start_h = tp.value(out.seq.h_all);
  r.start_z = tp.value(out.seq.z_all);
  if (cfg.imagination_starts > 0 && cfg.imagination_starts < r.start_h.rows) {
    r.start_h = take_rows(r.start_h, cfg.imagination_starts);
    r.start_z = take_rows(r.start_z, cfg.imagination_starts);
  }
  return r;
}

struct BehaviorStepOut {
  CriticLossReport critic;
  double actor_loss = 0.0;
  double entropy = 0.0;
  double actor_grad_norm = 0.0;
  double critic_grad_norm = 0.0;
};

BehaviorStepOut behavior_update(const CoWorldConfig& cfg, AgentBundle& b,
                                const ActorCritic* source_critic, double alpha,
                                const Tensor& start_h, const Tensor& start_z, Rng& rng) {
  Tape tp;
  const ImaginedRollout ro =
      imagine_trajectories(tp, b.wm, b.ac, start_h, start_z, cfg.horizon, cfg.gamma, rng);
  const CriticLossOut cl =
      critic_loss(tp, b.ac, alpha > 0.0 ? source_critic : nullptr, ro, alpha, cfg.zeta,
                  cfg.lambda);
  const ActorLossOut al = actor_loss(tp, ro, cl.returns, cfg.entropy_scale);
  if (!std::isfinite(al.value) || !std::isfinite(cl.report.total))
    throw NumericError("behavior loss: non-finite total");
  // one sweep covers both heads: the critic loss reaches no actor parameter
  // (stopped features) and the actor loss reaches no live critic parameter
  // (returns bootstrap from the slow copy)
  tp.backward(tp.add(al.total, cl.total));

  BehaviorStepOut r;
  r.actor_grad_norm = b.actor_opt.step(b.ac.actor_params());
  r.critic_grad_norm = b.critic_opt.step(b.ac.critic_params());
  r.critic = cl.report;
  r.actor_loss = al.value;
  r.entropy = al.mean_entropy;

  ++b.behavior_updates;
  if (b.behavior_updates % cfg.slow_critic_interval == 0) b.ac.update_slow();
  return r;
}

void accumulate(IterationStats& s, const WMStepOut& w, const BehaviorStepOut& bh) {
  add_to(s.wm, w.report);
  add_to(s.critic, bh.critic);
  s.actor_loss += bh.actor_loss;
  s.actor_entropy += bh.entropy;
  s.wm_grad_norm += w.grad_norm;
  s.actor_grad_norm += bh.actor_grad_norm;
  s.critic_grad_norm += bh.critic_grad_norm;
  s.reward_nll_source += w.mle.source_nll;
  s.reward_nll_target += w.mle.target_nll;
}

[[noreturn]] void rethrow_with_step(const NumericError& ex, const char* phase, int u) {
  throw NumericError(std::string(ex.what()) + " (" + phase + " update " + std::to_string(u) +
                     ")");
}

// fixed metrics schema; one row per outer iteration
const std::vector<std::string> kMetricColumns = {
    "step",
    "tgt_wm_image",
    "tgt_wm_reward",
    "tgt_wm_discount",
    "tgt_wm_kl",
    "tgt_wm_domain_kl",
    "tgt_wm_total",
    "tgt_critic_td",
    "tgt_critic_reg",
    "tgt_critic_total",
    "tgt_critic_clamped",
    "tgt_actor_loss",
    "tgt_actor_entropy",
    "tgt_wm_gnorm",
    "tgt_actor_gnorm",
    "tgt_critic_gnorm",
    "src_wm_total",
    "src_reward_nll",
    "src_relabel_nll",
    "src_critic_td",
    "src_actor_loss",
    "src_episodes",
    "src_buffer_steps",
    "eval_mean_return",
    "eval_std_return",
    "value_true",
    "value_estimated",
    "value_gap",
    "align_kl",
};

class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, const std::vector<std::string>& columns)
      : columns_(columns) {
    out_.open(path);
    if (!out_) throw DataError("metrics: cannot open " + path);
    for (size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << columns_[i];
    out_ << "\n";
    out_.flush();
  }

  void row(const std::vector<double>& values) {
    if (values.size() != columns_.size())
      throw UsageError("metrics: row has " + std::to_string(values.size()) + " values, schema " +
                       std::to_string(columns_.size()));
    char buf[40];
    for (size_t i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", values[i]);
      out_ << (i ? "," : "") << buf;
    }
    out_ << "\n";
    out_.flush();
  }

 private:
  std::vector<std::string> columns_;
  std::ofstream out_;
};

}  // namespace

AgentBundle::AgentBundle(const CoWorldConfig& cfg, const EnvSpec& env, const std::string& role_,
                         Rng& rng)
    : role(role_),
      wm(cfg, env, role_, rng),
      ac(cfg, cfg.feat_size(), env.action_dim, role_ + ".beh", rng),
      wm_opt(cfg.wm_lr, cfg.grad_clip),
      actor_opt(cfg.actor_lr, cfg.grad_clip),
      critic_opt(cfg.critic_lr, cfg.grad_clip) {}

std::vector<Param*> AgentBundle::params() {
  std::vector<Param*> out = wm.params();
  for (Param* p : ac.params()) out.push_back(p);
  return out;
}

void save_checkpoint(const std::string& path, AgentBundle& target, AgentBundle* source,
                     const nlohmann::json& extra_meta) {
  std::vector<Param*> all = target.params();
  if (source)
    for (Param* p : source->params()) all.push_back(p);
  nlohmann::json meta = extra_meta;
  meta["has_source"] = source != nullptr;
  save_param_file(path, all, meta);
}

nlohmann::json load_checkpoint(const std::string& path, AgentBundle& target,
                               AgentBundle* source) {
  std::vector<Param*> all = target.params();
  if (source)
    for (Param* p : source->params()) all.push_back(p);
  return load_param_file(path, all);
}

nlohmann::json read_checkpoint_meta(const std::string& path) { return load_param_file_meta(path); }

std::vector<double> relabel_source_rewards(const SequenceBatch& batch, BatchOrigin origin,
                                           const WorldModel& source_wm, double k, Rng& rng,
                                           LatentMode latents) {
  if (k < 0.0 || k > 1.0) throw ConfigError("relabel: k must be in [0, 1]");
  std::vector<double> out(batch.rewards.size());
  if (origin == BatchOrigin::source) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(batch.rewards[i]);
    return out;
  }
  Tape tp;
  Tape::FrozenScope freeze(tp);  // labels carry no gradients
  const SequenceForward fwd = observe_sequence(tp, source_wm, batch, rng, latents);
  const Tensor rhat = tp.value(source_wm.predict_reward(tp, fwd.seq.feats));
  const int B = batch.B, L = batch.L;
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l) {
      const size_t i = static_cast<size_t>(b) * L + l;
      // forward pass stacks rows time-major; the batch is (b, l)-major
      out[i] = k * rhat.data[static_cast<size_t>(l) * B + b] +
               (1.0 - k) * static_cast<double>(batch.rewards[i]);
    }
  return out;
}

TRef relabeled_reward_nll(Tape& tp, const WorldModel& source_wm, const SequenceBatch& target_batch,
                          double k, Rng& rng, LatentMode latents) {
  if (k < 0.0 || k > 1.0) throw ConfigError("relabel: k must be in [0, 1]");
  const SequenceForward fwd = observe_sequence(tp, source_wm, target_batch, rng, latents);
  const TRef rhat = source_wm.predict_reward(tp, fwd.seq.feats);
  const TRef label =
      tp.add(tp.scale(tp.stop_grad(rhat), k), tp.scale(fwd.rew_all, 1.0 - k));
  return tp.add_scalar(tp.scale(tp.mean_all(tp.square_(tp.sub(rhat, label))), 0.5), kHalfLog2Pi);
}

RewardMLEOut reward_mle_loss(Tape& tp, const WorldModel& source_wm,
                             const SequenceBatch& source_batch, const SequenceBatch* target_batch,
                             double k, Rng& rng, LatentMode latents) {
  const SequenceForward fwd = observe_sequence(tp, source_wm, source_batch, rng, latents);
  const TRef mu = source_wm.predict_reward(tp, fwd.seq.feats);
  const TRef source_nll = tp.add_scalar(
      tp.scale(tp.mean_all(tp.square_(tp.sub(mu, fwd.rew_all))), 0.5), kHalfLog2Pi);

  RewardMLEOut out;
  out.total = source_nll;
  out.report.source_nll = tp.scalar(source_nll);
  if (target_batch) {
    const TRef target_nll = relabeled_reward_nll(tp, source_wm, *target_batch, k, rng, latents);
    out.report.target_nll = tp.scalar(target_nll);
    out.total = tp.add(source_nll, target_nll);
  }
  out.report.total = tp.scalar(out.total);
  if (!std::isfinite(out.report.total)) throw NumericError("reward likelihood: non-finite total");
  return out;
}

IterationStats pretrain_source(const CoWorldConfig& cfg, AgentBundle& source, Env& env,
                               ReplayBuffer& buffer, Rng& rng) {
  cfg.validate();
  IterationStats s;
  while (static_cast<int>(buffer.episode_count()) < cfg.prefill_episodes) {
    buffer.append(collect_episode(env, source.wm, source.ac, ActMode::explore, rng));
    ++s.episodes_collected;
  }
  s.updates = cfg.pretrain_steps;
  for (int u = 0; u < cfg.pretrain_steps; ++u) {
    try {
      const SequenceBatch batch = buffer.sample_sequences(cfg.batch_size, cfg.seq_len, rng);
      const WMStepOut w = wm_update(cfg, source, batch, nullptr, 0.0, nullptr, rng);
      const BehaviorStepOut bh =
          behavior_update(cfg, source, nullptr, 0.0, w.start_h, w.start_z, rng);
      accumulate(s, w, bh);
    } catch (const NumericError& ex) {
      rethrow_with_step(ex, "pretrain", u);
    }
    if ((u + 1) % cfg.pretrain_env_interval == 0) {
      buffer.append(collect_episode(env, source.wm, source.ac, ActMode::explore, rng));
      ++s.episodes_collected;
    }
  }
  scale_means(s, cfg.pretrain_steps);
  return s;
}

IterationStats train_target_iteration(const CoWorldConfig& cfg, AgentBundle& target,
                                      AgentBundle* source, const ReplayBuffer& offline,
                                      Rng& rng) {
  cfg.validate();
  const double beta2 = cfg.effective_beta2();
  const double alpha = cfg.effective_alpha();
  if ((beta2 > 0.0 || alpha > 0.0) && !source)
    throw ConfigError(
        "target iteration: alignment or value regularization requires a source agent");

  const uint64_t source_fp = source ? param_fingerprint(source->params()) : 0;
  const int64_t env_steps = Env::global_total_steps();

  IterationStats s;
  s.updates = cfg.k1;
  for (int u = 0; u < cfg.k1; ++u) {
    try {
      const SequenceBatch batch = offline.sample_sequences(cfg.batch_size, cfg.seq_len, rng);
      const WMStepOut w = wm_update(cfg, target, batch, beta2 > 0.0 ? &source->wm : nullptr,
                                    beta2, nullptr, rng);
      const BehaviorStepOut bh = behavior_update(
          cfg, target, alpha > 0.0 ? &source->ac : nullptr, alpha, w.start_h, w.start_z, rng);
      accumulate(s, w, bh);
    } catch (const NumericError& ex) {
      rethrow_with_step(ex, "target", u);
    }
  }
  scale_means(s, cfg.k1);

  if (Env::global_total_steps() != env_steps)
    throw std::logic_error("target iteration stepped an environment");
  if (source && param_fingerprint(source->params()) != source_fp)
    throw std::logic_error("target iteration modified source parameters");
  return s;
}

IterationStats train_source_iteration(const CoWorldConfig& cfg, AgentBundle& source,
                                      AgentBundle& target, Env& source_env,
                                      ReplayBuffer& source_buffer, const ReplayBuffer& offline,
                                      Rng& rng) {
  cfg.validate();
  const uint64_t target_fp = param_fingerprint(target.params());
  const int64_t global_steps = Env::global_total_steps();
  const int64_t own_steps = source_env.total_steps();

  IterationStats s;
  s.updates = cfg.k2;
  for (int u = 0; u < cfg.k2; ++u) {
    try {
      const SequenceBatch src_batch =
          source_buffer.sample_sequences(cfg.batch_size, cfg.seq_len, rng);
      const SequenceBatch tgt_batch = offline.sample_sequences(cfg.batch_size, cfg.seq_len, rng);
      const WMStepOut w = wm_update(cfg, source, src_batch, nullptr, 0.0, &tgt_batch, rng);
      const BehaviorStepOut bh =
          behavior_update(cfg, source, nullptr, 0.0, w.start_h, w.start_z, rng);
      accumulate(s, w, bh);
    } catch (const NumericError& ex) {
      rethrow_with_step(ex, "source", u);
    }
    if ((u + 1) % cfg.source_env_interval == 0) {
      source_buffer.append(collect_episode(source_env, source.wm, source.ac, ActMode::explore,
                                           rng));
      ++s.episodes_collected;
    }
  }
  scale_means(s, cfg.k2);

  if (param_fingerprint(target.params()) != target_fp)
    throw std::logic_error("source iteration modified target parameters");
  if (Env::global_total_steps() - global_steps != source_env.total_steps() - own_steps)
    throw std::logic_error("source iteration stepped an environment it does not own");
  return s;
}

std::string coworld_train(const CoWorldConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (cfg.run_dir.empty()) throw ConfigError("run_dir: required");
  if (cfg.dataset_dir.empty()) throw ConfigError("dataset_dir: required");
  if (!fs::exists(cfg.dataset_dir))
    throw ConfigError("dataset_dir: not found: " + cfg.dataset_dir);
  cfg.target_env.validate();
  if (cfg.seq_len > cfg.target_env.episode_limit)
    throw ConfigError("seq_len: longer than a target episode");
  if (cfg.source_enabled()) {
    cfg.source_env.validate();
    if (cfg.source_env.obs_size() != cfg.target_env.obs_size())
      throw ConfigError("env specs: source and target frame sizes must match");
    if (cfg.source_env.action_dim != cfg.target_env.action_dim)
      throw ConfigError("env specs: source and target action spaces must match");
    if (cfg.seq_len > cfg.source_env.episode_limit)
      throw ConfigError("seq_len: longer than a source episode");
  }

  const fs::path run(cfg.run_dir);
  if (fs::exists(run / "metrics.csv"))
    throw ConfigError("run_dir: already holds a run: " + (run / "metrics.csv").string());
  fs::create_directories(run / "checkpoints");
  {
    std::ofstream f(run / "config.json");
    f << cfg.to_json().dump(2) << "\n";
  }

  ReplayBuffer offline = ReplayBuffer::load_dir(cfg.dataset_dir, BufferMode::offline);
  if (offline.episode_count() == 0) throw DataError("dataset: no episodes in " + cfg.dataset_dir);

  const Rng root(cfg.seed);
  Rng init_target = root.fork("init-target");
  Rng init_source = root.fork("init-source");
  Rng r_pretrain = root.fork("pretrain");
  Rng r_target = root.fork("target-iter");
  Rng r_source = root.fork("source-iter");
  Rng r_eval = root.fork("eval");

  AgentBundle target(cfg, cfg.target_env, "target", init_target);
  std::optional<AgentBundle> source;
  std::optional<Env> source_env;
  std::optional<ReplayBuffer> source_buffer;
  if (cfg.source_enabled()) {
    source.emplace(cfg, cfg.source_env, "source", init_source);
    source_env.emplace(cfg.source_env);
    source_buffer.emplace(BufferMode::online, cfg.buffer_capacity);
  }

  MetricsWriter metrics((run / "metrics.csv").string(), kMetricColumns);
  std::vector<std::string> checkpoint_names;
  std::string last_checkpoint = "(none)";
  const auto checkpoint = [&](const std::string& name, nlohmann::json meta) {
    meta["config"] = cfg.to_json();
    const std::string path = (run / "checkpoints" / name).string();
    save_checkpoint(path, target, source ? &*source : nullptr, meta);
    checkpoint_names.push_back(name);
    last_checkpoint = path;
  };

  const double nan = std::numeric_limits<double>::quiet_NaN();
  double final_eval_mean = nan, final_eval_std = nan;

  try {
    if (source) {
      pretrain_source(cfg, *source, *source_env, *source_buffer, r_pretrain);
      checkpoint("pretrain.ckpt", {{"phase", "pretrain"}});
    }

    for (int it = 1; it <= cfg.outer_iterations; ++it) {
      const IterationStats ts =
          train_target_iteration(cfg, target, source ? &*source : nullptr, offline, r_target);
      IterationStats ss;
      if (source)
        ss = train_source_iteration(cfg, *source, target, *source_env, *source_buffer, offline,
                                    r_source);

      double eval_mean = nan, eval_std = nan;
      double value_true = nan, value_est = nan, value_gap = nan, align = nan;
      if (cfg.eval_cadence > 0 && it % cfg.eval_cadence == 0) {
        const EvalReport er = evaluate_policy(cfg.target_env, target.wm, target.ac,
                                              cfg.eval_episodes, r_eval.next());
        eval_mean = er.mean_return;
        eval_std = er.std_return;
        final_eval_mean = eval_mean;
        final_eval_std = eval_std;
        EnvSpec vs = cfg.target_env;
        vs.seed = r_eval.next();
        const ValueDiagnostic vd =
            value_diagnostic(vs, target.wm, target.ac, cfg.target_env.episode_limit, cfg.gamma);
        value_true = vd.true_value;
        value_est = vd.estimated_value;
        value_gap = vd.gap;
        if (source) {
          const SequenceBatch shared =
              offline.sample_sequences(cfg.batch_size, 1, r_eval);
          align = alignment_divergence(source->wm, target.wm, shared.observations, shared.B);
        }
      }

      metrics.row({static_cast<double>(it),
                   ts.wm.image_loss, ts.wm.reward_loss, ts.wm.discount_loss, ts.wm.kl_loss,
                   ts.wm.domain_kl_loss, ts.wm.total,
                   ts.critic.td_loss, ts.critic.regularizer, ts.critic.total,
                   ts.critic.fraction_clamped,
                   ts.actor_loss, ts.actor_entropy,
                   ts.wm_grad_norm, ts.actor_grad_norm, ts.critic_grad_norm,
                   source ? ss.wm.total : nan,
                   source ? ss.reward_nll_source : nan,
                   source ? ss.reward_nll_target : nan,
                   source ? ss.critic.td_loss : nan,
                   source ? ss.actor_loss : nan,
                   source ? static_cast<double>(ss.episodes_collected) : nan,
                   source ? static_cast<double>(source_buffer->total_steps()) : nan,
                   eval_mean, eval_std, value_true, value_est, value_gap, align});

      char name[32];
      std::snprintf(name, sizeof name, "iter_%03d.ckpt", it);
      checkpoint(name, {{"phase", "iteration"}, {"iteration", it}});
    }
  } catch (const NumericError& ex) {
    throw NumericError(std::string(ex.what()) + "; last good checkpoint: " + last_checkpoint);
  }

  nlohmann::json manifest = {
      {"schema", 1},
      {"config_hash", cfg.config_hash()},
      {"ablation", cfg.ablation},
      {"effective_beta2", cfg.effective_beta2()},
      {"effective_alpha", cfg.effective_alpha()},
      {"outer_iterations", cfg.outer_iterations},
      {"checkpoints", checkpoint_names},
      {"dataset_dir", cfg.dataset_dir},
      {"source_buffer_steps", source_buffer ? source_buffer->total_steps() : 0},
  };
  if (std::isfinite(final_eval_mean)) {
    manifest["final_eval"] = {{"mean_return", final_eval_mean}, {"std_return", final_eval_std}};
  }
  {
    std::ofstream f(run / "manifest.json");
    f << manifest.dump(2) << "\n";
  }
  return cfg.run_dir;
}

nlohmann::json generate_medium_replay(const CoWorldConfig& cfg, const EnvSpec& spec,
                                      const std::string& out_dir, int64_t budget_steps,
                                      Rng& rng) {
  cfg.validate();
  spec.validate();
  if (budget_steps < 0) throw ConfigError("budget_steps: negative");
  if (cfg.seq_len > spec.episode_limit) throw ConfigError("seq_len: longer than an episode");

  const EvalReport oracle = evaluate_policy_scripted(
      spec, [](const std::vector<uint8_t>&, const StepInfo& i) { return oracle_action(i); }, 10,
      rng.next());
  const double max_score = oracle.mean_return;
  const double threshold = max_score / 3.0;

  Env env(spec);
  // the dataset is the full training prefix, so nothing may ever be evicted
  ReplayBuffer buffer(BufferMode::online, std::numeric_limits<int64_t>::max());
  AgentBundle agent(cfg, spec, "gen", rng);

  double achieved = 0.0;
  bool reached = false;
  int64_t updates = 0;
  const auto eval_mean = [&] {
    return evaluate_policy(spec, agent.wm, agent.ac, 10, rng.next()).mean_return;
  };

  if (budget_steps > 0) {
    while (static_cast<int>(buffer.episode_count()) < cfg.prefill_episodes &&
           buffer.total_steps() < budget_steps)
      buffer.append(collect_episode(env, agent.wm, agent.ac, ActMode::explore, rng));

    while (true) {
      if (updates % 100 == 0) {
        achieved = eval_mean();
        if (achieved >= threshold) {
          reached = true;
          break;
        }
      }
      if (buffer.total_steps() >= budget_steps) {
        achieved = eval_mean();
        reached = achieved >= threshold;
        break;
      }
      try {
        const SequenceBatch batch = buffer.sample_sequences(cfg.batch_size, cfg.seq_len, rng);
        const WMStepOut w = wm_update(cfg, agent, batch, nullptr, 0.0, nullptr, rng);
        behavior_update(cfg, agent, nullptr, 0.0, w.start_h, w.start_z, rng);
      } catch (const NumericError& ex) {
        rethrow_with_step(ex, "dataset", static_cast<int>(updates));
      }
      ++updates;
      if (updates % cfg.pretrain_env_interval == 0 && buffer.total_steps() < budget_steps)
        buffer.append(collect_episode(env, agent.wm, agent.ac, ActMode::explore, rng));
    }
  }

  const nlohmann::json extra = {
      {"collection", "medium_replay"}, {"max_score", max_score},
      {"threshold", threshold},    {"achieved_score", achieved},
      {"reached_threshold", reached}, {"budget_capped", !reached},
      {"budget_steps", budget_steps}, {"updates", updates},
  };
  buffer.save_dir(out_dir, extra);
  return ReplayBuffer::read_manifest(out_dir);
}

}  // namespace coworld
