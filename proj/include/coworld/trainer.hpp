#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "coworld/behavior.hpp"
#include "coworld/config.hpp"
#include "coworld/datastore.hpp"
#include "coworld/env.hpp"
#include "coworld/worldmodel.hpp"

namespace coworld {

// One domain's learner: world model, behavior nets, and their optimizers.
// The role string prefixes every parameter name, so a source and a target
// bundle can live in the same checkpoint file.
struct AgentBundle {
  std::string role;  // "source" | "target"
  WorldModel wm;
  ActorCritic ac;
  Adam wm_opt, actor_opt, critic_opt;
  int64_t behavior_updates = 0;  // drives the slow-critic refresh cadence

  AgentBundle(const CoWorldConfig& cfg, const EnvSpec& env, const std::string& role, Rng& rng);

  std::vector<Param*> params();  // wm then behavior, checkpoint order
};

// Self-describing checkpoints: every param of the given bundles plus a meta
// block that embeds the full config, so evaluation needs only the file.
void save_checkpoint(const std::string& path, AgentBundle& target, AgentBundle* source,
                     const nlohmann::json& extra_meta);
nlohmann::json load_checkpoint(const std::string& path, AgentBundle& target, AgentBundle* source);
nlohmann::json read_checkpoint_meta(const std::string& path);  // meta block only

enum class BatchOrigin { source, target };

// Reward blend for cross-domain training: source-origin batches pass through
// untouched; target-origin batches are filtered by the *source* model and
// come back as k * r_hat + (1 - k) * r, one value per step, (b, l)-major
// like the batch itself.
std::vector<double> relabel_source_rewards(const SequenceBatch& batch, BatchOrigin origin,
                                           const WorldModel& source_wm, double k, Rng& rng,
                                           LatentMode latents = LatentMode::sample);

// Target-side half of the two-domain reward fit: the source model filters a
// target batch live and its reward head is regressed toward the blended
// labels above (labels carry no gradient; k=1 degenerates to a frozen
// self-target, k=0 to plain target-reward regression).
TRef relabeled_reward_nll(Tape& tp, const WorldModel& source_wm, const SequenceBatch& target_batch,
                          double k, Rng& rng, LatentMode latents = LatentMode::sample);

struct RewardMLEReport {
  double source_nll = 0.0;
  double target_nll = 0.0;  // 0 when no target batch was given
  double total = 0.0;
};
struct RewardMLEOut {
  RewardMLEReport report;
  TRef total;
};
// Reward likelihood over both domains: the source model's reward NLL on its
// own batch plus the relabeled NLL on a target batch (skipped when null).
RewardMLEOut reward_mle_loss(Tape& tp, const WorldModel& source_wm,
                             const SequenceBatch& source_batch, const SequenceBatch* target_batch,
                             double k, Rng& rng, LatentMode latents = LatentMode::sample);

// Means over one iteration's updates, plus whatever the phase interacted
// with. Fields that a phase does not produce stay at their defaults.
struct IterationStats {
  int updates = 0;
  WMLossReport wm;            // per-field means
  CriticLossReport critic;    // per-field means
  double actor_loss = 0.0;
  double actor_entropy = 0.0;
  double wm_grad_norm = 0.0;  // pre-clip means
  double actor_grad_norm = 0.0;
  double critic_grad_norm = 0.0;
  double reward_nll_source = 0.0;  // source iterations only
  double reward_nll_target = 0.0;
  int episodes_collected = 0;  // env-interacting phases only
};

// Online pretraining of the source agent in its own env: prefill the buffer
// with explore-mode episodes, then alternate model/behavior updates with a
// fresh episode every pretrain_env_interval updates. No alignment, no value
// regularizer, no target data.
IterationStats pretrain_source(const CoWorldConfig& cfg, AgentBundle& source, Env& env,
                               ReplayBuffer& buffer, Rng& rng);

// K1 offline updates of the target agent: model loss with the domain KL
// against the frozen source encoder, then imagination, critic regression
// with the max-min regularizer against the source critic, and the actor
// update. The offline buffer is read-only and no env is ever stepped; the
// source bundle (when given) is provably untouched.
IterationStats train_target_iteration(const CoWorldConfig& cfg, AgentBundle& target,
                                      AgentBundle* source, const ReplayBuffer& offline, Rng& rng);

// K2 online updates of the source agent: model loss on its own buffer plus
// the relabeled reward fit on target batches, behavior learning in
// imagination, and a fresh source episode every source_env_interval
// updates. The target bundle is read-only (its buffer supplies frames).
IterationStats train_source_iteration(const CoWorldConfig& cfg, AgentBundle& source,
                                      AgentBundle& target, Env& source_env,
                                      ReplayBuffer& source_buffer, const ReplayBuffer& offline,
                                      Rng& rng);

// The full pipeline: preflight checks, source pretraining, then alternating
// target/source iterations with periodic evaluation, checkpoints, and a
// fixed-column metrics.csv in the run directory. Returns the run directory.
// Deterministic: identical config (seed included) reproduces every byte of
// metrics.csv.
std::string coworld_train(const CoWorldConfig& cfg);

// Single-domain online training in `spec` that persists its entire replay
// prefix as an offline dataset: stops the first time a 10-episode eval mean
// reaches 1/3 of a scripted oracle's mean score, or when budget_steps env
// steps have been collected (flagged "budget_capped" in the manifest).
// Returns the manifest written alongside the dataset.
nlohmann::json generate_medium_replay(const CoWorldConfig& cfg, const EnvSpec& spec,
                                      const std::string& out_dir, int64_t budget_steps, Rng& rng);

}  // namespace coworld
