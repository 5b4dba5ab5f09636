#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coworld/config.hpp"
#include "coworld/nets.hpp"
#include "coworld/rng.hpp"
#include "coworld/tape.hpp"
#include "coworld/worldmodel.hpp"

namespace coworld {

// Actor plus value heads over world-model features. The actor emits a
// squashed Gaussian (mean and raw std per action dim); the slow critic is a
// hard copy of the critic refreshed on a fixed cadence and supplies the
// bootstrap values inside imagined rollouts.
class ActorCritic {
 public:
  ActorCritic(const CoWorldConfig& cfg, int feat_size, int action_dim,
              const std::string& role, Rng& rng);

  int action_dim() const { return action_dim_; }

  struct PolicyOut {
    TRef action;   // [B, A], tanh-squashed into (-1, 1)
    TRef entropy;  // [B, 1], entropy of the pre-squash Gaussian
  };
  // sample=true draws a = tanh(mu + sigma * eps); sample=false takes tanh(mu).
  PolicyOut policy(Tape& tp, TRef feat, Rng& rng, bool sample) const;

  TRef value(Tape& tp, TRef feat) const;       // [B, 1]
  TRef slow_value(Tape& tp, TRef feat) const;  // [B, 1]

  void update_slow();  // hard copy critic -> slow critic

  std::vector<Param*> actor_params();
  std::vector<Param*> critic_params();  // live critic only
  std::vector<Param*> params();         // everything, checkpoint order

 private:
  int action_dim_ = 0;
  MLP actor_;        // feat -> [mean, raw_std] (2A)
  MLP critic_;       // feat -> 1
  MLP slow_critic_;  // feat -> 1
};

// Trajectory imagined from posterior starts, all tensors on the tape.
// Indexing: states/feats/rewards/discounts/values have H+1 entries (index i
// is the i-th imagined state, 0 = the start); actions/entropies have H
// entries (the action taken at state i). rewards[i] and discounts[i] are the
// heads at state i — the reward of transition i -> i+1 and gamma times the
// continue probability after it, so the arrays feed lambda returns directly.
// values are the slow critic's estimates. The last reward/discount entries
// are unused by the losses but keep the arrays aligned with the states.
struct ImaginedRollout {
  int rows = 0;     // number of parallel rollouts
  int horizon = 0;  // H
  std::vector<RSSMState> states;  // H+1
  std::vector<TRef> feats;        // H+1, [rows, feat]
  std::vector<TRef> actions;      // H,   [rows, A]
  std::vector<TRef> entropies;    // H,   [rows, 1]
  std::vector<TRef> rewards;      // H+1, [rows, 1]
  std::vector<TRef> discounts;    // H+1, [rows, 1], already scaled by gamma
  std::vector<TRef> values;       // H+1, [rows, 1]
};

// Roll the policy forward H steps through the model's prior. World-model and
// slow-critic parameters are recorded as constants (gradients pass through
// their values into the actions but never reach them); actor parameters stay
// live. start_h/start_z are value snapshots of posterior states.
// sample_actions=false takes the policy mean (used by tests for determinism).
ImaginedRollout imagine_trajectories(Tape& tp, const WorldModel& wm, const ActorCritic& ac,
                                     const Tensor& start_h, const Tensor& start_z, int horizon,
                                     double gamma, Rng& rng, bool sample_actions = true,
                                     LatentMode latents = LatentMode::sample);

// Lambda returns over one rollout: V_t = r_t + d_t * ((1-lambda) * v_{t+1} +
// lambda * V_{t+1}) with V_H = values[H]. Discounts must already include
// gamma. rewards/discounts carry H entries, values H+1; the result has H.
std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& discounts,
                                   const std::vector<double>& values, double lambda);
std::vector<TRef> lambda_returns_tape(Tape& tp, const std::vector<TRef>& rewards,
                                      const std::vector<TRef>& discounts,
                                      const std::vector<TRef>& values, double lambda);

struct CriticLossReport {
  double td_loss = 0.0;
  double regularizer = 0.0;       // mean of the max terms, before alpha
  double total = 0.0;             // td_loss + alpha * regularizer
  double fraction_clamped = 0.0;  // states where zeta * v_target >= v_source
};

struct CriticLossOut {
  CriticLossReport report;
  TRef total;
  std::vector<TRef> returns;  // H live lambda returns, reused by the actor loss
};

// Regression of the critic onto stopped lambda returns plus the max-min
// value regularizer: mean over imagined states t < H of
//   0.5 * (v(z_t) - sg(V_t))^2 + alpha * max(zeta * v(z_t), sg(v_src(z_t))).
// Features are stopped before the value heads, so the sweep touches only
// critic parameters; the source critic's output is stopped as well (its
// parameters register as leaves but provably receive zero gradient). alpha >
// 0 without a source critic is a configuration error; with alpha = 0 the
// regularizer term still appears in the report when a source is supplied.
CriticLossOut critic_loss(Tape& tp, const ActorCritic& target, const ActorCritic* source,
                          const ImaginedRollout& ro, double alpha, double zeta, double lambda);

struct ActorLossOut {
  double value = 0.0;  // scalar loss value
  double mean_entropy = 0.0;
  TRef total;
};

// Reinforce-free actor objective: minimize -mean(w_t * V_t) - entropy_scale *
// mean(w_t * entropy_t) over t < H, where w_t is the stopped cumulative
// product of the rollout discounts (w_0 = 1). Gradients reach the actor
// through the imagined dynamics.
ActorLossOut actor_loss(Tape& tp, const ImaginedRollout& ro, const std::vector<TRef>& returns,
                        double entropy_scale);

enum class ActMode { explore, eval };

// Recurrent filtering state carried between environment steps.
struct PolicyCarry {
  Tensor h, z;                       // last posterior, [1, ...]
  std::vector<double> prev_action;   // action taken at the previous step
  bool first = true;                 // next observation starts an episode
};

// One environment-facing policy step: filter the observation through the
// model posterior and query the actor. explore samples latents and actions;
// eval takes argmax latents and the policy mean (deterministic given carry).
// The carry is advanced in place; reset by assigning a fresh PolicyCarry.
std::vector<double> act(const WorldModel& wm, const ActorCritic& ac, PolicyCarry& carry,
                        const std::vector<uint8_t>& obs, ActMode mode, Rng& rng);

}  // namespace coworld
