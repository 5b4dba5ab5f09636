#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "coworld/behavior.hpp"
#include "coworld/datastore.hpp"
#include "coworld/env.hpp"
#include "coworld/worldmodel.hpp"

#include <json.hpp>

namespace coworld {

// Scripted controller: sees the frame plus the privileged state, returns an
// action in [-1, 1]^A. Used by dataset generators and by oracle tests.
using ScriptedPolicy =
    std::function<std::vector<double>(const std::vector<uint8_t>& obs, const StepInfo& info)>;

// Runs one full episode in `env` (reset happens inside) under the learned
// policy and packs it into the replay format. Actions are rounded through
// f32 before the env sees them, so a stored episode replays bit-exactly.
Episode collect_episode(Env& env, const WorldModel& wm, const ActorCritic& ac, ActMode mode,
                        Rng& rng);
Episode collect_episode_scripted(Env& env, const ScriptedPolicy& policy);

struct EvalReport {
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;  // population std over per-episode returns
  std::vector<double> per_episode_returns;
};

// mean / population-std over a set of per-episode returns
EvalReport summarize_returns(std::vector<double> returns);

// Acts greedily (eval mode) for `episodes` fresh episodes on an env built
// from `spec` with its seed replaced by `seed`; per-episode return is the
// undiscounted reward sum. Never mutates the model or the policy.
EvalReport evaluate_policy(const EnvSpec& spec, const WorldModel& wm, const ActorCritic& ac,
                           int episodes, uint64_t seed);
EvalReport evaluate_policy_scripted(const EnvSpec& spec, const ScriptedPolicy& policy,
                                    int episodes, uint64_t seed);

struct ValueDiagnostic {
  int horizon = 0;
  double true_value = 0.0;       // sum_t gamma^t r_t along the executed trajectory
  double estimated_value = 0.0;  // sum_t v(feat_t) over the same visited states
  double gap = 0.0;              // estimated - true
  // the same pair divided by max(|true|, |estimated|), so the larger one
  // lands on +-1; both zero when the pair is identically zero
  double true_scaled = 0.0;
  double estimated_scaled = 0.0;
};

// Rolls the greedy policy for exactly `horizon` steps (the episode limit is
// overridden so termination cannot cut the roll short; spec.seed drives the
// start) and compares the discounted return actually collected with the
// critic's summed per-state estimates along the same trajectory.
ValueDiagnostic value_diagnostic(const EnvSpec& spec, const WorldModel& wm, const ActorCritic& ac,
                                 int horizon, double gamma);

// Mean over rows *and* groups of KL[softmax(source logits) || softmax(target
// logits)] on a shared batch of frames: how far apart the two encoders'
// categorical beliefs sit. `observations` holds `rows` stacked raw frames.
double alignment_divergence(const WorldModel& source, const WorldModel& target,
                            const std::vector<uint8_t>& observations, int rows);

struct OpenLoopReport {
  int context = 0, horizon = 0;
  std::vector<std::vector<double>> predicted;  // decoded frames, normalized pixel units
  std::vector<double> mse;                     // per predicted step, mean over pixels
  double mean_mse = 0.0;                       // 0 when horizon == 0
};

// Filters `context` frames of the episode through the posterior, then rolls
// the prior with the episode's recorded actions for `horizon` more steps;
// decoded frames are scored against the recorded ones by pixel MSE (both in
// normalized units). Deterministic: mode latents throughout.
OpenLoopReport open_loop_prediction(const WorldModel& wm, const Episode& ep, int context,
                                    int horizon);

void to_json(nlohmann::json& j, const EvalReport& r);
void to_json(nlohmann::json& j, const ValueDiagnostic& d);
void to_json(nlohmann::json& j, const OpenLoopReport& r);

}  // namespace coworld
