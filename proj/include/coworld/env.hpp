#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace coworld {

// A 2-D point-mass "runner" on the unit arena, observed only through rendered
// frames (velocity is invisible — the task is a POMDP). Domain shifts:
//   slope               drift along x (downhill/uphill analogs)
//   masked_action_dims  actuators forced to zero (missing-limb analog)
//   tint                background color offset (appearance gap)
struct EnvSpec {
  std::string family = "runner";
  int image_size = 32;
  int channels = 3;
  double slope = 0.0;
  std::vector<int> masked_action_dims;
  std::array<int, 3> tint = {0, 0, 0};
  int episode_limit = 200;
  int action_dim = 2;
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError naming the offending field
  int obs_size() const { return image_size * image_size * channels; }
  bool operator==(const EnvSpec&) const = default;
};

struct StepInfo {
  double px = 0, py = 0;  // agent position
  double vx = 0, vy = 0;  // agent velocity (hidden from pixels)
  double gx = 0, gy = 0;  // goal position
  double dist = 0;
  int step_index = 0;
};

struct StepResult {
  std::vector<uint8_t> observation;
  double reward = 0;
  double discount_flag = 1;  // 0 exactly when the episode just ended
  StepInfo info;
};

class Env {
 public:
  // Dynamics and reward constants (fixed; documented here and in the README):
  //   v <- clip(v + kAccel*masked(a) - (slope,0)*kSlopeAccel - kFriction*v, +-kVMax)
  //   p <- clip(p + v, [0,1]^2)
  //   reward = max(0, 1 - |p-goal| / kRewardRange)
  // kRewardRange is deliberately smaller than the arena diameter so that a
  // wandering policy scores far below a goal-seeking one.
  static constexpr double kAccel = 0.02;
  static constexpr double kSlopeAccel = 0.05;
  static constexpr double kFriction = 0.1;
  static constexpr double kVMax = 0.08;
  static constexpr double kRewardRange = 0.5;
  static constexpr double kAgentRadius = 0.08;  // unit coords; scale-free rendering
  static constexpr double kGoalRadius = 0.11;

  explicit Env(EnvSpec spec);

  // Fresh episode; the episode seed is derived from (spec.seed, episode index).
  std::vector<uint8_t> reset();
  // Replay path: re-create a specific stored episode exactly.
  std::vector<uint8_t> reset_with_seed(uint64_t episode_seed);

  StepResult step(const std::vector<double>& action);

  const EnvSpec& spec() const { return spec_; }
  uint64_t last_episode_seed() const { return episode_seed_; }
  bool awaiting_reset() const { return need_reset_; }
  int64_t total_steps() const { return total_steps_; }  // instrumentation
  StepInfo state() const;  // privileged state (oracle policies, diagnostics)

  // process-wide step count across every Env instance; lets the trainer
  // assert that a phase stepped no environment other than the ones it owns
  static int64_t global_total_steps() { return global_steps_; }

 private:
  void render(std::vector<uint8_t>& out) const;

  EnvSpec spec_;
  double px_ = 0, py_ = 0, vx_ = 0, vy_ = 0, gx_ = 0, gy_ = 0;
  int step_count_ = 0;
  bool need_reset_ = true;
  uint64_t episode_index_ = 0;
  uint64_t episode_seed_ = 0;
  int64_t total_steps_ = 0;

  static int64_t global_steps_;
};

// Bang-bang controller straight toward the goal; near-optimal under the
// runner kinematics. Used to estimate the best achievable score.
std::vector<double> oracle_action(const StepInfo& info);

}  // namespace coworld
