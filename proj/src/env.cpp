#include "coworld/env.hpp"

#include <algorithm>
#include <cmath>

#include "coworld/errors.hpp"
#include "coworld/rng.hpp"

namespace coworld {

namespace {

constexpr uint8_t kBgBase = 40;
constexpr uint8_t kAgentColor[3] = {220, 60, 50};
constexpr uint8_t kGoalColor[3] = {60, 200, 80};

inline double clip(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

inline uint8_t clamp_u8(int v) { return static_cast<uint8_t>(std::min(255, std::max(0, v))); }

}  // namespace

int64_t Env::global_steps_ = 0;

void EnvSpec::validate() const {
  if (family != "runner") throw ConfigError("env.family: unknown family '" + family + "'");
  if (image_size < 8) throw ConfigError("env.image_size: must be >= 8");
  if (channels != 3) throw ConfigError("env.channels: must be 3");
  if (std::abs(slope) > 0.5) throw ConfigError("env.slope: |slope| must be <= 0.5");
  if (episode_limit < 1) throw ConfigError("env.episode_limit: must be >= 1");
  if (action_dim != 2) throw ConfigError("env.action_dim: runner family requires 2");
  for (int d : masked_action_dims)
    if (d < 0 || d >= action_dim)
      throw ConfigError("env.masked_action_dims: index " + std::to_string(d) +
                        " outside [0," + std::to_string(action_dim - 1) + "]");
}

Env::Env(EnvSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

std::vector<uint8_t> Env::reset() {
  const uint64_t ep_seed = Rng(spec_.seed).fork("episode", episode_index_).seed();
  ++episode_index_;
  return reset_with_seed(ep_seed);
}

std::vector<uint8_t> Env::reset_with_seed(uint64_t episode_seed) {
  episode_seed_ = episode_seed;
  Rng rng(episode_seed);
  px_ = rng.uniform(0.15, 0.85);
  py_ = rng.uniform(0.15, 0.85);
  // keep the goal a real trip away so dense reward still demands motion
  do {
    gx_ = rng.uniform(0.15, 0.85);
    gy_ = rng.uniform(0.15, 0.85);
  } while (std::hypot(px_ - gx_, py_ - gy_) < 0.25);
  vx_ = vy_ = 0.0;
  step_count_ = 0;
  need_reset_ = false;
  std::vector<uint8_t> frame;
  render(frame);
  return frame;
}

StepResult Env::step(const std::vector<double>& action) {
  if (need_reset_) throw UsageError("env.step: episode is over; call reset first");
  if (static_cast<int>(action.size()) != spec_.action_dim)
    throw UsageError("env.step: action has " + std::to_string(action.size()) +
                     " dims, spec requires " + std::to_string(spec_.action_dim));

  double a[2] = {clip(action[0], -1.0, 1.0), clip(action[1], -1.0, 1.0)};
  for (int d : spec_.masked_action_dims) a[d] = 0.0;

  vx_ = clip(vx_ + kAccel * a[0] - spec_.slope * kSlopeAccel - kFriction * vx_, -kVMax, kVMax);
  vy_ = clip(vy_ + kAccel * a[1] - kFriction * vy_, -kVMax, kVMax);
  px_ = clip(px_ + vx_, 0.0, 1.0);
  py_ = clip(py_ + vy_, 0.0, 1.0);

  const double dist = std::hypot(px_ - gx_, py_ - gy_);
  const double reward = std::max(0.0, 1.0 - dist / kRewardRange);

  ++step_count_;
  ++total_steps_;
  ++global_steps_;
  const bool done = step_count_ >= spec_.episode_limit;
  need_reset_ = done;

  StepResult out;
  out.reward = reward;
  out.discount_flag = done ? 0.0 : 1.0;
  out.info = StepInfo{px_, py_, vx_, vy_, gx_, gy_, dist, step_count_};
  render(out.observation);
  return out;
}

StepInfo Env::state() const {
  return StepInfo{px_, py_, vx_, vy_, gx_, gy_, std::hypot(px_ - gx_, py_ - gy_), step_count_};
}

// Pure threshold rendering: background (+tint), goal disc, agent disc on top.
// No anti-aliasing — identical hidden state yields identical bytes.
void Env::render(std::vector<uint8_t>& out) const {
  const int s = spec_.image_size;
  out.assign(static_cast<size_t>(s) * s * 3, 0);
  uint8_t bg[3];
  for (int c = 0; c < 3; ++c) bg[c] = clamp_u8(kBgBase + spec_.tint[c]);
  const double ra2 = kAgentRadius * kAgentRadius;
  const double rg2 = kGoalRadius * kGoalRadius;
  for (int i = 0; i < s; ++i) {
    const double yc = (i + 0.5) / s;
    for (int j = 0; j < s; ++j) {
      const double xc = (j + 0.5) / s;
      const double da2 = (xc - px_) * (xc - px_) + (yc - py_) * (yc - py_);
      const double dg2 = (xc - gx_) * (xc - gx_) + (yc - gy_) * (yc - gy_);
      const uint8_t* color = da2 <= ra2 ? kAgentColor : (dg2 <= rg2 ? kGoalColor : bg);
      uint8_t* px = out.data() + (static_cast<size_t>(i) * s + j) * 3;
      px[0] = color[0];
      px[1] = color[1];
      px[2] = color[2];
    }
  }
}

std::vector<double> oracle_action(const StepInfo& info) {
  return {info.gx > info.px ? 1.0 : -1.0, info.gy > info.py ? 1.0 : -1.0};
}

}  // namespace coworld
