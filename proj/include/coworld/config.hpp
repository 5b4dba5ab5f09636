#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "coworld/env.hpp"

namespace coworld {

void to_json(nlohmann::json& j, const EnvSpec& s);
void from_json(const nlohmann::json& j, EnvSpec& s);
EnvSpec env_spec_from_json_strict(const nlohmann::json& j);  // rejects unknown keys

// Every knob of the pipeline. Defaults are the documented desk-scale values;
// JSON round-trips through to_json/from_json with unknown keys rejected.
struct CoWorldConfig {
  int schema = 1;

  // architecture
  int deter = 128;    // recurrent state width
  int groups = 8;     // latent groups
  int classes = 8;    // classes per group
  int hidden = 128;   // MLP hidden width

  // loss scales
  double beta1 = 1.0;       // posterior/prior KL scale
  double beta2 = 1.5;       // cross-domain encoder KL scale
  double k = 0.2;           // source-reward blend for relabeling
  double alpha = 0.2;       // target critic max-min regularizer scale
  double zeta = 1.0;        // scale unifier inside the max
  double gamma = 0.995;     // discount
  double lambda = 0.95;     // lambda-return mixing
  double free_bits = 1.0;   // KL floor per state, nats
  double kl_balance = 0.8;  // prior-side weight of the balanced KL
  double entropy_scale = 1e-4;

  // schedule
  int horizon = 15;  // imagination length
  int k1 = 500;      // target-agent updates per outer iteration
  int k2 = 500;      // source-agent updates per outer iteration
  int batch_size = 16;
  int seq_len = 16;
  int pretrain_steps = 500;
  int outer_iterations = 5;
  int slow_critic_interval = 100;
  int source_env_interval = 50;    // one source episode per N source updates
  int pretrain_env_interval = 25;  // one source episode per N pretrain updates
  int prefill_episodes = 5;
  int imagination_starts = 0;  // 0 = every posterior state of the batch
  int eval_episodes = 10;
  int eval_cadence = 1;  // evaluate every N outer iterations

  // optimizers
  double wm_lr = 2e-4;
  double actor_lr = 4e-5;
  double critic_lr = 1e-4;
  double grad_clip = 100.0;

  int64_t buffer_capacity = 200000;

  uint64_t seed = 0;
  std::string ablation = "none";  // none | no_align | no_value_reg | offline_baseline
  std::string dataset_dir;
  std::string run_dir;

  EnvSpec source_env;
  EnvSpec target_env;

  // ablation-resolved scales
  double effective_beta2() const {
    return (ablation == "no_align" || ablation == "offline_baseline") ? 0.0 : beta2;
  }
  double effective_alpha() const {
    return (ablation == "no_value_reg" || ablation == "offline_baseline") ? 0.0 : alpha;
  }
  // the offline baseline is a single-domain agent: no source model at all
  bool source_enabled() const { return ablation != "offline_baseline"; }

  int feat_size() const { return deter + groups * classes; }

  void validate() const;  // throws ConfigError naming the field
  nlohmann::json to_json() const;
  static CoWorldConfig from_json(const nlohmann::json& j);
  uint64_t config_hash() const;  // FNV over the canonical JSON dump
};

}  // namespace coworld
