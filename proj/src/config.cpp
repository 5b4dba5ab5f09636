#include "coworld/config.hpp"

#include <set>

#include "coworld/errors.hpp"

namespace coworld {

namespace {

void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

const std::set<std::string> kEnvKeys = {"family",        "image_size",  "channels",
                                        "slope",         "masked_action_dims",
                                        "tint",          "episode_limit",
                                        "action_dim",    "seed"};

const std::set<std::string> kConfigKeys = {
    "schema",         "deter",           "groups",
    "classes",        "hidden",          "beta1",
    "beta2",          "k",               "alpha",
    "zeta",           "gamma",           "lambda",
    "free_bits",      "kl_balance",      "entropy_scale",
    "horizon",        "k1",              "k2",
    "batch_size",     "seq_len",         "pretrain_steps",
    "outer_iterations", "slow_critic_interval", "source_env_interval",
    "pretrain_env_interval", "prefill_episodes", "imagination_starts",
    "eval_episodes",  "eval_cadence",    "wm_lr",
    "actor_lr",       "critic_lr",       "grad_clip",
    "buffer_capacity", "seed",           "ablation",
    "dataset_dir",    "run_dir",         "source_env",
    "target_env"};

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void to_json(nlohmann::json& j, const EnvSpec& s) {
  j = nlohmann::json{{"family", s.family},
                     {"image_size", s.image_size},
                     {"channels", s.channels},
                     {"slope", s.slope},
                     {"masked_action_dims", s.masked_action_dims},
                     {"tint", s.tint},
                     {"episode_limit", s.episode_limit},
                     {"action_dim", s.action_dim},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, EnvSpec& s) {
  get_if(j, "family", s.family);
  get_if(j, "image_size", s.image_size);
  get_if(j, "channels", s.channels);
  get_if(j, "slope", s.slope);
  get_if(j, "masked_action_dims", s.masked_action_dims);
  get_if(j, "tint", s.tint);
  get_if(j, "episode_limit", s.episode_limit);
  get_if(j, "action_dim", s.action_dim);
  get_if(j, "seed", s.seed);
}

EnvSpec env_spec_from_json_strict(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("env spec: expected a JSON object");
  reject_unknown_keys(j, kEnvKeys, "env spec");
  EnvSpec s = j.get<EnvSpec>();
  s.validate();
  return s;
}

void CoWorldConfig::validate() const {
  if (schema != 1) throw ConfigError("schema: expected 1");
  if (deter < 1) throw ConfigError("deter: must be >= 1");
  if (groups < 1) throw ConfigError("groups: must be >= 1");
  if (classes < 2) throw ConfigError("classes: must be >= 2");
  if (hidden < 1) throw ConfigError("hidden: must be >= 1");
  if (beta1 <= 0) throw ConfigError("beta1: must be > 0");
  if (beta2 < 0) throw ConfigError("beta2: must be >= 0");
  if (k < 0 || k > 1) throw ConfigError("k: must lie in [0,1]");
  if (alpha < 0) throw ConfigError("alpha: must be >= 0");
  if (zeta <= 0) throw ConfigError("zeta: must be > 0");
  if (gamma <= 0 || gamma > 1) throw ConfigError("gamma: must lie in (0,1]");
  if (lambda < 0 || lambda > 1) throw ConfigError("lambda: must lie in [0,1]");
  if (free_bits < 0) throw ConfigError("free_bits: must be >= 0");
  if (kl_balance < 0 || kl_balance > 1) throw ConfigError("kl_balance: must lie in [0,1]");
  if (entropy_scale < 0) throw ConfigError("entropy_scale: must be >= 0");
  if (horizon < 1) throw ConfigError("horizon: must be >= 1");
  if (k1 < 1) throw ConfigError("k1: must be >= 1");
  if (k2 < 1) throw ConfigError("k2: must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (seq_len < 2) throw ConfigError("seq_len: must be >= 2");
  if (pretrain_steps < 0) throw ConfigError("pretrain_steps: must be >= 0");
  if (outer_iterations < 0) throw ConfigError("outer_iterations: must be >= 0");
  if (slow_critic_interval < 1) throw ConfigError("slow_critic_interval: must be >= 1");
  if (source_env_interval < 1) throw ConfigError("source_env_interval: must be >= 1");
  if (pretrain_env_interval < 1) throw ConfigError("pretrain_env_interval: must be >= 1");
  if (prefill_episodes < 1) throw ConfigError("prefill_episodes: must be >= 1");
  if (imagination_starts < 0) throw ConfigError("imagination_starts: must be >= 0");
  if (eval_episodes < 1) throw ConfigError("eval_episodes: must be >= 1");
  if (eval_cadence < 1) throw ConfigError("eval_cadence: must be >= 1");
  if (wm_lr <= 0) throw ConfigError("wm_lr: must be > 0");
  if (actor_lr <= 0) throw ConfigError("actor_lr: must be > 0");
  if (critic_lr <= 0) throw ConfigError("critic_lr: must be > 0");
  if (grad_clip <= 0) throw ConfigError("grad_clip: must be > 0");
  if (buffer_capacity < 1) throw ConfigError("buffer_capacity: must be >= 1");
  if (ablation != "none" && ablation != "no_align" && ablation != "no_value_reg" &&
      ablation != "offline_baseline")
    throw ConfigError("ablation: must be one of none|no_align|no_value_reg|offline_baseline");
  source_env.validate();
  target_env.validate();
  if (source_env.image_size != target_env.image_size)
    throw ConfigError("target_env.image_size: must match source_env (shared encoder shape)");
  if (source_env.action_dim != target_env.action_dim)
    throw ConfigError("target_env.action_dim: must match source_env");
}

nlohmann::json CoWorldConfig::to_json() const {
  return nlohmann::json{{"schema", schema},
                        {"deter", deter},
                        {"groups", groups},
                        {"classes", classes},
                        {"hidden", hidden},
                        {"beta1", beta1},
                        {"beta2", beta2},
                        {"k", k},
                        {"alpha", alpha},
                        {"zeta", zeta},
                        {"gamma", gamma},
                        {"lambda", lambda},
                        {"free_bits", free_bits},
                        {"kl_balance", kl_balance},
                        {"entropy_scale", entropy_scale},
                        {"horizon", horizon},
                        {"k1", k1},
                        {"k2", k2},
                        {"batch_size", batch_size},
                        {"seq_len", seq_len},
                        {"pretrain_steps", pretrain_steps},
                        {"outer_iterations", outer_iterations},
                        {"slow_critic_interval", slow_critic_interval},
                        {"source_env_interval", source_env_interval},
                        {"pretrain_env_interval", pretrain_env_interval},
                        {"prefill_episodes", prefill_episodes},
                        {"imagination_starts", imagination_starts},
                        {"eval_episodes", eval_episodes},
                        {"eval_cadence", eval_cadence},
                        {"wm_lr", wm_lr},
                        {"actor_lr", actor_lr},
                        {"critic_lr", critic_lr},
                        {"grad_clip", grad_clip},
                        {"buffer_capacity", buffer_capacity},
                        {"seed", seed},
                        {"ablation", ablation},
                        {"dataset_dir", dataset_dir},
                        {"run_dir", run_dir},
                        {"source_env", source_env},
                        {"target_env", target_env}};
}

CoWorldConfig CoWorldConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  reject_unknown_keys(j, kConfigKeys, "config");
  CoWorldConfig c;
  try {
    get_if(j, "schema", c.schema);
    get_if(j, "deter", c.deter);
    get_if(j, "groups", c.groups);
    get_if(j, "classes", c.classes);
    get_if(j, "hidden", c.hidden);
    get_if(j, "beta1", c.beta1);
    get_if(j, "beta2", c.beta2);
    get_if(j, "k", c.k);
    get_if(j, "alpha", c.alpha);
    get_if(j, "zeta", c.zeta);
    get_if(j, "gamma", c.gamma);
    get_if(j, "lambda", c.lambda);
    get_if(j, "free_bits", c.free_bits);
    get_if(j, "kl_balance", c.kl_balance);
    get_if(j, "entropy_scale", c.entropy_scale);
    get_if(j, "horizon", c.horizon);
    get_if(j, "k1", c.k1);
    get_if(j, "k2", c.k2);
    get_if(j, "batch_size", c.batch_size);
    get_if(j, "seq_len", c.seq_len);
    get_if(j, "pretrain_steps", c.pretrain_steps);
    get_if(j, "outer_iterations", c.outer_iterations);
    get_if(j, "slow_critic_interval", c.slow_critic_interval);
    get_if(j, "source_env_interval", c.source_env_interval);
    get_if(j, "pretrain_env_interval", c.pretrain_env_interval);
    get_if(j, "prefill_episodes", c.prefill_episodes);
    get_if(j, "imagination_starts", c.imagination_starts);
    get_if(j, "eval_episodes", c.eval_episodes);
    get_if(j, "eval_cadence", c.eval_cadence);
    get_if(j, "wm_lr", c.wm_lr);
    get_if(j, "actor_lr", c.actor_lr);
    get_if(j, "critic_lr", c.critic_lr);
    get_if(j, "grad_clip", c.grad_clip);
    get_if(j, "buffer_capacity", c.buffer_capacity);
    get_if(j, "seed", c.seed);
    get_if(j, "ablation", c.ablation);
    get_if(j, "dataset_dir", c.dataset_dir);
    get_if(j, "run_dir", c.run_dir);
    if (j.contains("source_env")) c.source_env = env_spec_from_json_strict(j.at("source_env"));
    if (j.contains("target_env")) c.target_env = env_spec_from_json_strict(j.at("target_env"));
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  return c;
}

uint64_t CoWorldConfig::config_hash() const {
  const std::string dump = to_json().dump();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace coworld
