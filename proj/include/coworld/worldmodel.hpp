#pragma once

#include <string>
#include <vector>

#include "coworld/config.hpp"
#include "coworld/datastore.hpp"
#include "coworld/nets.hpp"

namespace coworld {

// Recurrent latent state, batched over rows: deterministic h plus a grouped
// categorical z (one-hot per group, flattened to G*K columns).
struct RSSMState {
  TRef h;         // [B, D]
  TRef z;         // [B, G*K]
  TRef z_logits;  // [B, G*K]
};

// How z is produced from its categorical logits. `sample` is the training
// path (straight-through one-hot); `mode` the deterministic argmax used for
// evaluation; `relaxed` substitutes the probabilities themselves — the smooth
// surrogate whose exact gradient the straight-through backward computes,
// which is what finite-difference validation must run against.
enum class LatentMode { sample, mode, relaxed };

struct WMLossReport {
  double image_loss = 0.0;
  double reward_loss = 0.0;
  double discount_loss = 0.0;
  double kl_loss = 0.0;
  double domain_kl_loss = 0.0;
  double total = 0.0;  // ((image + reward) + discount) + b1*kl + b2*domain_kl, folded left
};

// Recurrent state-space model: GRU core, grouped categorical latents,
// Gaussian image/reward heads (unit variance) and a Bernoulli continue head.
class WorldModel {
 public:
  // role ("source" / "target") prefixes parameter names, so checkpoints and
  // fingerprints of the two models never collide.
  WorldModel(const CoWorldConfig& cfg, const EnvSpec& env, std::string role, Rng& rng);

  const std::string& role() const { return role_; }
  int deter() const { return deter_; }
  int groups() const { return groups_; }
  int classes() const { return classes_; }
  int obs_dim() const { return obs_dim_; }
  int action_dim() const { return action_dim_; }
  int feat_size() const { return deter_ + groups_ * classes_; }

  // uint8 frames -> tape constant scaled to [-0.5, 0.5]
  TRef obs_constant(Tape& tp, const uint8_t* frames, int rows) const;

  TRef encode(Tape& tp, TRef obs_norm) const;  // [B, G*K] categorical logits
  RSSMState initial_state(Tape& tp, int batch) const;

  struct StepOut {
    RSSMState post;
    TRef prior_logits;
  };
  // One observation step: h_t from (prev, prev_action), prior from h_t,
  // posterior from (h_t, encoder(obs)). Rows flagged in is_first have their
  // previous state replaced by the learned initial state and a zero action;
  // an empty mask applies no resets.
  StepOut observe_step(Tape& tp, const RSSMState& prev, TRef prev_action, TRef obs_norm,
                       const std::vector<uint8_t>& is_first, Rng& rng,
                       LatentMode latents = LatentMode::sample) const;
  // Core of observe_step with the encoding precomputed; the sequence loss
  // encodes a whole batch in one pass and feeds per-step slices through here.
  StepOut observe_step_enc(Tape& tp, TRef h_prev, TRef z_prev, TRef action, TRef enc_logits,
                           Rng& rng, LatentMode latents) const;
  // Same recurrence, but z drawn from the prior; no observation involved.
  RSSMState imagine_step(Tape& tp, const RSSMState& state, TRef action, Rng& rng,
                         LatentMode latents = LatentMode::sample) const;

  TRef feat(Tape& tp, const RSSMState& s) const { return tp.concat_cols(s.h, s.z); }
  TRef decode_obs(Tape& tp, TRef feat) const;              // pixel means, [-0.5,0.5] units
  TRef predict_reward(Tape& tp, TRef feat) const;          // [B,1]
  TRef predict_discount_logit(Tape& tp, TRef feat) const;  // [B,1]; sigmoid -> P(continue)

  std::vector<Param*> params();
  std::vector<Param*> encoder_params();

 private:
  std::string role_;
  int deter_, groups_, classes_, hidden_, obs_dim_, action_dim_;
  MLP encoder_;    // obs -> G*K logits
  Linear img_in_;  // [z, a] -> hidden (ELU applied by the step)
  GRUCell gru_;
  MLP prior_;      // h -> G*K
  MLP posterior_;  // [h, enc(o)] -> G*K
  MLP decoder_;    // feat -> obs means
  MLP reward_;     // feat -> 1
  MLP discount_;   // feat -> 1 (logit)
  Param h0_;       // learned initial deterministic state [1, D]
};

// Everything the sequence loss leaves on the tape that later stages reuse:
// stacked tensors are time-major ([L*B] rows, row l*B + b).
struct WMSequenceOut {
  int B = 0, L = 0;
  TRef h_all;       // [L*B, D] posterior deterministic states
  TRef z_all;       // [L*B, G*K] posterior samples
  TRef feats;       // [L*B, D + G*K]
  TRef post_logits; // [L*B, G*K]
  TRef prior_logits;
};

struct WMLossOut {
  WMLossReport report;
  TRef total;  // scalar, ready for Tape::backward
  // the individual term scalars, still on the tape (diagnostics can backward
  // through any one of them in isolation)
  TRef image, reward, discount, kl, domain_kl;  // domain_kl invalid when beta2 == 0
  WMSequenceOut seq;
};

// KL(cat(p_logits) || cat(q_logits)) per row, summed over latent groups;
// result [rows, 1]. Shared by the balanced posterior/prior term and the
// cross-domain encoder term, and directly testable against hand summation.
TRef categorical_kl_rows(Tape& tp, TRef p_logits, TRef q_logits, int classes);

// A batch filtered through the model: the time-major batch constants plus
// the posterior scan. This is the shared front half of the sequence loss,
// also used to run one model over another domain's data (reward relabeling).
struct SequenceForward {
  TRef obs_all;   // normalized observations [L*B, obs_dim]
  TRef act_all;   // [L*B, A]
  TRef rew_all;   // [L*B, 1]
  TRef disc_all;  // [L*B, 1]
  TRef enc_all;   // encoder logits [L*B, G*K]
  WMSequenceOut seq;
};

SequenceForward observe_sequence(Tape& tp, const WorldModel& wm, const SequenceBatch& batch,
                                 Rng& rng, LatentMode latents = LatentMode::sample);

// Sequence NLLs + balanced KL + cross-domain encoder KL. source_encoder must
// be non-null exactly when beta2 > 0; its encoder runs on the same batch with
// a gradient stop, so no gradient ever reaches source parameters. Sampling
// consumes rng once per step (L draws total). latents selects the z path;
// training uses `sample`, numeric validation `relaxed`.
WMLossOut wm_loss(Tape& tp, WorldModel& wm, const SequenceBatch& batch,
                  WorldModel* source_encoder, double beta1, double beta2, double free_bits,
                  double kl_balance, Rng& rng, LatentMode latents = LatentMode::sample);

}  // namespace coworld
