#include "coworld/worldmodel.hpp"

#include <cmath>

#include "coworld/errors.hpp"

namespace coworld {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.data)
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite activation");
}

bool any_set(const std::vector<uint8_t>& mask) {
  for (uint8_t m : mask)
    if (m) return true;
  return false;
}

TRef draw_z(Tape& tp, TRef probs, int classes, Rng& rng, LatentMode latents) {
  switch (latents) {
    case LatentMode::sample:
      return tp.onehot_sample_st(probs, classes, rng);
    case LatentMode::mode:
      return tp.onehot_mode(probs, classes);
    case LatentMode::relaxed:
      return probs;
  }
  return probs;  // unreachable
}

}  // namespace

WorldModel::WorldModel(const CoWorldConfig& cfg, const EnvSpec& env, std::string role, Rng& rng)
    : role_(std::move(role)),
      deter_(cfg.deter),
      groups_(cfg.groups),
      classes_(cfg.classes),
      hidden_(cfg.hidden),
      obs_dim_(env.obs_size()),
      action_dim_(env.action_dim),
      encoder_(role_ + ".enc", obs_dim_, {hidden_, hidden_}, groups_ * classes_),
      img_in_(role_ + ".imgin", groups_ * classes_ + action_dim_, hidden_),
      gru_(role_ + ".gru", hidden_, deter_),
      prior_(role_ + ".prior", deter_, {hidden_}, groups_ * classes_),
      posterior_(role_ + ".post", deter_ + groups_ * classes_, {hidden_},
                 groups_ * classes_),
      decoder_(role_ + ".dec", deter_ + groups_ * classes_, {hidden_, hidden_}, obs_dim_),
      reward_(role_ + ".rew", deter_ + groups_ * classes_, {hidden_, hidden_}, 1),
      discount_(role_ + ".disc", deter_ + groups_ * classes_, {hidden_, hidden_}, 1),
      h0_(role_ + ".h0", 1, deter_) {
  encoder_.init(rng);
  img_in_.init(rng);
  gru_.init(rng);
  prior_.init(rng);
  posterior_.init(rng);
  decoder_.init(rng);
  reward_.init(rng);
  discount_.init(rng);
}

TRef WorldModel::obs_constant(Tape& tp, const uint8_t* frames, int rows) const {
  Tensor t(rows, obs_dim_);
  const size_t n = t.size();
  for (size_t i = 0; i < n; ++i) t.data[i] = static_cast<double>(frames[i]) / 255.0 - 0.5;
  return tp.constant(std::move(t));
}

TRef WorldModel::encode(Tape& tp, TRef obs_norm) const {
  if (tp.value(obs_norm).cols != obs_dim_)
    throw UsageError("encode: observation width " + std::to_string(tp.value(obs_norm).cols) +
                     ", model expects " + std::to_string(obs_dim_));
  return encoder_.apply(tp, obs_norm);
}

RSSMState WorldModel::initial_state(Tape& tp, int batch) const {
  RSSMState s;
  s.h = tp.repeat_rows(tp.param(const_cast<Param&>(h0_)), batch);
  s.z = tp.zeros(batch, groups_ * classes_);
  s.z_logits = tp.zeros(batch, groups_ * classes_);
  return s;
}

WorldModel::StepOut WorldModel::observe_step(Tape& tp, const RSSMState& prev, TRef prev_action,
                                             TRef obs_norm, const std::vector<uint8_t>& is_first,
                                             Rng& rng, LatentMode latents) const {
  const int B = tp.value(prev.h).rows;
  TRef h_prev = prev.h;
  TRef z_prev = prev.z;
  TRef act = prev_action;
  if (!is_first.empty() && any_set(is_first)) {
    RSSMState init = initial_state(tp, B);
    h_prev = tp.where_rows(is_first, init.h, h_prev);
    z_prev = tp.where_rows(is_first, init.z, z_prev);
    act = tp.where_rows(is_first, tp.zeros(B, action_dim_), act);
  }
  return observe_step_enc(tp, h_prev, z_prev, act, encode(tp, obs_norm), rng, latents);
}

WorldModel::StepOut WorldModel::observe_step_enc(Tape& tp, TRef h_prev, TRef z_prev, TRef action,
                                                 TRef enc_logits, Rng& rng,
                                                 LatentMode latents) const {
  TRef x = tp.elu_(img_in_.apply(tp, tp.concat_cols(z_prev, action)));
  TRef h = gru_.apply(tp, x, h_prev);
  check_finite(tp.value(h), "observe_step");
  TRef prior_logits = prior_.apply(tp, h);
  TRef post_logits = posterior_.apply(tp, tp.concat_cols(h, enc_logits));
  TRef probs = tp.softmax_g(post_logits, classes_);
  TRef z = draw_z(tp, probs, classes_, rng, latents);
  return {{h, z, post_logits}, prior_logits};
}

RSSMState WorldModel::imagine_step(Tape& tp, const RSSMState& state, TRef action, Rng& rng,
                                   LatentMode latents) const {
  TRef x = tp.elu_(img_in_.apply(tp, tp.concat_cols(state.z, action)));
  TRef h = gru_.apply(tp, x, state.h);
  check_finite(tp.value(h), "imagine_step");
  TRef prior_logits = prior_.apply(tp, h);
  TRef probs = tp.softmax_g(prior_logits, classes_);
  TRef z = draw_z(tp, probs, classes_, rng, latents);
  return {h, z, prior_logits};
}

TRef WorldModel::decode_obs(Tape& tp, TRef feat) const { return decoder_.apply(tp, feat); }

TRef WorldModel::predict_reward(Tape& tp, TRef feat) const { return reward_.apply(tp, feat); }

TRef WorldModel::predict_discount_logit(Tape& tp, TRef feat) const {
  return discount_.apply(tp, feat);
}

std::vector<Param*> WorldModel::params() {
  std::vector<Param*> out;
  out.push_back(&h0_);
  encoder_.collect(out);
  img_in_.collect(out);
  gru_.collect(out);
  prior_.collect(out);
  posterior_.collect(out);
  decoder_.collect(out);
  reward_.collect(out);
  discount_.collect(out);
  return out;
}

std::vector<Param*> WorldModel::encoder_params() {
  std::vector<Param*> out;
  encoder_.collect(out);
  return out;
}

TRef categorical_kl_rows(Tape& tp, TRef p_logits, TRef q_logits, int classes) {
  TRef p_prob = tp.softmax_g(p_logits, classes);
  TRef p_log = tp.log_softmax_g(p_logits, classes);
  TRef q_log = tp.log_softmax_g(q_logits, classes);
  return tp.row_sum(tp.mul(p_prob, tp.sub(p_log, q_log)));
}

SequenceForward observe_sequence(Tape& tp, const WorldModel& wm, const SequenceBatch& batch,
                                 Rng& rng, LatentMode latents) {
  if (batch.B < 1 || batch.L < 1) throw UsageError("sequence forward: empty batch");
  if (batch.obs_dim != wm.obs_dim())
    throw UsageError("sequence forward: batch obs_dim " + std::to_string(batch.obs_dim) +
                     ", model expects " + std::to_string(wm.obs_dim()));
  if (batch.A != wm.action_dim()) throw UsageError("sequence forward: action width mismatch");

  const int B = batch.B, L = batch.L, A = batch.A;
  const int obs_dim = wm.obs_dim();
  const int R = L * B;  // stacked rows, time-major: row l*B + b

  // reorder the (b, l)-major batch into time-major constants
  std::vector<uint8_t> obs_t(static_cast<size_t>(R) * obs_dim);
  Tensor act_t(R, A), rew_t(R, 1), disc_t(R, 1);
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < L; ++l) {
      const size_t src = static_cast<size_t>(b) * L + l;
      const size_t dst = static_cast<size_t>(l) * B + b;
      std::copy_n(batch.observations.begin() + src * obs_dim, obs_dim,
                  obs_t.begin() + dst * obs_dim);
      for (int a = 0; a < A; ++a)
        act_t.data[dst * A + a] = static_cast<double>(batch.actions[src * A + a]);
      rew_t.data[dst] = static_cast<double>(batch.rewards[src]);
      disc_t.data[dst] = static_cast<double>(batch.discounts[src]);
    }
  SequenceForward fwd;
  fwd.obs_all = wm.obs_constant(tp, obs_t.data(), R);
  fwd.act_all = tp.constant(std::move(act_t));
  fwd.rew_all = tp.constant(std::move(rew_t));
  fwd.disc_all = tp.constant(std::move(disc_t));

  fwd.enc_all = wm.encode(tp, fwd.obs_all);

  RSSMState prev = wm.initial_state(tp, B);
  std::vector<TRef> hs, zs, posts, priors;
  hs.reserve(L);
  zs.reserve(L);
  posts.reserve(L);
  priors.reserve(L);
  for (int l = 0; l < L; ++l) {
    TRef act = l == 0 ? tp.zeros(B, A) : tp.slice_rows(fwd.act_all, (l - 1) * B, l * B);
    TRef enc = tp.slice_rows(fwd.enc_all, l * B, (l + 1) * B);
    WorldModel::StepOut so;
    try {
      so = wm.observe_step_enc(tp, prev.h, prev.z, act, enc, rng, latents);
    } catch (const NumericError& ex) {
      throw NumericError(std::string(ex.what()) + " (sequence step " + std::to_string(l) + ")");
    }
    hs.push_back(so.post.h);
    zs.push_back(so.post.z);
    posts.push_back(so.post.z_logits);
    priors.push_back(so.prior_logits);
    prev = so.post;
  }

  fwd.seq.B = B;
  fwd.seq.L = L;
  fwd.seq.h_all = tp.stack_rows(hs);
  fwd.seq.z_all = tp.stack_rows(zs);
  fwd.seq.post_logits = tp.stack_rows(posts);
  fwd.seq.prior_logits = tp.stack_rows(priors);
  fwd.seq.feats = tp.concat_cols(fwd.seq.h_all, fwd.seq.z_all);
  return fwd;
}

WMLossOut wm_loss(Tape& tp, WorldModel& wm, const SequenceBatch& batch,
                  WorldModel* source_encoder, double beta1, double beta2, double free_bits,
                  double kl_balance, Rng& rng, LatentMode latents) {
  if ((beta2 > 0.0) != (source_encoder != nullptr))
    throw ConfigError(beta2 > 0.0
                          ? "wm_loss: beta2 > 0 requires a source encoder"
                          : "wm_loss: source encoder supplied but beta2 is 0");

  const SequenceForward fwd = observe_sequence(tp, wm, batch, rng, latents);
  const TRef obs_all = fwd.obs_all, rew_all = fwd.rew_all, disc_all = fwd.disc_all;
  const TRef enc_all = fwd.enc_all;
  const WMSequenceOut& seq = fwd.seq;
  const int obs_dim = wm.obs_dim();

  // unit-variance Gaussian NLLs, summed over dimensions, averaged over rows
  TRef img_mu = wm.decode_obs(tp, seq.feats);
  TRef image = tp.add_scalar(
      tp.scale(tp.mean_all(tp.row_sum(tp.square_(tp.sub(img_mu, obs_all)))), 0.5),
      kHalfLog2Pi * obs_dim);
  TRef rew_mu = wm.predict_reward(tp, seq.feats);
  TRef reward =
      tp.add_scalar(tp.scale(tp.mean_all(tp.square_(tp.sub(rew_mu, rew_all))), 0.5), kHalfLog2Pi);
  // Bernoulli NLL: softplus(l) - y*l
  TRef disc_logit = wm.predict_discount_logit(tp, seq.feats);
  TRef discount = tp.mean_all(tp.sub(tp.softplus_(disc_logit), tp.mul(disc_all, disc_logit)));

  // balanced KL with a per-state free-bits floor on each half
  const int K = wm.classes();
  TRef kl_lhs = categorical_kl_rows(tp, tp.stop_grad(seq.post_logits), seq.prior_logits, K);
  TRef kl_rhs = categorical_kl_rows(tp, seq.post_logits, tp.stop_grad(seq.prior_logits), K);
  TRef kl = tp.mean_all(tp.add(tp.scale(tp.clamp_min(kl_lhs, free_bits), kl_balance),
                               tp.scale(tp.clamp_min(kl_rhs, free_bits), 1.0 - kl_balance)));

  WMLossOut out;
  out.seq = seq;
  out.image = image;
  out.reward = reward;
  out.discount = discount;
  out.kl = kl;
  TRef total = tp.add(tp.add(tp.add(image, reward), discount), tp.scale(kl, beta1));

  if (source_encoder) {
    // cross-domain alignment: pull the live encoder toward the stopped one
    TRef src_logits = source_encoder->encode(tp, obs_all);
    TRef dkl_rows =
        tp.clamp_min(categorical_kl_rows(tp, tp.stop_grad(src_logits), enc_all, K), 0.0);
    TRef domain_kl = tp.mean_all(dkl_rows);
    total = tp.add(total, tp.scale(domain_kl, beta2));
    out.domain_kl = domain_kl;
    out.report.domain_kl_loss = tp.scalar(domain_kl);
  }

  out.total = total;
  out.report.image_loss = tp.scalar(image);
  out.report.reward_loss = tp.scalar(reward);
  out.report.discount_loss = tp.scalar(discount);
  out.report.kl_loss = tp.scalar(kl);
  out.report.total = tp.scalar(total);
  if (!std::isfinite(out.report.total))
    throw NumericError("world-model loss: non-finite total");
  return out;
}

}  // namespace coworld
