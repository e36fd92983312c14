#pragma once

// The flow actor-critic: truncated actor objective plus straightening,
// twin critics with surrogate-entropy targets, and temperature tuning.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "trfp/critic/critic.hpp"
#include "trfp/diffcore/adam.hpp"
#include "trfp/diffcore/checkpoint.hpp"
#include "trfp/flow_policy/flow_policy.hpp"
#include "trfp/rng.hpp"
#include "trfp/trainer/config.hpp"
#include "trfp/trainer/metrics.hpp"
#include "trfp/trainer/temperature.hpp"
#include "trfp/trainer/transition.hpp"

namespace trfp {

using diff::Matrix;
using diff::Tape;
using diff::Var;

// Differentiable action-value used by the actor loss: (states, actions) ->
// batch x 1. Must not let gradients into its own parameters.
using QFunction = std::function<Var(Tape&, Var states, Var actions)>;

inline QFunction twin_min_q(const critic::CriticEnsemble& e) {
  return [&e](Tape& tape, Var states, Var actions) { return critic::min_q_on_tape(e, tape, states, actions); };
}

// Randomness consumed by one actor loss evaluation.
struct ActorNoise {
  Matrix u0;                   // prior draws, batch x d_a
  std::vector<Matrix> noises;  // L tail noises
  Matrix fm_times;             // t ~ U[0, tau_cut], batch x 1

  static ActorNoise draw(Rng& rng, diff::Index batch, int action_dim, int K, int L) {
    ActorNoise n;
    n.u0 = standard_normal(rng, batch, action_dim);
    for (int j = 0; j < L; ++j) n.noises.push_back(standard_normal(rng, batch, action_dim));
    const double tau = static_cast<double>(K - L) / K;
    n.fm_times = uniform(rng, batch, 1, 0.0, tau);
    return n;
  }
};

struct ActorObjective {
  int K = 4;
  int L = 1;
  double alpha = 0.2;
  double lambda_fm = 0.1;
  flow::Cutoff cutoff = flow::Cutoff::StopGradient;
  // Weight of the squared distance of u_K from the action box. The critic
  // sees the clamped action, so this is the only force on samples outside.
  double bound_penalty = 0.0;
};

struct ActorLossTerms {
  flow::FlowPolicyVars vars;
  flow::TapeChain chain;
  Var truncated;      // mean[alpha * sum tail logp - Q(s, u_K)]
  Var straightening;  // invalid when lambda_fm == 0
  Var bound;          // invalid when bound_penalty == 0
  Var total;
  Matrix surrogate_logp;  // prior + tail, batch x 1 (for logging / temperature)
};

// Records L_total = L_trunc + lambda_fm * L_fm on `tape`. The prior term of
// the surrogate is independent of the parameters and is left out of the
// graph; it is added back in `surrogate_logp`.
inline ActorLossTerms actor_loss_on_tape(Tape& tape, const flow::FlowPolicyParams& p, const Matrix& states,
                                         const ActorNoise& noise, const ActorObjective& obj, const QFunction& q) {
  ActorLossTerms out;
  out.vars = flow::bind(tape, p, true);
  Var s = tape.constant(states);
  out.chain = flow::hybrid_on_tape(p, out.vars, s, noise.u0, noise.noises, obj.K, obj.L, obj.cutoff);
  Var action = out.chain.tail.action;
  Var qv = q(tape, s, diff::clamp(action, -1.0, 1.0));
  out.truncated = diff::mean(diff::scale(out.chain.tail.tail_logp, obj.alpha) - qv);
  out.total = out.truncated;
  if (obj.bound_penalty > 0.0) {
    const Matrix inside = action.value().cwiseMax(-1.0).cwiseMin(1.0);
    out.bound = diff::mean(diff::row_sum(diff::square(action - tape.constant(inside))));
    out.total = out.total + diff::scale(out.bound, obj.bound_penalty);
  }
  if (obj.lambda_fm > 0.0) {
    const Matrix u_tg = flow::deterministic_rollout(p, states, noise.u0, obj.K, obj.L);
    out.straightening = flow::straightening_loss_on_tape(p, out.vars, s, noise.u0, u_tg, noise.fm_times);
    out.total = out.total + diff::scale(out.straightening, obj.lambda_fm);
  }
  out.surrogate_logp = out.chain.prior_logp + out.chain.tail.tail_logp.value();
  return out;
}

// Scalar value of the truncated objective for a fresh draw of noise.
inline double actor_loss_truncated(const flow::FlowPolicyParams& p, const critic::CriticEnsemble& e, double alpha,
                                   const Matrix& states, Rng& rng, int K, int L) {
  Tape tape;
  const ActorNoise noise = ActorNoise::draw(rng, states.rows(), p.action_dim, K, L);
  ActorObjective obj{K, L, alpha, 0.0, flow::Cutoff::StopGradient, 0.0};
  return actor_loss_on_tape(tape, p, states, noise, obj, twin_min_q(e)).truncated.value()(0, 0);
}

struct ActorUpdateStats {
  double truncated_loss = 0.0;
  double fm_loss = 0.0;
  double total_loss = 0.0;
  double grad_norm = 0.0;
  double mean_sigma = 0.0;
  Matrix surrogate_logp;
};

inline ActorUpdateStats update_actor(flow::FlowPolicyParams& p, const Matrix& states, Rng& rng,
                                     const ActorObjective& obj, const QFunction& q, double lr, double clip_norm) {
  const ActorNoise noise = ActorNoise::draw(rng, states.rows(), p.action_dim, obj.K, obj.L);
  Tape tape;
  ActorLossTerms terms = actor_loss_on_tape(tape, p, states, noise, obj, q);
  ActorUpdateStats s;
  s.total_loss = terms.total.value()(0, 0);
  s.truncated_loss = terms.truncated.value()(0, 0);
  if (terms.straightening.valid()) {
    s.fm_loss = terms.straightening.value()(0, 0);
  } else {
    const Matrix u_tg = flow::deterministic_rollout(p, states, noise.u0, obj.K, obj.L);
    s.fm_loss = flow::straightening_residual(p, states, noise.u0, u_tg, noise.fm_times).mean();
  }
  if (!std::isfinite(s.total_loss)) throw TrainingFault("actor: non-finite loss");
  double sigma_sum = 0.0;
  for (const Var& sg : terms.chain.tail.sigmas) sigma_sum += sg.value().mean();
  s.mean_sigma = sigma_sum / static_cast<double>(terms.chain.tail.sigmas.size());
  s.surrogate_logp = terms.surrogate_logp;
  tape.backward(terms.total);
  std::vector<Matrix> gv = diff::gradients(terms.vars.velocity);
  std::vector<Matrix> gs = diff::gradients(terms.vars.sigma_head);
  s.grad_norm = diff::clip_global_norm({&gv, &gs}, clip_norm);
  diff::adam_step(p.velocity, gv, lr);
  if (!p.pin_sigma) diff::adam_step(p.sigma_head, gs, lr);
  return s;
}

struct TrfpAgent {
  TrainConfig config;
  flow::FlowPolicyParams policy;
  critic::CriticEnsemble critic;
  Temperature temperature;

  int obs_dim() const { return policy.obs_dim; }
  int action_dim() const { return policy.action_dim; }
};

inline TrfpAgent make_trfp_agent(const TrainConfig& cfg, int obs_dim, int action_dim, Rng& rng) {
  cfg.validate();
  TrfpAgent a;
  a.config = cfg;
  flow::FlowPolicyInit init;
  init.hidden = cfg.hidden;
  init.sigma_hidden = cfg.sigma_hidden;
  init.bounds = {cfg.sigma_min, cfg.sigma_max};
  init.sigma_init = cfg.sigma_init;
  a.policy = flow::make_flow_policy(obs_dim, action_dim, rng, init);
  a.policy.pin_sigma = cfg.no_tail;
  a.critic = critic::make_critic(obs_dim, action_dim, cfg.critic_hidden, rng, cfg.tau_polyak);
  a.temperature = Temperature::make(cfg.alpha_init, -static_cast<double>(action_dim));
  return a;
}

// Exploration action from the hybrid sampler (unclamped; the env clamps).
inline envs::Vector explore(const TrfpAgent& a, const envs::Vector& state, Rng& rng) {
  const Matrix s = state.transpose();
  const flow::LatentChain c = flow::sample_hybrid(a.policy, s, rng, a.config.K, a.config.L);
  return c.action().row(0).transpose();
}

// Bellman targets with a' from the hybrid sampler at s' and the surrogate
// log-likelihood as the entropy term.
inline Matrix bellman_target(const critic::CriticEnsemble& e, const TransitionBatch& batch,
                             const flow::FlowPolicyParams& p, double alpha, double gamma, int K, int L, Rng& rng) {
  const flow::LatentChain next = flow::sample_hybrid(p, batch.next_states, rng, K, L);
  const Matrix a_next = next.action().cwiseMax(-1.0).cwiseMin(1.0);
  const Matrix min_q = critic::min_target_q(e, batch.next_states, a_next);
  return critic::soft_bellman_target(batch.rewards, batch.dones, min_q, flow::surrogate_logp(next), alpha, gamma);
}

// One pass of the update block: critics, Polyak, actor, temperature.
inline UpdateMetrics train_step(TrfpAgent& a, const TransitionBatch& batch, Rng& rng) {
  const TrainConfig& cfg = a.config;
  UpdateMetrics m;
  const double alpha = a.temperature.alpha();
  const Matrix y = bellman_target(a.critic, batch, a.policy, alpha, cfg.gamma, cfg.K, cfg.L, rng);
  const critic::CriticUpdateStats cs =
      critic::update_critics(a.critic, batch.states, batch.actions, y, cfg.lr_critic, cfg.grad_clip);
  critic::soft_update(a.critic);
  m.critic_loss = cs.loss;
  m.grad_norm_critic = cs.grad_norm;

  const ActorObjective obj{cfg.K, cfg.L, alpha, cfg.effective_lambda_fm(), flow::Cutoff::StopGradient,
                           cfg.bound_penalty};
  const ActorUpdateStats as =
      update_actor(a.policy, batch.states, rng, obj, twin_min_q(a.critic), cfg.lr_actor, cfg.grad_clip);
  m.actor_loss = as.total_loss;
  m.truncated_loss = as.truncated_loss;
  m.fm_loss = as.fm_loss;
  m.grad_norm_actor = as.grad_norm;
  m.mean_sigma = as.mean_sigma;
  m.mean_surrogate_logp = as.surrogate_logp.mean();

  if (cfg.learn_alpha) {
    m.grad_norm_alpha = std::abs(a.temperature.update(as.surrogate_logp, cfg.lr_alpha));
  }
  m.alpha = a.temperature.alpha();
  return m;
}

// Policy tensors plus the sampler shape (K, L) they were trained with.
inline void put_policy(diff::Checkpoint& ckpt, const flow::FlowPolicyParams& p, int K, int L) {
  diff::put_mlp(ckpt, "policy.velocity", p.velocity);
  diff::put_mlp(ckpt, "policy.sigma", p.sigma_head);
  ckpt["policy.sigma_min"] = diff::Tensor::scalar(p.bounds.min);
  ckpt["policy.sigma_max"] = diff::Tensor::scalar(p.bounds.max);
  ckpt["policy.pin_sigma"] = diff::Tensor::scalar(p.pin_sigma ? 1.0 : 0.0);
  ckpt["policy.obs_dim"] = diff::Tensor::scalar(p.obs_dim);
  ckpt["policy.action_dim"] = diff::Tensor::scalar(p.action_dim);
  ckpt["meta.K"] = diff::Tensor::scalar(K);
  ckpt["meta.L"] = diff::Tensor::scalar(L);
}

inline void put_agent(diff::Checkpoint& ckpt, const TrfpAgent& a) {
  put_policy(ckpt, a.policy, a.config.K, a.config.L);
  diff::put_mlp(ckpt, "critic.q1", a.critic.q1);
  diff::put_mlp(ckpt, "critic.q2", a.critic.q2);
  diff::put_mlp(ckpt, "critic.q1_target", a.critic.q1_target);
  diff::put_mlp(ckpt, "critic.q2_target", a.critic.q2_target);
  ckpt["critic.tau_polyak"] = diff::Tensor::scalar(a.critic.tau_polyak);
  a.temperature.put(ckpt, "temperature");
}

inline diff::Checkpoint agent_checkpoint(const TrfpAgent& a) {
  diff::Checkpoint c;
  put_agent(c, a);
  return c;
}

inline flow::FlowPolicyParams get_policy(const diff::Checkpoint& ckpt) {
  flow::FlowPolicyParams p;
  p.velocity = diff::get_mlp(ckpt, "policy.velocity");
  p.sigma_head = diff::get_mlp(ckpt, "policy.sigma");
  p.bounds = {diff::require(ckpt, "policy.sigma_min").to_scalar(), diff::require(ckpt, "policy.sigma_max").to_scalar()};
  p.pin_sigma = diff::require(ckpt, "policy.pin_sigma").to_scalar() != 0.0;
  p.obs_dim = static_cast<int>(diff::require(ckpt, "policy.obs_dim").to_scalar());
  p.action_dim = static_cast<int>(diff::require(ckpt, "policy.action_dim").to_scalar());
  p.validate();
  return p;
}

inline critic::CriticEnsemble get_critic(const diff::Checkpoint& ckpt) {
  critic::CriticEnsemble e;
  e.q1 = diff::get_mlp(ckpt, "critic.q1");
  e.q2 = diff::get_mlp(ckpt, "critic.q2");
  e.q1_target = diff::get_mlp(ckpt, "critic.q1_target");
  e.q2_target = diff::get_mlp(ckpt, "critic.q2_target");
  e.tau_polyak = diff::require(ckpt, "critic.tau_polyak").to_scalar();
  e.validate();
  return e;
}

// Restores parameters and optimizer state into an agent built from `cfg`.
inline TrfpAgent agent_from_checkpoint(const diff::Checkpoint& ckpt, const TrainConfig& cfg) {
  TrfpAgent a;
  a.config = cfg;
  a.policy = get_policy(ckpt);
  a.critic = get_critic(ckpt);
  a.temperature = Temperature::get(ckpt, "temperature");
  return a;
}

}  // namespace trfp
