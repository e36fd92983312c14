#pragma once

// Tanh-squashed Gaussian actor with the same critic, replay and temperature
// machinery; the unimodal baseline for the multigoal comparison.

#include <cmath>
#include <vector>

#include "trfp/critic/critic.hpp"
#include "trfp/diffcore/mlp.hpp"
#include "trfp/flow_policy/flow_policy.hpp"
#include "trfp/rng.hpp"
#include "trfp/trainer/config.hpp"
#include "trfp/trainer/metrics.hpp"
#include "trfp/trainer/temperature.hpp"
#include "trfp/trainer/transition.hpp"

namespace trfp {

struct GaussianSacAgent {
  TrainConfig config;
  diff::MlpParams actor;  // obs -> (mean, pre-log-std), 2 * d_a outputs
  critic::CriticEnsemble critic;
  Temperature temperature;
  int obs_dim = 0;
  int action_dim = 0;
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

inline GaussianSacAgent make_gaussian_sac_agent(const TrainConfig& cfg, int obs_dim, int action_dim, Rng& rng) {
  cfg.validate();
  GaussianSacAgent a;
  a.config = cfg;
  a.obs_dim = obs_dim;
  a.action_dim = action_dim;
  a.actor = diff::make_mlp(obs_dim, cfg.hidden, 2 * action_dim, rng);
  a.critic = critic::make_critic(obs_dim, action_dim, cfg.critic_hidden, rng, cfg.tau_polyak);
  a.temperature = Temperature::make(cfg.alpha_init, -static_cast<double>(action_dim));
  return a;
}

struct SquashedSample {
  diff::Matrix action;  // tanh(mean + std * eps)
  diff::Matrix logp;    // batch x 1, including the tanh correction
  diff::Matrix stddev;
};

inline SquashedSample squashed_sample(const GaussianSacAgent& a, const diff::Matrix& states, const diff::Matrix& eps) {
  const diff::Matrix out = diff::mlp_predict(a.actor, states);
  const diff::Matrix mean = out.leftCols(a.action_dim);
  const diff::Matrix log_std = out.rightCols(a.action_dim).unaryExpr([](double x) {
    return kLogStdMin + 0.5 * (kLogStdMax - kLogStdMin) * (std::tanh(x) + 1.0);
  });
  SquashedSample s;
  s.stddev = log_std.array().exp();
  s.action = (mean + s.stddev.cwiseProduct(eps)).array().tanh();
  s.logp = diff::Matrix::Zero(states.rows(), 1);
  for (diff::Index i = 0; i < states.rows(); ++i) {
    for (diff::Index j = 0; j < a.action_dim; ++j) {
      s.logp(i, 0) += -flow::kHalfLog2Pi - log_std(i, j) - 0.5 * eps(i, j) * eps(i, j) -
                      std::log(1.0 - s.action(i, j) * s.action(i, j) + 1e-6);
    }
  }
  return s;
}

inline envs::Vector explore(const GaussianSacAgent& a, const envs::Vector& state, Rng& rng) {
  const diff::Matrix s = state.transpose();
  return squashed_sample(a, s, standard_normal(rng, 1, a.action_dim)).action.row(0).transpose();
}

inline diff::Matrix deterministic_action(const GaussianSacAgent& a, const diff::Matrix& states) {
  return diff::mlp_predict(a.actor, states).leftCols(a.action_dim).array().tanh();
}

inline UpdateMetrics train_step(GaussianSacAgent& a, const TransitionBatch& batch, Rng& rng) {
  using diff::Matrix;
  using diff::Var;
  const TrainConfig& cfg = a.config;
  UpdateMetrics m;
  const double alpha = a.temperature.alpha();

  const SquashedSample next = squashed_sample(a, batch.next_states, standard_normal(rng, batch.size(), a.action_dim));
  const Matrix y = critic::soft_bellman_target(batch.rewards, batch.dones,
                                               critic::min_target_q(a.critic, batch.next_states, next.action),
                                               next.logp, alpha, cfg.gamma);
  const critic::CriticUpdateStats cs =
      critic::update_critics(a.critic, batch.states, batch.actions, y, cfg.lr_critic, cfg.grad_clip);
  critic::soft_update(a.critic);
  m.critic_loss = cs.loss;
  m.grad_norm_critic = cs.grad_norm;

  const Matrix eps = standard_normal(rng, batch.size(), a.action_dim);
  diff::Tape tape;
  const diff::MlpVars vars = diff::bind(tape, a.actor, true);
  Var s = tape.constant(batch.states);
  Var out = diff::mlp_forward(a.actor, vars, s);
  Var mean = diff::slice_cols(out, 0, a.action_dim);
  Var log_std = diff::shift(diff::scale(diff::shift(diff::tanh(diff::slice_cols(out, a.action_dim, a.action_dim)), 1.0),
                                        0.5 * (kLogStdMax - kLogStdMin)),
                            kLogStdMin);
  Var e = tape.constant(eps);
  Var act = diff::tanh(mean + diff::hadamard(diff::exp(log_std), e));
  Matrix const_part = Matrix::Constant(batch.size(), 1, -flow::kHalfLog2Pi * a.action_dim) -
                      0.5 * eps.rowwise().squaredNorm();
  Var correction = diff::log(diff::shift(-diff::square(act), 1.0 + 1e-6));
  Var logp = diff::row_sum(-log_std - correction) + tape.constant(std::move(const_part));
  Var q = critic::min_q_on_tape(a.critic, tape, s, act);
  Var loss = diff::mean(diff::scale(logp, alpha) - q);
  m.actor_loss = loss.value()(0, 0);
  m.truncated_loss = m.actor_loss;
  if (!std::isfinite(m.actor_loss)) throw TrainingFault("sac actor: non-finite loss");
  tape.backward(loss);
  std::vector<Matrix> g = diff::gradients(vars);
  m.grad_norm_actor = diff::clip_global_norm({&g}, cfg.grad_clip);
  diff::adam_step(a.actor, g, cfg.lr_actor);
  m.mean_surrogate_logp = logp.value().mean();
  m.mean_sigma = log_std.value().array().exp().mean();

  if (cfg.learn_alpha) m.grad_norm_alpha = std::abs(a.temperature.update(logp.value(), cfg.lr_alpha));
  m.alpha = a.temperature.alpha();
  return m;
}

}  // namespace trfp
