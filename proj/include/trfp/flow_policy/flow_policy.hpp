#pragma once

// Hybrid flow actor: a deterministic Heun prefix on [0, tau_cut] followed by
// L Euler-Maruyama style tail steps u' = u + v dt + sigma (.) eps on
// [tau_cut, 1], with t_k = k / K and tau_cut = (K - L) / K. The action is the
// last latent u_K. One velocity network (conditioned on t) serves both
// phases; a separate head produces the per-dimension noise scale.

#include <cmath>
#include <string>
#include <vector>

#include "trfp/diffcore/mlp.hpp"
#include "trfp/diffcore/tape.hpp"
#include "trfp/error.hpp"
#include "trfp/rng.hpp"

namespace trfp::flow {

using diff::Index;
using diff::Matrix;
using diff::Tape;
using diff::Var;

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

struct SigmaBounds {
  double min = 1e-3;
  double max = 0.5;
};

struct FlowPolicyParams {
  int obs_dim = 0;
  int action_dim = 0;
  diff::MlpParams velocity;    // (s, u, t) -> R^{d_a}
  diff::MlpParams sigma_head;  // (s, u, t) -> pre-sigma in R^{d_a}
  SigmaBounds bounds;
  // Ablation without a stochastic tail: sigma is held at bounds.min.
  bool pin_sigma = false;

  Index input_width() const { return obs_dim + action_dim + 1; }

  void validate() const {
    velocity.validate();
    sigma_head.validate();
    if (velocity.input_width() != input_width() || sigma_head.input_width() != input_width()) {
      throw ConfigError("flow policy: network input width must be obs_dim + action_dim + 1 = " +
                        std::to_string(input_width()));
    }
    if (velocity.output_width() != action_dim || sigma_head.output_width() != action_dim) {
      throw ConfigError("flow policy: network output width must equal action_dim");
    }
    if (!(bounds.min > 0.0 && bounds.min < bounds.max)) {
      throw ConfigError("flow policy: sigma bounds must satisfy 0 < min < max");
    }
  }
};

struct FlowPolicyInit {
  std::vector<Index> hidden{256, 256, 256};
  std::vector<Index> sigma_hidden{64, 64};
  SigmaBounds bounds;
  double sigma_init = 0.1;
  double output_weight_scale = 0.01;
};

// Pre-activation value that maps to `sigma` under the bounded logistic.
inline double sigma_logit(double sigma, const SigmaBounds& b) {
  const double p = (sigma - b.min) / (b.max - b.min);
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("sigma_init must lie strictly inside the sigma bounds");
  return std::log(p / (1.0 - p));
}

inline FlowPolicyParams make_flow_policy(int obs_dim, int action_dim, Rng& rng, const FlowPolicyInit& init = {}) {
  FlowPolicyParams p;
  p.obs_dim = obs_dim;
  p.action_dim = action_dim;
  p.bounds = init.bounds;
  p.velocity = diff::make_mlp(p.input_width(), init.hidden, action_dim, rng,
                              {init.output_weight_scale, 0.0});
  p.sigma_head = diff::make_mlp(p.input_width(), init.sigma_hidden, action_dim, rng,
                                {init.output_weight_scale, sigma_logit(init.sigma_init, init.bounds)});
  p.validate();
  return p;
}

// --------------------------------------------------------------------------
// Plain evaluation (nothing recorded)

inline Matrix policy_input(const Matrix& states, const Matrix& latents, const Matrix& times) {
  Matrix x(states.rows(), states.cols() + latents.cols() + 1);
  x << states, latents, times;
  return x;
}

inline Matrix time_column(Index rows, double t) { return Matrix::Constant(rows, 1, t); }

inline Matrix velocity(const FlowPolicyParams& p, const Matrix& states, const Matrix& latents, const Matrix& times) {
  Matrix v = diff::mlp_predict(p.velocity, policy_input(states, latents, times));
  if (!v.allFinite()) throw TrainingFault("flow policy: non-finite velocity");
  return v;
}

inline Matrix velocity(const FlowPolicyParams& p, const Matrix& states, const Matrix& latents, double t) {
  return velocity(p, states, latents, time_column(states.rows(), t));
}

inline Matrix squash_sigma(const Matrix& pre, const SigmaBounds& b) {
  return pre.unaryExpr([b](double x) { return b.min + (b.max - b.min) * diff::scalar::logistic(x); });
}

inline Matrix sigma(const FlowPolicyParams& p, const Matrix& states, const Matrix& latents, double t) {
  if (p.pin_sigma) return Matrix::Constant(states.rows(), p.action_dim, p.bounds.min);
  return squash_sigma(diff::mlp_predict(p.sigma_head, policy_input(states, latents, time_column(states.rows(), t))),
                      p.bounds);
}

// One Heun (explicit trapezoid) step of du = v dt.
inline Matrix heun_step(const FlowPolicyParams& p, const Matrix& states, const Matrix& u, double t, double dt) {
  const Matrix v1 = velocity(p, states, u, t);
  const Matrix predictor = u + v1 * dt;
  const Matrix v2 = velocity(p, states, predictor, t + dt);
  return u + (v1 + v2) * (0.5 * dt);
}

// Prefix step with the hybrid sampler's contract that it stays inside [0, tau_cut].
inline Matrix heun_prefix_step(const FlowPolicyParams& p, const Matrix& states, const Matrix& u, double t,
                               double dt, double tau_cut) {
  if (t + dt > tau_cut + 1e-12) throw UsageError("heun_prefix_step: step crosses the prefix cutoff");
  return heun_step(p, states, u, t, dt);
}

// Per-row log N(x; mean, diag(sigma^2)) written in terms of eps = (x - mean) / sigma.
inline Matrix gaussian_logp_from_noise(const Matrix& eps, const Matrix& sig) {
  Matrix out(eps.rows(), 1);
  for (Index i = 0; i < eps.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < eps.cols(); ++j) s += -kHalfLog2Pi - std::log(sig(i, j)) - 0.5 * eps(i, j) * eps(i, j);
    out(i, 0) = s;
  }
  return out;
}

inline Matrix standard_normal_logp(const Matrix& x) {
  return gaussian_logp_from_noise(x, Matrix::Ones(x.rows(), x.cols()));
}

struct TailStep {
  Matrix next;
  Matrix velocity;
  Matrix sigma;
  Matrix logp;  // batch x 1
};

inline TailStep sde_tail_step(const FlowPolicyParams& p, const Matrix& states, const Matrix& u, double t, double dt,
                              const Matrix& eps) {
  TailStep s;
  s.velocity = velocity(p, states, u, t);
  s.sigma = sigma(p, states, u, t);
  s.next = u + s.velocity * dt + s.sigma.cwiseProduct(eps);
  s.logp = gaussian_logp_from_noise(eps, s.sigma);
  return s;
}

// Full generation record, batched over rows.
struct LatentChain {
  int steps = 0;         // K
  int tail_length = 0;   // L
  std::vector<Matrix> u;           // u_0 .. u_K
  std::vector<Matrix> noises;      // eps_{K-L} .. eps_{K-1}
  std::vector<Matrix> velocities;  // tail velocities
  std::vector<Matrix> sigmas;      // tail noise scales
  std::vector<double> times;       // t_k = k / K, k = 0..K
  Matrix prior_logp;               // log N(u_0; 0, I), batch x 1
  std::vector<Matrix> tail_logps;  // batch x 1 each

  int cutoff() const { return steps - tail_length; }
  double tau_cut() const { return static_cast<double>(cutoff()) / steps; }
  const Matrix& action() const { return u.back(); }
};

inline void check_chain_shape(int K, int L) {
  if (K < 1 || L < 0 || L > K) {
    throw ConfigError("hybrid sampler needs K >= 1 and 0 <= L <= K (got K=" + std::to_string(K) +
                      ", L=" + std::to_string(L) + ")");
  }
}

// Deterministic given the prior draw and tail noises.
inline LatentChain run_hybrid(const FlowPolicyParams& p, const Matrix& states, const Matrix& u0,
                              const std::vector<Matrix>& noises, int K, int L) {
  check_chain_shape(K, L);
  if (static_cast<int>(noises.size()) != L) throw ConfigError("run_hybrid: need exactly L noise draws");
  LatentChain c;
  c.steps = K;
  c.tail_length = L;
  const double dt = 1.0 / K;
  for (int k = 0; k <= K; ++k) c.times.push_back(static_cast<double>(k) / K);
  c.u.push_back(u0);
  c.prior_logp = standard_normal_logp(u0);
  const double tau = c.tau_cut();
  for (int k = 0; k < K - L; ++k) c.u.push_back(heun_prefix_step(p, states, c.u.back(), c.times[k], dt, tau));
  for (int j = 0; j < L; ++j) {
    const int k = K - L + j;
    TailStep s = sde_tail_step(p, states, c.u.back(), c.times[k], dt, noises[j]);
    c.noises.push_back(noises[j]);
    c.velocities.push_back(std::move(s.velocity));
    c.sigmas.push_back(std::move(s.sigma));
    c.tail_logps.push_back(std::move(s.logp));
    c.u.push_back(std::move(s.next));
  }
  return c;
}

// Draws u_0 ~ N(0, I) and then the L tail noises, in that order.
inline LatentChain sample_hybrid(const FlowPolicyParams& p, const Matrix& states, Rng& rng, int K, int L) {
  check_chain_shape(K, L);
  Matrix u0 = standard_normal(rng, states.rows(), p.action_dim);
  std::vector<Matrix> noises;
  for (int j = 0; j < L; ++j) noises.push_back(standard_normal(rng, states.rows(), p.action_dim));
  return run_hybrid(p, states, u0, noises, K, L);
}

// log pi~ = log N(u_0; 0, I) + sum of tail transition log-densities.
inline Matrix surrogate_logp(const LatentChain& c) {
  Matrix total = c.prior_logp;
  for (const Matrix& l : c.tail_logps) total += l;
  return total;
}

// Noise-free K-step rollout (the self-distillation target u_tg).
inline Matrix deterministic_rollout(const FlowPolicyParams& p, const Matrix& states, const Matrix& u0, int K, int L) {
  std::vector<Matrix> zeros(static_cast<std::size_t>(std::max(L, 0)), Matrix::Zero(u0.rows(), u0.cols()));
  return run_hybrid(p, states, u0, zeros, K, L).action();
}

// Evaluation-time sampler: Heun over the whole of [0, 1], no noise.
inline std::vector<Matrix> eval_trajectory(const FlowPolicyParams& p, const Matrix& states, const Matrix& u0, int steps) {
  if (steps < 1) throw ConfigError("sample_eval: steps must be >= 1");
  std::vector<Matrix> traj{u0};
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) traj.push_back(heun_step(p, states, traj.back(), k * dt, dt));
  return traj;
}

inline Matrix sample_eval(const FlowPolicyParams& p, const Matrix& states, const Matrix& u0, int steps) {
  return eval_trajectory(p, states, u0, steps).back();
}

// Squared distance to the straight path, per row:
// ||v(s, x_t, t) - (u_tg - u_0)||^2 with x_t = t u_tg + (1 - t) u_0.
inline Matrix straightening_residual(const FlowPolicyParams& p, const Matrix& states, const Matrix& u0,
                                     const Matrix& u_tg, const Matrix& times) {
  Matrix xt(u0.rows(), u0.cols());
  for (Index i = 0; i < u0.rows(); ++i) xt.row(i) = times(i, 0) * u_tg.row(i) + (1.0 - times(i, 0)) * u0.row(i);
  const Matrix v = velocity(p, states, xt, times);
  return (v - (u_tg - u0)).rowwise().squaredNorm();
}

// --------------------------------------------------------------------------
// Recorded evaluation (for losses)

struct FlowPolicyVars {
  diff::MlpVars velocity;
  diff::MlpVars sigma_head;
};

inline FlowPolicyVars bind(Tape& tape, const FlowPolicyParams& p, bool trainable = true) {
  return {diff::bind(tape, p.velocity, trainable), diff::bind(tape, p.sigma_head, trainable)};
}

inline Var velocity_on_tape(const FlowPolicyParams& p, const FlowPolicyVars& vars, Var states, Var latents, Var times) {
  return diff::mlp_forward(p.velocity, vars.velocity, diff::concat_cols({states, latents, times}));
}

inline Var sigma_on_tape(const FlowPolicyParams& p, const FlowPolicyVars& vars, Var states, Var latents, Var times) {
  Tape& tape = *states.tape();
  if (p.pin_sigma) return tape.constant(Matrix::Constant(states.rows(), p.action_dim, p.bounds.min));
  Var pre = diff::mlp_forward(p.sigma_head, vars.sigma_head, diff::concat_cols({states, latents, times}));
  return diff::shift(diff::scale(diff::logistic(pre), p.bounds.max - p.bounds.min), p.bounds.min);
}

inline Var heun_step_on_tape(const FlowPolicyParams& p, const FlowPolicyVars& vars, Var states, Var u, double t,
                             double dt) {
  Tape& tape = *states.tape();
  Var v1 = velocity_on_tape(p, vars, states, u, tape.constant(time_column(states.rows(), t)));
  Var predictor = u + v1 * dt;
  Var v2 = velocity_on_tape(p, vars, states, predictor, tape.constant(time_column(states.rows(), t + dt)));
  return u + (v1 + v2) * (0.5 * dt);
}

struct TapeTail {
  Var action;               // u_K
  Var tail_logp;            // batch x 1, sum over tail steps
  std::vector<Var> sigmas;  // per tail step
};

// Tail steps k = K-L .. K-1 starting from `start` (= u_{K-L}).
inline TapeTail tail_on_tape(const FlowPolicyParams& p, const FlowPolicyVars& vars, Var states, Var start,
                             const std::vector<Matrix>& noises, int K, int L) {
  check_chain_shape(K, L);
  if (L < 1) throw ConfigError("tail_on_tape: the tail must have at least one step");
  if (static_cast<int>(noises.size()) != L) throw ConfigError("tail_on_tape: need exactly L noise draws");
  Tape& tape = *states.tape();
  const double dt = 1.0 / K;
  TapeTail out;
  Var u = start;
  for (int j = 0; j < L; ++j) {
    const double t = static_cast<double>(K - L + j) / K;
    Var times = tape.constant(time_column(states.rows(), t));
    Var v = velocity_on_tape(p, vars, states, u, times);
    Var sig = sigma_on_tape(p, vars, states, u, times);
    Var eps = tape.constant(noises[j]);
    u = u + v * dt + diff::hadamard(sig, eps);
    // -0.5 ln(2 pi) - ln sigma - eps^2 / 2, summed over action dims
    Matrix const_part = Matrix::Constant(states.rows(), 1, -kHalfLog2Pi * p.action_dim) -
                        0.5 * noises[j].rowwise().squaredNorm();
    Var step_logp = diff::row_sum(-diff::log(sig)) + tape.constant(std::move(const_part));
    out.tail_logp = out.tail_logp.valid() ? out.tail_logp + step_logp : step_logp;
    out.sigmas.push_back(sig);
  }
  out.action = u;
  return out;
}

enum class Cutoff {
  StopGradient,  // detach u_{K-L}: gradients reach only the tail dynamics
  Backprop,      // differentiate through the whole chain (reference only)
};

struct TapeChain {
  Var prefix_end;   // u_{K-L} as produced by the prefix
  Var tail_start;   // what the tail consumed (detached copy under StopGradient)
  TapeTail tail;
  Matrix prior_logp;
};

inline TapeChain hybrid_on_tape(const FlowPolicyParams& p, const FlowPolicyVars& vars, Var states, const Matrix& u0,
                                const std::vector<Matrix>& noises, int K, int L, Cutoff cutoff) {
  check_chain_shape(K, L);
  Tape& tape = *states.tape();
  const double dt = 1.0 / K;
  TapeChain c;
  c.prior_logp = standard_normal_logp(u0);
  Var u = tape.constant(u0);
  for (int k = 0; k < K - L; ++k) u = heun_step_on_tape(p, vars, states, u, static_cast<double>(k) / K, dt);
  c.prefix_end = u;
  c.tail_start = cutoff == Cutoff::StopGradient ? tape.stop_gradient(u) : u;
  c.tail = tail_on_tape(p, vars, states, c.tail_start, noises, K, L);
  return c;
}

// Batch mean of the straightening residual; u0 and u_tg enter as constants.
inline Var straightening_loss_on_tape(const FlowPolicyParams& p, const FlowPolicyVars& vars, Var states,
                                      const Matrix& u0, const Matrix& u_tg, const Matrix& times) {
  Tape& tape = *states.tape();
  Matrix xt(u0.rows(), u0.cols());
  for (Index i = 0; i < u0.rows(); ++i) xt.row(i) = times(i, 0) * u_tg.row(i) + (1.0 - times(i, 0)) * u0.row(i);
  Var v = velocity_on_tape(p, vars, states, tape.constant(std::move(xt)), tape.constant(times));
  Var residual = v - tape.constant(u_tg - u0);
  return diff::scale(diff::sum(diff::square(residual)), 1.0 / static_cast<double>(u0.rows()));
}

}  // namespace trfp::flow
