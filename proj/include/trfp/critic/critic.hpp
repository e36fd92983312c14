#pragma once

// Twin soft Q-functions with Polyak-averaged targets.

#include <string>
#include <vector>

#include "trfp/diffcore/adam.hpp"
#include "trfp/diffcore/mlp.hpp"
#include "trfp/diffcore/tape.hpp"
#include "trfp/error.hpp"
#include "trfp/trainer/transition.hpp"

namespace trfp::critic {

using diff::Index;
using diff::Matrix;
using diff::Tape;
using diff::Var;

struct CriticEnsemble {
  diff::MlpParams q1;
  diff::MlpParams q2;
  diff::MlpParams q1_target;
  diff::MlpParams q2_target;
  double tau_polyak = 0.005;

  void validate() const {
    for (const diff::MlpParams* m : {&q1, &q2, &q1_target, &q2_target}) m->validate();
    auto congruent = [](const diff::MlpParams& a, const diff::MlpParams& b) {
      if (a.layers.size() != b.layers.size()) return false;
      for (std::size_t i = 0; i < a.layers.size(); ++i) {
        if (a.layers[i].weight.rows() != b.layers[i].weight.rows() ||
            a.layers[i].weight.cols() != b.layers[i].weight.cols()) {
          return false;
        }
      }
      return true;
    };
    if (!congruent(q1, q1_target) || !congruent(q2, q2_target) || !congruent(q1, q2)) {
      throw ConfigError("critic: online and target networks are not shape-congruent");
    }
    if (q1.output_width() != 1) throw ConfigError("critic: Q networks must have one output");
    if (!(tau_polyak > 0.0 && tau_polyak <= 1.0)) throw ConfigError("critic: tau_polyak must lie in (0, 1]");
  }
};

inline diff::MlpParams without_optimizer_state(diff::MlpParams m) {
  m.adam = {};
  return m;
}

inline CriticEnsemble make_critic(int obs_dim, int action_dim, const std::vector<Index>& hidden, Rng& rng,
                                  double tau_polyak = 0.005) {
  CriticEnsemble e;
  e.q1 = diff::make_mlp(obs_dim + action_dim, hidden, 1, rng);
  e.q2 = diff::make_mlp(obs_dim + action_dim, hidden, 1, rng);
  e.q1_target = without_optimizer_state(e.q1);
  e.q2_target = without_optimizer_state(e.q2);
  e.tau_polyak = tau_polyak;
  e.validate();
  return e;
}

enum class Head { Q1, Q2, Q1Target, Q2Target };

inline const diff::MlpParams& head(const CriticEnsemble& e, Head h) {
  switch (h) {
    case Head::Q1: return e.q1;
    case Head::Q2: return e.q2;
    case Head::Q1Target: return e.q1_target;
    case Head::Q2Target: return e.q2_target;
  }
  throw UsageError("critic: unknown head");
}

inline Matrix critic_input(const Matrix& states, const Matrix& actions) {
  Matrix x(states.rows(), states.cols() + actions.cols());
  x << states, actions;
  return x;
}

// batch x 1
inline Matrix q_value(const CriticEnsemble& e, const Matrix& states, const Matrix& actions, Head h) {
  const diff::MlpParams& m = head(e, h);
  if (states.cols() + actions.cols() != m.input_width()) {
    throw ConfigError("q_value: state+action width " + std::to_string(states.cols() + actions.cols()) +
                      " != critic input width " + std::to_string(m.input_width()));
  }
  return diff::mlp_predict(m, critic_input(states, actions));
}

inline Matrix min_target_q(const CriticEnsemble& e, const Matrix& states, const Matrix& actions) {
  return q_value(e, states, actions, Head::Q1Target).cwiseMin(q_value(e, states, actions, Head::Q2Target));
}

inline Matrix min_online_q(const CriticEnsemble& e, const Matrix& states, const Matrix& actions) {
  return q_value(e, states, actions, Head::Q1).cwiseMin(q_value(e, states, actions, Head::Q2));
}

// y = r + (1 - done) * gamma * (min_j Qbar_j(s', a') - alpha * log pi(a'|s')).
inline Matrix soft_bellman_target(const Matrix& rewards, const Matrix& dones, const Matrix& min_next_q,
                                  const Matrix& next_logp, double alpha, double gamma) {
  return rewards.array() + (1.0 - dones.array()) * gamma * (min_next_q.array() - alpha * next_logp.array());
}

// Online critics on the tape as constants: gradients reach the actions but
// never the critic parameters.
inline Var min_q_on_tape(const CriticEnsemble& e, Tape& tape, Var states, Var actions) {
  const diff::MlpVars v1 = diff::bind(tape, e.q1, false);
  const diff::MlpVars v2 = diff::bind(tape, e.q2, false);
  Var x = diff::concat_cols({states, actions});
  return diff::minimum(diff::mlp_forward(e.q1, v1, x), diff::mlp_forward(e.q2, v2, x));
}

// mean (Q1 - y)^2 + mean (Q2 - y)^2; y enters as a constant.
struct CriticLossTerms {
  Var loss;
  diff::MlpVars q1;
  diff::MlpVars q2;
};

inline CriticLossTerms critic_loss_on_tape(const CriticEnsemble& e, Tape& tape, const Matrix& states,
                                           const Matrix& actions, const Matrix& targets) {
  CriticLossTerms out;
  out.q1 = diff::bind(tape, e.q1, true);
  out.q2 = diff::bind(tape, e.q2, true);
  Var x = tape.constant(critic_input(states, actions));
  Var y = tape.constant(targets);
  Var r1 = diff::mlp_forward(e.q1, out.q1, x) - y;
  Var r2 = diff::mlp_forward(e.q2, out.q2, x) - y;
  out.loss = diff::mean(diff::square(r1)) + diff::mean(diff::square(r2));
  return out;
}

inline double critic_loss(const CriticEnsemble& e, const Matrix& states, const Matrix& actions, const Matrix& targets) {
  const Matrix r1 = q_value(e, states, actions, Head::Q1) - targets;
  const Matrix r2 = q_value(e, states, actions, Head::Q2) - targets;
  return r1.squaredNorm() / static_cast<double>(r1.rows()) + r2.squaredNorm() / static_cast<double>(r2.rows());
}

inline void polyak(diff::MlpParams& target, const diff::MlpParams& online, double tau) {
  for (std::size_t i = 0; i < target.layers.size(); ++i) {
    target.layers[i].weight = (1.0 - tau) * target.layers[i].weight + tau * online.layers[i].weight;
    target.layers[i].bias = (1.0 - tau) * target.layers[i].bias + tau * online.layers[i].bias;
  }
}

inline void soft_update(CriticEnsemble& e) {
  polyak(e.q1_target, e.q1, e.tau_polyak);
  polyak(e.q2_target, e.q2, e.tau_polyak);
}

struct CriticUpdateStats {
  double loss = 0.0;
  double grad_norm = 0.0;
};

// One Adam step on both online critics against fixed targets.
inline CriticUpdateStats update_critics(CriticEnsemble& e, const Matrix& states, const Matrix& actions,
                                        const Matrix& targets, double lr, double clip_norm) {
  Tape tape;
  CriticLossTerms terms = critic_loss_on_tape(e, tape, states, actions, targets);
  const double loss = terms.loss.value()(0, 0);
  if (!std::isfinite(loss)) throw TrainingFault("critic: non-finite loss");
  tape.backward(terms.loss);
  std::vector<Matrix> g1 = diff::gradients(terms.q1);
  std::vector<Matrix> g2 = diff::gradients(terms.q2);
  CriticUpdateStats s;
  s.loss = loss;
  s.grad_norm = diff::clip_global_norm({&g1, &g2}, clip_norm);
  diff::adam_step(e.q1, g1, lr);
  diff::adam_step(e.q2, g2, lr);
  return s;
}

}  // namespace trfp::critic
