#pragma once

#include <cmath>
#include <string>

#include "trfp/diffcore/adam.hpp"
#include "trfp/diffcore/checkpoint.hpp"
#include "trfp/diffcore/tape.hpp"

namespace trfp {

// L_alpha = mean[ -exp(log_alpha) * (logp + target_entropy) ], logp detached.
inline double temperature_loss(double log_alpha, const diff::Matrix& logp, double target_entropy) {
  return -std::exp(log_alpha) * (logp.array() + target_entropy).mean();
}

// d L_alpha / d log_alpha
inline double temperature_loss_gradient(double log_alpha, const diff::Matrix& logp, double target_entropy) {
  return temperature_loss(log_alpha, logp, target_entropy);
}

struct Temperature {
  double log_alpha = 0.0;
  double target_entropy = -1.0;
  diff::AdamState adam;

  static Temperature make(double alpha, double target_entropy) {
    return Temperature{std::log(alpha), target_entropy, {}};
  }

  double alpha() const { return std::exp(log_alpha); }

  // One Adam step on log_alpha; returns the gradient that was applied.
  double update(const diff::Matrix& logp, double lr) {
    diff::Tape tape;
    diff::Var la = tape.variable(diff::Matrix::Constant(1, 1, log_alpha));
    diff::Var bracket = tape.constant((logp.array() + target_entropy).matrix());
    diff::Var loss = -diff::mean(diff::scale_by(diff::exp(la), bracket));
    tape.backward(loss);
    const diff::Matrix g = la.adjoint();
    diff::Matrix param = diff::Matrix::Constant(1, 1, log_alpha);
    diff::adam_update({&param}, {g}, adam, lr);
    log_alpha = param(0, 0);
    return g(0, 0);
  }

  void put(diff::Checkpoint& ckpt, const std::string& prefix) const {
    ckpt[prefix + ".log_alpha"] = diff::Tensor::scalar(log_alpha);
    ckpt[prefix + ".target_entropy"] = diff::Tensor::scalar(target_entropy);
    ckpt[prefix + ".adam_step"] = diff::Tensor::scalar(static_cast<double>(adam.step));
    if (!adam.first_moment.empty()) {
      ckpt[prefix + ".log_alpha.adam_m"] = diff::Tensor::from_matrix(adam.first_moment[0]);
      ckpt[prefix + ".log_alpha.adam_v"] = diff::Tensor::from_matrix(adam.second_moment[0]);
    }
  }

  static Temperature get(const diff::Checkpoint& ckpt, const std::string& prefix) {
    Temperature t;
    t.log_alpha = diff::require(ckpt, prefix + ".log_alpha").to_scalar();
    t.target_entropy = diff::require(ckpt, prefix + ".target_entropy").to_scalar();
    t.adam.step = static_cast<std::int64_t>(diff::require(ckpt, prefix + ".adam_step").to_scalar());
    if (ckpt.contains(prefix + ".log_alpha.adam_m")) {
      t.adam.first_moment.push_back(diff::require(ckpt, prefix + ".log_alpha.adam_m").to_matrix());
      t.adam.second_moment.push_back(diff::require(ckpt, prefix + ".log_alpha.adam_v").to_matrix());
    }
    return t;
  }
};

}  // namespace trfp
