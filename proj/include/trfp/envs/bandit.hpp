#pragma once

#include <algorithm>
#include <cmath>
#include <memory>

#include "trfp/diffcore/tape.hpp"
#include "trfp/envs/env.hpp"

namespace trfp::envs {

// Q(a) = temperature * log( sum_i exp(-|a - m_i|^2 / (2 width^2)) ), so the
// Boltzmann density exp(Q / temperature) is an equal-weight mixture of
// isotropic Gaussians with standard deviation `width` at the modes.
struct BimodalQ {
  Eigen::Vector2d mode_a{-0.5, 0.0};
  Eigen::Vector2d mode_b{0.5, 0.0};
  double width = 0.2;
  double temperature = 0.1;

  double value(const Eigen::Vector2d& a) const {
    const double za = -(a - mode_a).squaredNorm() / (2.0 * width * width);
    const double zb = -(a - mode_b).squaredNorm() / (2.0 * width * width);
    const double m = std::max(za, zb);
    return temperature * (m + std::log(std::exp(za - m) + std::exp(zb - m)));
  }

  Eigen::Vector2d gradient(const Eigen::Vector2d& a) const {
    const double za = -(a - mode_a).squaredNorm() / (2.0 * width * width);
    const double zb = -(a - mode_b).squaredNorm() / (2.0 * width * width);
    const double m = std::max(za, zb);
    const double wa = std::exp(za - m);
    const double wb = std::exp(zb - m);
    const double pa = wa / (wa + wb);
    const double pb = wb / (wa + wb);
    return temperature * (pa * (mode_a - a) + pb * (mode_b - a)) / (width * width);
  }

  // Batch x 2 actions -> batch x 1 values, recorded on the actions' tape.
  diff::Var on_tape(diff::Var actions) const {
    diff::Matrix out(actions.rows(), 1);
    for (diff::Index i = 0; i < actions.rows(); ++i) {
      out(i, 0) = value(actions.value().row(i).transpose());
    }
    const BimodalQ self = *this;
    return actions.tape()->record(std::move(out), {actions},
                                  [actions, self](diff::Tape& t, const diff::Matrix& g) {
                                    diff::Matrix ga(actions.rows(), 2);
                                    for (diff::Index i = 0; i < actions.rows(); ++i) {
                                      ga.row(i) = g(i, 0) *
                                                  self.gradient(actions.value().row(i).transpose()).transpose();
                                    }
                                    t.accumulate(actions, ga);
                                  });
  }
};

// One-state, one-step task whose reward is a fixed bimodal function of the
// action. Observation is the constant scalar 0.
class BanditEnv final : public Env {
 public:
  explicit BanditEnv(BimodalQ q = {}) : q_(q) {}

  std::string name() const override { return "bandit"; }
  int observation_dim() const override { return 1; }
  int action_dim() const override { return 2; }
  int max_steps() const override { return 1; }
  std::unique_ptr<Env> clone() const override { return std::make_unique<BanditEnv>(*this); }

  const BimodalQ& q() const { return q_; }

 protected:
  void reset_physics(Rng&) override {}
  StepResult advance(const Vector& a) override {
    StepResult r;
    r.reward = q_.value(a.head<2>());
    r.terminal = true;
    return r;
  }
  Vector observe() const override { return Vector::Zero(1); }

 private:
  BimodalQ q_;
};

}  // namespace trfp::envs
