#pragma once

#include <algorithm>
#include <cmath>
#include <memory>

#include "trfp/envs/env.hpp"

namespace trfp::envs {

struct PendulumSpec {
  double gravity = 10.0;
  double mass = 1.0;
  double length = 1.0;
  double max_torque = 2.0;
  double max_speed = 8.0;
  double dt = 0.05;
  int max_steps = 200;
};

inline double wrap_angle(double x) { return std::remainder(x, 2.0 * M_PI); }

// Torque-limited swing-up. theta = 0 is upright; observation is
// (cos theta, sin theta, theta_dot). Explicit Euler on
//   theta_ddot = 3g/(2l) sin(theta) + 3/(m l^2) u.
class PendulumEnv final : public Env {
 public:
  explicit PendulumEnv(PendulumSpec spec = {}) : spec_(spec) {}

  std::string name() const override { return "pendulum"; }
  int observation_dim() const override { return 3; }
  int action_dim() const override { return 1; }
  int max_steps() const override { return spec_.max_steps; }
  std::unique_ptr<Env> clone() const override { return std::make_unique<PendulumEnv>(*this); }

  const PendulumSpec& spec() const { return spec_; }
  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }

  EnvState set_state(double theta, double theta_dot) {
    theta_ = theta;
    theta_dot_ = theta_dot;
    restart_episode();
    return state();
  }

  double angular_acceleration(double theta, double torque) const {
    return 3.0 * spec_.gravity / (2.0 * spec_.length) * std::sin(theta) +
           3.0 / (spec_.mass * spec_.length * spec_.length) * torque;
  }

 protected:
  void reset_physics(Rng& rng) override {
    std::uniform_real_distribution<double> angle(-M_PI, M_PI);
    std::uniform_real_distribution<double> speed(-1.0, 1.0);
    theta_ = angle(rng);
    theta_dot_ = speed(rng);
  }

  StepResult advance(const Vector& a) override {
    const double torque = spec_.max_torque * a(0);
    const double th = wrap_angle(theta_);
    StepResult r;
    r.reward = -(th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * torque * torque);
    const double acc = angular_acceleration(theta_, torque);
    theta_ = theta_ + theta_dot_ * spec_.dt;
    theta_dot_ = std::clamp(theta_dot_ + acc * spec_.dt, -spec_.max_speed, spec_.max_speed);
    return r;
  }

  Vector observe() const override {
    Vector o(3);
    o << std::cos(theta_), std::sin(theta_), theta_dot_;
    return o;
  }

 private:
  PendulumSpec spec_;
  double theta_ = M_PI;
  double theta_dot_ = 0.0;
};

}  // namespace trfp::envs
