#pragma once

#include <cmath>
#include <memory>

#include "trfp/envs/env.hpp"

namespace trfp::envs {

struct ReacherSpec {
  double link1 = 0.1;
  double link2 = 0.11;
  double joint_speed = 2.0;  // rad/s at |a| = 1
  double dt = 0.1;
  double target_radius = 0.2;
  double action_cost = 0.01;
  int max_steps = 50;
};

// Planar two-link arm driven by joint velocities. Observation:
// (cos q1, cos q2, sin q1, sin q2, target_x, target_y, tip_x - target_x, tip_y - target_y).
class ReacherEnv final : public Env {
 public:
  explicit ReacherEnv(ReacherSpec spec = {}) : spec_(spec) {}

  std::string name() const override { return "reacher"; }
  int observation_dim() const override { return 8; }
  int action_dim() const override { return 2; }
  int max_steps() const override { return spec_.max_steps; }
  std::unique_ptr<Env> clone() const override { return std::make_unique<ReacherEnv>(*this); }

  Eigen::Vector2d fingertip() const {
    return {spec_.link1 * std::cos(q1_) + spec_.link2 * std::cos(q1_ + q2_),
            spec_.link1 * std::sin(q1_) + spec_.link2 * std::sin(q1_ + q2_)};
  }

  EnvState set_state(double q1, double q2, const Eigen::Vector2d& target) {
    q1_ = q1;
    q2_ = q2;
    target_ = target;
    restart_episode();
    return state();
  }

 protected:
  void reset_physics(Rng& rng) override {
    std::uniform_real_distribution<double> joint(-0.1, 0.1);
    std::uniform_real_distribution<double> box(-spec_.target_radius, spec_.target_radius);
    q1_ = joint(rng);
    q2_ = joint(rng);
    do {
      target_ = Eigen::Vector2d(box(rng), box(rng));
    } while (target_.norm() >= spec_.target_radius);
  }

  StepResult advance(const Vector& a) override {
    q1_ += spec_.joint_speed * spec_.dt * a(0);
    q2_ += spec_.joint_speed * spec_.dt * a(1);
    StepResult r;
    r.reward = -(fingertip() - target_).norm() - spec_.action_cost * a.squaredNorm();
    return r;
  }

  Vector observe() const override {
    const Eigen::Vector2d tip = fingertip();
    Vector o(8);
    o << std::cos(q1_), std::cos(q2_), std::sin(q1_), std::sin(q2_), target_.x(), target_.y(),
        tip.x() - target_.x(), tip.y() - target_.y();
    return o;
  }

 private:
  ReacherSpec spec_;
  double q1_ = 0.0;
  double q2_ = 0.0;
  Eigen::Vector2d target_ = Eigen::Vector2d::Zero();
};

}  // namespace trfp::envs
