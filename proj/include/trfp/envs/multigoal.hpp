#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>

#include "trfp/envs/env.hpp"

namespace trfp::envs {

struct MultigoalSpec {
  double goal_distance = 5.0;
  double goal_radius = 0.5;
  double goal_bonus = 10.0;
  int max_steps = 100;
  double action_scale = 1.0;
  double dt = 0.1;
  double action_cost = 0.05;
  double start_radius = 0.5;
  double position_limit = 10.0;

  // (+g,0), (0,+g), (-g,0), (0,-g)
  std::array<Eigen::Vector2d, 4> goals() const {
    return {Eigen::Vector2d(goal_distance, 0.0), Eigen::Vector2d(0.0, goal_distance),
            Eigen::Vector2d(-goal_distance, 0.0), Eigen::Vector2d(0.0, -goal_distance)};
  }
};

// Point mass in the plane with four equally rewarded goals placed
// symmetrically around the start region. Observation is the position.
class MultigoalEnv final : public Env {
 public:
  explicit MultigoalEnv(MultigoalSpec spec = {}) : spec_(spec), goals_(spec.goals()) {}

  std::string name() const override { return "multigoal"; }
  int observation_dim() const override { return 2; }
  int action_dim() const override { return 2; }
  int max_steps() const override { return spec_.max_steps; }
  std::unique_ptr<Env> clone() const override { return std::make_unique<MultigoalEnv>(*this); }

  const MultigoalSpec& spec() const { return spec_; }
  const Eigen::Vector2d& position() const { return position_; }

  // Places the mass and starts a fresh episode from there.
  EnvState set_position(const Eigen::Vector2d& p) {
    position_ = p;
    restart_episode();
    return state();
  }

  // Reward for arriving at `next` under clamped action `a`, bonus excluded.
  double shaping_reward(const Eigen::Vector2d& next, const Vector& a) const {
    return -nearest_goal_distance(next) / spec_.goal_distance - spec_.action_cost * a.squaredNorm();
  }

  double nearest_goal_distance(const Eigen::Vector2d& p) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : goals_) best = std::min(best, (p - g).norm());
    return best;
  }

  int goal_reached(const Eigen::Vector2d& p) const {
    for (int i = 0; i < 4; ++i) {
      if ((p - goals_[static_cast<std::size_t>(i)]).norm() <= spec_.goal_radius) return i;
    }
    return -1;
  }

 protected:
  void reset_physics(Rng& rng) override {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double r = spec_.start_radius * std::sqrt(u01(rng));
    const double phi = 2.0 * M_PI * u01(rng);
    position_ = Eigen::Vector2d(r * std::cos(phi), r * std::sin(phi));
  }

  StepResult advance(const Vector& a) override {
    Eigen::Vector2d next = position_ + spec_.action_scale * spec_.dt * a.head<2>();
    next = next.cwiseMax(-spec_.position_limit).cwiseMin(spec_.position_limit);
    StepResult r;
    r.reward = shaping_reward(next, a);
    r.goal_index = goal_reached(next);
    if (r.goal_index >= 0) {
      r.reward += spec_.goal_bonus;
      r.terminal = true;
    }
    position_ = next;
    return r;
  }

  Vector observe() const override { return position_; }

 private:
  MultigoalSpec spec_;
  std::array<Eigen::Vector2d, 4> goals_;
  Eigen::Vector2d position_ = Eigen::Vector2d::Zero();
};

}  // namespace trfp::envs
