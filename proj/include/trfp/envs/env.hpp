#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <utility>

#include "trfp/error.hpp"
#include "trfp/rng.hpp"

namespace trfp::envs {

using Vector = Eigen::VectorXd;

struct EnvState {
  Vector observation;
  int step_index = 0;
  bool done = false;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
  // True when the episode ended by reaching a terminal condition rather than
  // by running out of steps. Only this flag cuts the bootstrap.
  bool terminal = false;
  // Multigoal: index of the goal whose radius ended the episode, else -1.
  int goal_index = -1;
};

struct ActionBounds {
  Vector low;
  Vector high;
};

// Common contract for the built-in tasks. An instance is single-threaded and
// owns its episode state; clone() gives an independent copy for parallel use.
class Env {
 public:
  virtual ~Env() = default;

  virtual std::string name() const = 0;
  virtual int observation_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int max_steps() const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;

  ActionBounds action_bounds() const {
    return {Vector::Constant(action_dim(), -1.0), Vector::Constant(action_dim(), 1.0)};
  }

  EnvState reset(Rng& rng) {
    reset_physics(rng);
    state_ = EnvState{observe(), 0, false};
    return state_;
  }

  // Actions outside the bounds are clamped; the executed action is what the
  // dynamics and reward see.
  StepResult step(const Vector& action) {
    if (state_.done) throw UsageError(name() + ": step() called after episode end; reset() first");
    if (action.size() != action_dim()) {
      throw ConfigError(name() + ": action has width " + std::to_string(action.size()) + ", expected " +
                        std::to_string(action_dim()));
    }
    const Vector a = clamp_action(action);
    StepResult r = advance(a);
    state_.step_index += 1;
    if (state_.step_index >= max_steps()) r.done = true;
    if (r.terminal) r.done = true;
    state_.observation = observe();
    state_.done = r.done;
    r.state = state_;
    return r;
  }

  const EnvState& state() const { return state_; }

  Vector clamp_action(const Vector& a) const { return a.cwiseMax(-1.0).cwiseMin(1.0); }

 protected:
  virtual void reset_physics(Rng& rng) = 0;
  // Applies the (already clamped) action; fills reward/terminal/goal_index.
  virtual StepResult advance(const Vector& action) = 0;
  virtual Vector observe() const = 0;

  // For subclasses that let tests place the system in a given configuration.
  void restart_episode() { state_ = EnvState{observe(), 0, false}; }

 private:
  EnvState state_;
};

}  // namespace trfp::envs
