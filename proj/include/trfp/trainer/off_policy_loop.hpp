#pragma once

// Environment interaction loop shared by the flow agent and the Gaussian
// baseline: uniform random warm-up, then agent actions, one transition per
// step into replay, `updates_per_step` update blocks per step once warm-up is
// over and a batch is available.

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "trfp/envs/env.hpp"
#include "trfp/error.hpp"
#include "trfp/rng.hpp"
#include "trfp/trainer/config.hpp"
#include "trfp/trainer/metrics.hpp"
#include "trfp/trainer/replay_buffer.hpp"

namespace trfp {

template <class Agent>
class OffPolicyTrainer {
 public:
  OffPolicyTrainer(Agent agent, std::unique_ptr<envs::Env> env, const TrainConfig& cfg)
      : agent_(std::move(agent)),
        env_(std::move(env)),
        cfg_(cfg),
        buffer_(static_cast<std::size_t>(cfg.buffer)),
        env_rng_(derive_stream(cfg.seed, 1)),
        act_rng_(derive_stream(cfg.seed, 2)),
        update_rng_(derive_stream(cfg.seed, 3)) {
    state_ = env_->reset(env_rng_).observation;
  }

  // One environment step followed by the configured updates.
  void step() {
    envs::Vector action;
    if (steps_ < cfg_.warmup_random_steps) {
      action = uniform(act_rng_, env_->action_dim(), 1, -1.0, 1.0);
    } else {
      action = explore(agent_, state_, act_rng_);
    }
    if (!action.allFinite()) throw TrainingFault("non-finite action at step " + std::to_string(steps_));
    const envs::Vector executed = env_->clamp_action(action);
    const envs::StepResult r = env_->step(executed);
    buffer_.push(Transition{state_, executed, r.reward, r.state.observation, r.terminal});
    episode_return_ += r.reward;
    state_ = r.state.observation;
    if (r.done) {
      episode_returns_.push_back(episode_return_);
      episode_return_ = 0.0;
      state_ = env_->reset(env_rng_).observation;
    }
    ++steps_;
    if (steps_ > cfg_.warmup_random_steps && buffer_.size() >= static_cast<std::size_t>(cfg_.batch)) {
      for (int u = 0; u < cfg_.updates_per_step; ++u) {
        const TransitionBatch batch = buffer_.sample(update_rng_, static_cast<std::size_t>(cfg_.batch));
        try {
          last_ = train_step(agent_, batch, update_rng_);
        } catch (const TrainingFault& e) {
          throw TrainingFault(std::string(e.what()) + " (environment step " + std::to_string(steps_) + ")");
        }
        ++updates_;
        surrogate_history_.push_back(last_.mean_surrogate_logp);
        sigma_history_.push_back(last_.mean_sigma);
      }
    }
  }

  void run(std::int64_t n, const std::function<void(const OffPolicyTrainer&)>& after_step = {}) {
    for (std::int64_t i = 0; i < n; ++i) {
      step();
      if (after_step) after_step(*this);
    }
  }

  const Agent& agent() const { return agent_; }
  Agent& agent() { return agent_; }
  const envs::Env& env() const { return *env_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::int64_t steps() const { return steps_; }
  std::int64_t updates() const { return updates_; }
  const UpdateMetrics& last_metrics() const { return last_; }
  const std::vector<double>& episode_returns() const { return episode_returns_; }
  // mean surrogate log-likelihood of every update block, in order
  const std::vector<double>& surrogate_history() const { return surrogate_history_; }
  const std::vector<double>& sigma_history() const { return sigma_history_; }

  double recent_return(std::size_t window = 10) const {
    if (episode_returns_.empty()) return 0.0;
    const std::size_t n = std::min(window, episode_returns_.size());
    return std::accumulate(episode_returns_.end() - static_cast<std::ptrdiff_t>(n), episode_returns_.end(), 0.0) /
           static_cast<double>(n);
  }

 private:
  Agent agent_;
  std::unique_ptr<envs::Env> env_;
  TrainConfig cfg_;
  ReplayBuffer buffer_;
  Rng env_rng_;
  Rng act_rng_;
  Rng update_rng_;
  envs::Vector state_;
  std::int64_t steps_ = 0;
  std::int64_t updates_ = 0;
  double episode_return_ = 0.0;
  std::vector<double> episode_returns_;
  UpdateMetrics last_;
  std::vector<double> surrogate_history_;
  std::vector<double> sigma_history_;
};

}  // namespace trfp
