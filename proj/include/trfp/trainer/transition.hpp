#pragma once

#include <vector>

#include "trfp/diffcore/tape.hpp"
#include "trfp/envs/env.hpp"

namespace trfp {

// One environment step; `action` is the executed (clamped) action and `done`
// marks a true terminal state (time-limit cut-offs are stored as not done).
struct Transition {
  envs::Vector state;
  envs::Vector action;
  double reward = 0.0;
  envs::Vector next_state;
  bool done = false;
};

// Row-stacked transitions.
struct TransitionBatch {
  diff::Matrix states;
  diff::Matrix actions;
  diff::Matrix rewards;  // B x 1
  diff::Matrix next_states;
  diff::Matrix dones;    // B x 1, 0 or 1

  diff::Index size() const { return states.rows(); }
};

inline TransitionBatch stack(const std::vector<Transition>& ts) {
  TransitionBatch b;
  if (ts.empty()) return b;
  const auto n = static_cast<diff::Index>(ts.size());
  const auto ds = ts.front().state.size();
  const auto da = ts.front().action.size();
  b.states.resize(n, ds);
  b.actions.resize(n, da);
  b.rewards.resize(n, 1);
  b.next_states.resize(n, ds);
  b.dones.resize(n, 1);
  for (diff::Index i = 0; i < n; ++i) {
    const Transition& t = ts[static_cast<std::size_t>(i)];
    b.states.row(i) = t.state.transpose();
    b.actions.row(i) = t.action.transpose();
    b.rewards(i, 0) = t.reward;
    b.next_states.row(i) = t.next_state.transpose();
    b.dones(i, 0) = t.done ? 1.0 : 0.0;
  }
  return b;
}

}  // namespace trfp
