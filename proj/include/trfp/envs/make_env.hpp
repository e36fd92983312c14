#pragma once

#include <memory>
#include <string>

#include "trfp/envs/bandit.hpp"
#include "trfp/envs/multigoal.hpp"
#include "trfp/envs/pendulum.hpp"
#include "trfp/envs/reacher.hpp"

namespace trfp::envs {

inline std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "multigoal") return std::make_unique<MultigoalEnv>();
  if (name == "pendulum") return std::make_unique<PendulumEnv>();
  if (name == "reacher") return std::make_unique<ReacherEnv>();
  if (name == "bandit") return std::make_unique<BanditEnv>();
  throw ConfigError("unknown environment '" + name + "' (expected multigoal|pendulum|reacher|bandit)");
}

}  // namespace trfp::envs
