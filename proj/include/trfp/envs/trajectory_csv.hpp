#pragma once

#include <iomanip>
#include <ostream>
#include <string>

#include "trfp/envs/env.hpp"

namespace trfp::envs {

// Rows of `episode,step,obs_0..,action_0..,reward,done`; obs is the state the
// action was taken in.
class TrajectoryCsvWriter {
 public:
  TrajectoryCsvWriter(std::ostream& out, int obs_dim, int action_dim)
      : out_(out), obs_dim_(obs_dim), action_dim_(action_dim) {
    out_ << "episode,step";
    for (int i = 0; i < obs_dim_; ++i) out_ << ",obs_" << i;
    for (int i = 0; i < action_dim_; ++i) out_ << ",action_" << i;
    out_ << ",reward,done\n";
    out_ << std::setprecision(17);
  }

  void write(int episode, int step, const Vector& obs, const Vector& action, double reward, bool done) {
    if (obs.size() != obs_dim_ || action.size() != action_dim_) {
      throw ConfigError("trajectory csv: row width does not match header");
    }
    out_ << episode << ',' << step;
    for (int i = 0; i < obs_dim_; ++i) out_ << ',' << obs(i);
    for (int i = 0; i < action_dim_; ++i) out_ << ',' << action(i);
    out_ << ',' << reward << ',' << (done ? 1 : 0) << '\n';
  }

 private:
  std::ostream& out_;
  int obs_dim_;
  int action_dim_;
};

}  // namespace trfp::envs
