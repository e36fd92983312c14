#pragma once

#include <cstdint>
#include <ostream>
#include <string>

#include <json.hpp>

namespace trfp {

struct UpdateMetrics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double truncated_loss = 0.0;
  double fm_loss = 0.0;
  double alpha = 0.0;
  double mean_surrogate_logp = 0.0;
  double mean_sigma = 0.0;
  double grad_norm_critic = 0.0;
  double grad_norm_actor = 0.0;
  double grad_norm_alpha = 0.0;
};

inline nlohmann::ordered_json to_json(const UpdateMetrics& m) {
  nlohmann::ordered_json j;
  j["critic_loss"] = m.critic_loss;
  j["actor_loss"] = m.actor_loss;
  j["truncated_loss"] = m.truncated_loss;
  j["fm_loss"] = m.fm_loss;
  j["alpha"] = m.alpha;
  j["mean_surrogate_logp"] = m.mean_surrogate_logp;
  j["mean_sigma"] = m.mean_sigma;
  j["grad_norms"] = {{"critic", m.grad_norm_critic}, {"actor", m.grad_norm_actor}, {"alpha", m.grad_norm_alpha}};
  return j;
}

// One JSON object per line.
class JsonlWriter {
 public:
  explicit JsonlWriter(std::ostream& out) : out_(out) {}
  void write(const nlohmann::ordered_json& j) { out_ << j.dump() << '\n'; }

 private:
  std::ostream& out_;
};

}  // namespace trfp
