#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "trfp/error.hpp"
#include "trfp/rng.hpp"
#include "trfp/trainer/transition.hpp"

namespace trfp {

// Fixed-capacity ring of transitions; once full, each push overwrites the
// oldest entry.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
  }

  void push(Transition t) {
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[cursor_] = std::move(t);
    }
    cursor_ = (cursor_ + 1) % capacity_;
    ++pushes_;
  }

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t total_pushes() const { return pushes_; }
  const Transition& at(std::size_t i) const { return storage_.at(i); }

  // Indices drawn uniformly without replacement (Floyd's algorithm), in
  // generation order.
  std::vector<std::size_t> sample_indices(Rng& rng, std::size_t batch) const {
    if (batch == 0) throw UsageError("replay buffer: batch size must be positive");
    if (storage_.size() < batch) {
      throw UsageError("replay buffer: cannot sample " + std::to_string(batch) + " from " +
                       std::to_string(storage_.size()) + " stored transitions");
    }
    const std::size_t n = storage_.size();
    std::unordered_set<std::size_t> chosen;
    std::vector<std::size_t> out;
    out.reserve(batch);
    for (std::size_t j = n - batch; j < n; ++j) {
      std::uniform_int_distribution<std::size_t> pick(0, j);
      std::size_t t = pick(rng);
      if (chosen.contains(t)) t = j;
      chosen.insert(t);
      out.push_back(t);
    }
    return out;
  }

  TransitionBatch sample(Rng& rng, std::size_t batch) const {
    std::vector<Transition> picked;
    picked.reserve(batch);
    for (std::size_t i : sample_indices(rng, batch)) picked.push_back(storage_[i]);
    return stack(picked);
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> storage_;
  std::size_t cursor_ = 0;
  std::size_t pushes_ = 0;
};

}  // namespace trfp
