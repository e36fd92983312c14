#pragma once

#include <cstdint>
#include <random>

#include "trfp/diffcore/tape.hpp"

namespace trfp {

using Rng = std::mt19937_64;

inline diff::Matrix standard_normal(Rng& rng, diff::Index rows, diff::Index cols) {
  std::normal_distribution<double> n01(0.0, 1.0);
  diff::Matrix out(rows, cols);
  for (diff::Index i = 0; i < out.size(); ++i) out.data()[i] = n01(rng);
  return out;
}

inline diff::Matrix uniform(Rng& rng, diff::Index rows, diff::Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  diff::Matrix out(rows, cols);
  for (diff::Index i = 0; i < out.size(); ++i) out.data()[i] = u(rng);
  return out;
}

// Child stream for a numbered sub-task (episode, worker); independent of the
// order in which sub-tasks are run.
inline Rng derive_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x7472u};
  return Rng(seq);
}

}  // namespace trfp
