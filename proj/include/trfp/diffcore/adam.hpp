#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "trfp/diffcore/tape.hpp"
#include "trfp/error.hpp"

namespace trfp::diff {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moments, one pair per parameter tensor, plus the step count.
struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
};

inline bool all_finite(const std::vector<Matrix>& grads) {
  for (const Matrix& g : grads) {
    if (!g.allFinite()) return false;
  }
  return true;
}

// In-place Adam update of `params` from `grads` (same order and shapes).
inline void adam_update(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
                        AdamState& state, double lr, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size()) throw ConfigError("adam: parameter/gradient count mismatch");
  if (!all_finite(grads)) throw TrainingFault("adam: non-finite gradient");
  if (state.first_moment.empty()) {
    for (const Matrix* p : params) {
      state.first_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ConfigError("adam: state size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols() ||
        state.first_moment[i].rows() != params[i]->rows() ||
        state.first_moment[i].cols() != params[i]->cols()) {
      throw ConfigError("adam: tensor " + std::to_string(i) + " is not shape-congruent");
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grads[i];
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grads[i].cwiseAbs2();
    params[i]->array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
}

inline double global_norm(const std::vector<const std::vector<Matrix>*>& groups) {
  double sq = 0.0;
  for (const auto* g : groups) {
    for (const Matrix& m : *g) sq += m.squaredNorm();
  }
  return std::sqrt(sq);
}

// Rescales every gradient so the joint L2 norm is at most max_norm. Returns
// the norm before clipping.
inline double clip_global_norm(const std::vector<std::vector<Matrix>*>& groups, double max_norm) {
  double sq = 0.0;
  for (const auto* g : groups) {
    for (const Matrix& m : *g) sq += m.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* g : groups) {
      for (Matrix& m : *g) m *= s;
    }
  }
  return norm;
}

}  // namespace trfp::diff
