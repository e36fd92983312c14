#pragma once

// Flow policies with closed-form fields, expressed as single-layer (purely
// affine) networks so they go through the regular code paths and the
// checkpoint format.

#include "trfp/flow_policy/flow_policy.hpp"

namespace trfp::flow {

inline diff::MlpParams affine_layer(Index in, Index out, const Matrix& weight, const Matrix& bias) {
  diff::MlpParams m;
  m.layers.push_back(diff::DenseLayer{weight, bias, diff::Activation::Identity});
  if (m.input_width() != in || m.output_width() != out) throw ConfigError("affine_layer: shape mismatch");
  return m;
}

// sigma(s, u, t) == sigma0 for every input.
inline diff::MlpParams constant_sigma_head(int obs_dim, int action_dim, double sigma0, const SigmaBounds& b) {
  const Index in = obs_dim + action_dim + 1;
  return affine_layer(in, action_dim, Matrix::Zero(in, action_dim),
                      Matrix::Constant(1, action_dim, sigma_logit(sigma0, b)));
}

// v(s, u, t) = c.
inline FlowPolicyParams constant_field(int obs_dim, const Eigen::RowVectorXd& c, double sigma0 = 0.1,
                                       SigmaBounds b = {}) {
  FlowPolicyParams p;
  p.obs_dim = obs_dim;
  p.action_dim = static_cast<int>(c.size());
  p.bounds = b;
  const Index in = p.input_width();
  p.velocity = affine_layer(in, p.action_dim, Matrix::Zero(in, p.action_dim), Matrix(c));
  p.sigma_head = constant_sigma_head(obs_dim, p.action_dim, sigma0, b);
  p.validate();
  return p;
}

// v(s, u, t) = A u (row convention: v^T = u^T A^T).
inline FlowPolicyParams linear_field(int obs_dim, const Matrix& A, double sigma0 = 0.1, SigmaBounds b = {}) {
  if (A.rows() != A.cols()) throw ConfigError("linear_field: A must be square");
  FlowPolicyParams p;
  p.obs_dim = obs_dim;
  p.action_dim = static_cast<int>(A.rows());
  p.bounds = b;
  const Index in = p.input_width();
  Matrix w = Matrix::Zero(in, p.action_dim);
  w.block(obs_dim, 0, p.action_dim, p.action_dim) = A.transpose();
  p.velocity = affine_layer(in, p.action_dim, w, Matrix::Zero(1, p.action_dim));
  p.sigma_head = constant_sigma_head(obs_dim, p.action_dim, sigma0, b);
  p.validate();
  return p;
}

inline FlowPolicyParams zero_field(int obs_dim, int action_dim, double sigma0 = 0.1, SigmaBounds b = {}) {
  return constant_field(obs_dim, Eigen::RowVectorXd::Zero(action_dim), sigma0, b);
}

}  // namespace trfp::flow
