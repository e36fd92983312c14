#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "trfp/diffcore/mlp.hpp"
#include "trfp/flow_policy/diagnostics.hpp"
#include "trfp/flow_policy/flow_policy.hpp"
#include "trfp/flow_policy/stub_fields.hpp"

using namespace trfp;
using namespace trfp::flow;

namespace {

const double kLn2Pi = std::log(2.0 * std::numbers::pi);

FlowPolicyParams random_policy(int obs_dim, int action_dim, std::uint64_t seed, double out_scale = 0.5) {
  Rng rng(seed);
  FlowPolicyInit init;
  init.hidden = {16, 16};
  init.sigma_hidden = {8};
  init.output_weight_scale = out_scale;
  FlowPolicyParams p = make_flow_policy(obs_dim, action_dim, rng, init);
  // make the noise head depend on its inputs too
  for (auto& l : p.sigma_head.layers) l.weight = uniform(rng, l.weight.rows(), l.weight.cols(), -1.0, 1.0);
  return p;
}

// log N(x; mean, diag(sig^2)) per row from the raw point, not from eps.
Matrix gaussian_logpdf(const Matrix& x, const Matrix& mean, const Matrix& sig) {
  Matrix out(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      const double z = (x(i, j) - mean(i, j)) / sig(i, j);
      s += -0.5 * kLn2Pi - std::log(sig(i, j)) - 0.5 * z * z;
    }
    out(i, 0) = s;
  }
  return out;
}

double median(Matrix m) {
  std::sort(m.data(), m.data() + m.size());
  return m.data()[m.size() / 2];
}

}  // namespace

// ---------------------------------------------------------------------------
// Heun prefix step

TEST(HeunStep, ConstantFieldIsExact) {
  Eigen::RowVectorXd c(2);
  c << 0.3, -1.2;
  const FlowPolicyParams p = constant_field(1, c);
  const Matrix s = Matrix::Zero(3, 1);
  Rng rng(1);
  const Matrix u = standard_normal(rng, 3, 2);
  const Matrix next = heun_prefix_step(p, s, u, 0.0, 0.25, 0.75);
  for (Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(next(i, 0), u(i, 0) + 0.3 * 0.25, 1e-15);
    EXPECT_NEAR(next(i, 1), u(i, 1) - 1.2 * 0.25, 1e-15);
  }
}

TEST(HeunStep, ZeroFieldKeepsPoint) {
  const FlowPolicyParams p = zero_field(2, 3);
  Rng rng(2);
  const Matrix u = standard_normal(rng, 4, 3);
  EXPECT_EQ(heun_prefix_step(p, Matrix::Zero(4, 2), u, 0.25, 0.25, 0.75), u);
}

TEST(HeunStep, LinearFieldMatchesHandFormula) {
  Matrix A(2, 2);
  A << 0.5, -1.0, 2.0, 0.25;
  const FlowPolicyParams p = linear_field(1, A);
  Matrix u(1, 2);
  u << 0.7, -0.4;
  const double dt = 0.25;
  // v1 = A u, u~ = u + dt v1, v2 = A u~, u' = u + dt/2 (v1 + v2)
  const Eigen::Vector2d x = u.row(0).transpose();
  const Eigen::Vector2d v1 = A * x;
  const Eigen::Vector2d v2 = A * (x + dt * v1);
  const Eigen::Vector2d expected = x + 0.5 * dt * (v1 + v2);
  const Matrix next = heun_prefix_step(p, Matrix::Zero(1, 1), u, 0.0, dt, 0.75);
  EXPECT_NEAR(next(0, 0), expected(0), 1e-15);
  EXPECT_NEAR(next(0, 1), expected(1), 1e-15);
}

TEST(HeunStep, RefusesToCrossCutoff) {
  const FlowPolicyParams p = zero_field(1, 1);
  EXPECT_THROW(heun_prefix_step(p, Matrix::Zero(1, 1), Matrix::Zero(1, 1), 0.5, 0.5, 0.75), UsageError);
}

TEST(HeunStep, NanVelocityIsTrainingFault) {
  FlowPolicyParams p = zero_field(1, 1);
  p.velocity.layers[0].bias(0, 0) = std::nan("");
  EXPECT_THROW(heun_prefix_step(p, Matrix::Zero(1, 1), Matrix::Zero(1, 1), 0.0, 0.25, 0.75), TrainingFault);
}

// ---------------------------------------------------------------------------
// SDE tail step

TEST(TailStep, StandardNormalAtOwnSample) {
  const SigmaBounds wide{1e-3, 2.0};
  const FlowPolicyParams p = zero_field(1, 3, 1.0, wide);
  Matrix u(1, 3);
  u << 0.1, 0.2, -0.3;
  Matrix e(1, 3);
  e << 0.5, -1.5, 2.0;
  const TailStep s = sde_tail_step(p, Matrix::Zero(1, 1), u, 0.75, 0.25, e);
  EXPECT_NEAR((s.next - (u + e)).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  EXPECT_NEAR(s.logp(0, 0), -1.5 * kLn2Pi - 0.5 * e.squaredNorm(), 1e-12);
}

TEST(TailStep, ZeroNoiseFollowsMean) {
  Eigen::RowVectorXd c(2);
  c << 1.0, -2.0;
  const FlowPolicyParams p = constant_field(1, c);
  const Matrix u = Matrix::Ones(2, 2);
  const TailStep s = sde_tail_step(p, Matrix::Zero(2, 1), u, 0.75, 0.25, Matrix::Zero(2, 2));
  EXPECT_NEAR(s.next(0, 0), 1.25, 1e-15);
  EXPECT_NEAR(s.next(1, 1), 0.5, 1e-15);
}

TEST(TailStep, ScalarGaussianDensity) {
  const SigmaBounds wide{1e-3, 1.0};
  const FlowPolicyParams p = zero_field(1, 1, 0.5, wide);
  const TailStep s = sde_tail_step(p, Matrix::Zero(1, 1), Matrix::Zero(1, 1), 0.75, 0.25, Matrix::Constant(1, 1, 2.0));
  EXPECT_NEAR(s.sigma(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(s.logp(0, 0), -0.5 * kLn2Pi - std::log(0.5) - 2.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Hybrid sampler and surrogate likelihood

TEST(Surrogate, PriorModeWithoutTail) {
  const FlowPolicyParams p = zero_field(1, 2);
  const LatentChain c = run_hybrid(p, Matrix::Zero(1, 1), Matrix::Zero(1, 2), {}, 4, 0);
  EXPECT_NEAR(surrogate_logp(c)(0, 0), -kLn2Pi, 1e-12);
  EXPECT_NEAR(surrogate_logp(c)(0, 0), -1.837877, 1e-6);
}

TEST(Surrogate, OneTailStepIsAdditive) {
  const SigmaBounds wide{1e-3, 2.0};
  const FlowPolicyParams p = zero_field(1, 3, 1.0, wide);
  Rng rng(3);
  const Matrix u0 = standard_normal(rng, 1, 3);
  const Matrix e = standard_normal(rng, 1, 3);
  const LatentChain c = run_hybrid(p, Matrix::Zero(1, 1), u0, {e}, 1, 1);
  const double prior = -1.5 * kLn2Pi - 0.5 * u0.squaredNorm();
  const double step = -1.5 * kLn2Pi - 0.5 * e.squaredNorm();
  EXPECT_NEAR(surrogate_logp(c)(0, 0), prior + step, 1e-12);
}

TEST(Surrogate, PureSdeChainMatchesGaussianChainDensity) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FlowPolicyParams p = random_policy(3, 2, 100 + seed);
    Rng rng(seed);
    const Matrix s = standard_normal(rng, 6, 3);
    const LatentChain c = sample_hybrid(p, s, rng, 4, 4);
    ASSERT_EQ(c.cutoff(), 0);
    // product of transition densities, evaluated from the visited points
    Matrix ref = gaussian_logpdf(c.u[0], Matrix::Zero(6, 2), Matrix::Ones(6, 2));
    for (int k = 0; k < 4; ++k) {
      const double t = k / 4.0;
      const Matrix mean = c.u[k] + velocity(p, s, c.u[k], t) * 0.25;
      ref += gaussian_logpdf(c.u[k + 1], mean, sigma(p, s, c.u[k], t));
    }
    EXPECT_LT((surrogate_logp(c) - ref).cwiseAbs().maxCoeff(), 1e-8) << "seed " << seed;
  }
}

TEST(Surrogate, ExactForDivergenceFreePrefix) {
  Eigen::RowVectorXd c(2);
  c << 0.4, -0.9;
  FlowPolicyParams p = constant_field(3, c);
  const FlowPolicyParams r = random_policy(3, 2, 7);
  p.sigma_head = r.sigma_head;  // u-dependent noise in the tail
  Rng rng(11);
  const Matrix s = standard_normal(rng, 8, 3);
  const LatentChain chain = sample_hybrid(p, s, rng, 4, 1);
  ASSERT_EQ(chain.cutoff(), 3);
  // u_{k_c} = u_0 + c tau is N(c tau, I); the tail is one Gaussian transition.
  const Matrix shift = c.replicate(8, 1) * chain.tau_cut();
  Matrix ref = gaussian_logpdf(chain.u[3], shift, Matrix::Ones(8, 2));
  const Matrix mean = chain.u[3] + velocity(p, s, chain.u[3], 0.75) * 0.25;
  ref += gaussian_logpdf(chain.u[4], mean, sigma(p, s, chain.u[3], 0.75));
  EXPECT_LT((surrogate_logp(chain) - ref).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Sampler, ChainInvariantHolds) {
  const FlowPolicyParams p = random_policy(2, 3, 5);
  Rng rng(5);
  const Matrix s = standard_normal(rng, 4, 2);
  const LatentChain c = sample_hybrid(p, s, rng, 4, 2);
  ASSERT_EQ(c.u.size(), 5u);
  ASSERT_EQ(c.noises.size(), 2u);
  for (int j = 0; j < 2; ++j) {
    const int k = 2 + j;
    const Matrix lhs = c.u[k + 1] - c.u[k] - c.velocities[j] * 0.25;
    EXPECT_LT((lhs - c.sigmas[j].cwiseProduct(c.noises[j])).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_EQ(c.action(), c.u[4]);
  EXPECT_DOUBLE_EQ(c.tau_cut(), 0.5);
}

TEST(Sampler, SeedReproducible) {
  const FlowPolicyParams p = random_policy(2, 2, 6);
  const Matrix s = Matrix::Ones(3, 2);
  Rng a(42);
  Rng b(42);
  const LatentChain ca = sample_hybrid(p, s, a, 4, 1);
  const LatentChain cb = sample_hybrid(p, s, b, 4, 1);
  EXPECT_EQ(ca.action(), cb.action());
  EXPECT_EQ(surrogate_logp(ca), surrogate_logp(cb));
}

TEST(Sampler, BadShapeIsConfigError) {
  const FlowPolicyParams p = zero_field(1, 1);
  Rng rng(0);
  EXPECT_THROW(sample_hybrid(p, Matrix::Zero(1, 1), rng, 4, 5), ConfigError);
  EXPECT_THROW(sample_hybrid(p, Matrix::Zero(1, 1), rng, 0, 0), ConfigError);
  EXPECT_THROW(run_hybrid(p, Matrix::Zero(1, 1), Matrix::Zero(1, 1), {}, 4, 1), ConfigError);
}

TEST(Sampler, ZeroFieldMarginalCovariance) {
  const double s0 = 0.3;
  const FlowPolicyParams p = zero_field(1, 2, s0);
  Rng rng(2024);
  const Index n = 100000;
  const LatentChain c = sample_hybrid(p, Matrix::Zero(n, 1), rng, 4, 1);
  const Matrix& a = c.action();
  const Eigen::RowVectorXd mu = a.colwise().mean();
  const Matrix centered = a.rowwise() - mu;
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
  const double target = 1.0 + s0 * s0;
  EXPECT_NEAR(cov(0, 0), target, 0.03 * target);
  EXPECT_NEAR(cov(1, 1), target, 0.03 * target);
  EXPECT_NEAR(cov(0, 1), 0.0, 0.03 * target);
}

TEST(Sampler, SigmaStaysInsideBounds) {
  FlowPolicyParams p = random_policy(2, 2, 9);
  Rng rng(9);
  const Matrix s = standard_normal(rng, 200, 2);
  const Matrix u = standard_normal(rng, 200, 2);
  const Matrix sig = sigma(p, s, u, 0.75);
  EXPECT_GT(sig.minCoeff(), p.bounds.min);
  EXPECT_LT(sig.maxCoeff(), p.bounds.max);
  // saturated logistic lands on the closed bounds, never outside them
  for (auto& l : p.sigma_head.layers) l.weight *= 100.0;
  const Matrix hard = sigma(p, s, u, 0.75);
  EXPECT_GE(hard.minCoeff(), p.bounds.min);
  EXPECT_LE(hard.maxCoeff(), p.bounds.max);
  p.pin_sigma = true;
  EXPECT_TRUE((sigma(p, s, u, 0.75).array() == p.bounds.min).all());
}

TEST(Sampler, InitialSigmaNearInit) {
  Rng rng(0);
  FlowPolicyInit init;
  init.hidden = {8};
  init.sigma_hidden = {8};
  const FlowPolicyParams p = make_flow_policy(3, 2, rng, init);
  const Matrix sig = sigma(p, standard_normal(rng, 10, 3), standard_normal(rng, 10, 2), 0.75);
  EXPECT_NEAR(sig.mean(), 0.1, 0.02);
}

// ---------------------------------------------------------------------------
// Deterministic rollout and evaluation sampler

TEST(DeterministicRollout, ZeroAndConstantFields) {
  Rng rng(1);
  const Matrix u0 = standard_normal(rng, 3, 2);
  EXPECT_EQ(deterministic_rollout(zero_field(1, 2), Matrix::Zero(3, 1), u0, 4, 1), u0);
  Eigen::RowVectorXd c(2);
  c << -0.5, 2.0;
  const Matrix end = deterministic_rollout(constant_field(1, c), Matrix::Zero(3, 1), u0, 4, 1);
  EXPECT_LT((end - (u0.rowwise() + c)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(DeterministicRollout, EqualsMeanPathOfSampler) {
  const FlowPolicyParams p = random_policy(2, 2, 12);
  Rng rng(12);
  const Matrix s = standard_normal(rng, 5, 2);
  const Matrix u0 = standard_normal(rng, 5, 2);
  // hand-rolled: three Heun steps then one noise-free tail step
  Matrix u = u0;
  for (int k = 0; k < 3; ++k) u = heun_step(p, s, u, k / 4.0, 0.25);
  u = u + velocity(p, s, u, 0.75) * 0.25;
  EXPECT_LT((deterministic_rollout(p, s, u0, 4, 1) - u).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SampleEval, ConstantFieldIsStepInvariant) {
  Eigen::RowVectorXd c(3);
  c << 0.1, 0.2, -0.7;
  const FlowPolicyParams p = constant_field(2, c);
  Rng rng(4);
  const Matrix u0 = standard_normal(rng, 2, 3);
  for (int steps : {1, 2, 4, 7}) {
    EXPECT_LT((sample_eval(p, Matrix::Zero(2, 2), u0, steps) - (u0.rowwise() + c)).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_EQ(sample_eval(zero_field(2, 3), Matrix::Zero(2, 2), u0, 4), u0);
  EXPECT_THROW(sample_eval(p, Matrix::Zero(2, 2), u0, 0), ConfigError);
}

TEST(SampleEval, PureFunction) {
  const FlowPolicyParams p = random_policy(2, 2, 13);
  const Matrix s = Matrix::Constant(3, 2, 0.5);
  const Matrix u0 = Matrix::Constant(3, 2, -0.2);
  EXPECT_EQ(sample_eval(p, s, u0, 4), sample_eval(p, s, u0, 4));
}

// ---------------------------------------------------------------------------
// Straightening objective

TEST(Straightening, ZeroWhenFieldPointsAtTarget) {
  Eigen::RowVectorXd c(2);
  c << 1.0, -1.0;
  const FlowPolicyParams p = constant_field(1, c);
  const Matrix u0 = Matrix::Zero(2, 2);
  const Matrix tg = u0.rowwise() + c;
  const Matrix t = Matrix::Constant(2, 1, 0.3);
  EXPECT_NEAR(straightening_residual(p, Matrix::Zero(2, 1), u0, tg, t).maxCoeff(), 0.0, 1e-15);
  EXPECT_NEAR(straightening_residual(zero_field(1, 2), Matrix::Zero(2, 1), u0, u0, t).maxCoeff(), 0.0, 0.0);
}

TEST(Straightening, SquaredNormOfTarget) {
  const FlowPolicyParams p = zero_field(1, 2);
  Matrix u0(1, 2);
  u0 << 1.0, 1.0;
  Matrix tg(1, 2);
  tg << 4.0, 5.0;
  EXPECT_NEAR(straightening_residual(p, Matrix::Zero(1, 1), u0, tg, Matrix::Constant(1, 1, 0.5))(0, 0), 25.0, 1e-12);
}

TEST(Straightening, TapeMatchesPlainMean) {
  const FlowPolicyParams p = random_policy(2, 2, 14);
  Rng rng(14);
  const Matrix s = standard_normal(rng, 7, 2);
  const Matrix u0 = standard_normal(rng, 7, 2);
  const Matrix tg = standard_normal(rng, 7, 2);
  const Matrix t = uniform(rng, 7, 1, 0.0, 0.75);
  Tape tape;
  const FlowPolicyVars vars = bind(tape, p);
  const Var loss = straightening_loss_on_tape(p, vars, tape.constant(s), u0, tg, t);
  EXPECT_NEAR(loss.value()(0, 0), straightening_residual(p, s, u0, tg, t).mean(), 1e-12);
}

TEST(Straightening, RegressionCollapsesOneVersusFourStepGap) {
  Rng rng(15);
  FlowPolicyInit init;
  init.hidden = {64, 64};
  init.sigma_hidden = {8};
  init.output_weight_scale = 1.0;
  FlowPolicyParams p = make_flow_policy(2, 2, rng, init);
  const Index n = 32;
  const Matrix s = standard_normal(rng, n, 2);
  const Matrix u0 = standard_normal(rng, n, 2);
  const Matrix tg = deterministic_rollout(p, s, u0, 4, 1);  // frozen targets
  const double gap_before = (sample_eval(p, s, u0, 1) - sample_eval(p, s, u0, 4)).rowwise().norm().mean();
  const double straight_before = median(straightness(eval_trajectory(p, s, u0, 4)));
  for (int it = 0; it < 8000; ++it) {
    // the whole of [0, 1] so the full-interval evaluation sampler is supervised
    const Matrix t = uniform(rng, n, 1, 0.0, 1.0);
    Tape tape;
    const FlowPolicyVars vars = bind(tape, p);
    const Var loss = straightening_loss_on_tape(p, vars, tape.constant(s), u0, tg, t);
    tape.backward(loss);
    diff::adam_step(p.velocity, diff::gradients(vars.velocity), it < 5000 ? 3e-3 : 5e-4);
  }
  const double gap_after = (sample_eval(p, s, u0, 1) - sample_eval(p, s, u0, 4)).rowwise().norm().mean();
  const double straight_after = median(straightness(eval_trajectory(p, s, u0, 4)));
  EXPECT_LE(gap_after * 10.0, gap_before) << gap_before << " -> " << gap_after;
  EXPECT_LT(straight_after, straight_before) << straight_before << " -> " << straight_after;
}

// ---------------------------------------------------------------------------
// Recorded sampler

TEST(TapeChain, MatchesPlainSampler) {
  const FlowPolicyParams p = random_policy(3, 2, 16);
  Rng rng(16);
  const Matrix s = standard_normal(rng, 5, 3);
  const Matrix u0 = standard_normal(rng, 5, 2);
  const std::vector<Matrix> noises{standard_normal(rng, 5, 2), standard_normal(rng, 5, 2)};
  const LatentChain plain = run_hybrid(p, s, u0, noises, 4, 2);
  Tape tape;
  const FlowPolicyVars vars = bind(tape, p);
  const TapeChain c = hybrid_on_tape(p, vars, tape.constant(s), u0, noises, 4, 2, Cutoff::StopGradient);
  EXPECT_LT((c.tail.action.value() - plain.action()).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_LT((c.prefix_end.value() - plain.u[2]).cwiseAbs().maxCoeff(), 1e-13);
  const Matrix tail_sum = plain.tail_logps[0] + plain.tail_logps[1];
  EXPECT_LT((c.tail.tail_logp.value() - tail_sum).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(c.prior_logp, plain.prior_logp);
}

TEST(TapeChain, DetachMatchesFreshConstant) {
  const FlowPolicyParams p = random_policy(2, 2, 17);
  Rng rng(17);
  const Matrix s = standard_normal(rng, 4, 2);
  const Matrix u0 = standard_normal(rng, 4, 2);
  const std::vector<Matrix> noises{standard_normal(rng, 4, 2)};
  auto objective = [](const TapeTail& t) { return diff::mean(diff::row_sum(t.action) + t.tail_logp); };

  Tape a;
  const FlowPolicyVars va = bind(a, p);
  const TapeChain ca = hybrid_on_tape(p, va, a.constant(s), u0, noises, 4, 1, Cutoff::StopGradient);
  a.backward(objective(ca.tail));

  Tape b;
  const FlowPolicyVars vb = bind(b, p);
  const Var start = b.constant(ca.prefix_end.value());
  const TapeTail tb = tail_on_tape(p, vb, b.constant(s), start, noises, 4, 1);
  b.backward(objective(tb));

  const auto ga = diff::gradients(va.velocity);
  const auto gb = diff::gradients(vb.velocity);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_EQ(ga[i], gb[i]) << "tensor " << i;
  EXPECT_TRUE((ca.prefix_end.adjoint().array() == 0.0).all());
}

TEST(TapeChain, BackpropCutoffReachesPrefix) {
  const FlowPolicyParams p = random_policy(2, 2, 18);
  Rng rng(18);
  const Matrix s = standard_normal(rng, 4, 2);
  const Matrix u0 = standard_normal(rng, 4, 2);
  const std::vector<Matrix> noises{standard_normal(rng, 4, 2)};
  Tape tape;
  const FlowPolicyVars vars = bind(tape, p);
  const TapeChain c = hybrid_on_tape(p, vars, tape.constant(s), u0, noises, 4, 1, Cutoff::Backprop);
  tape.backward(diff::mean(diff::row_sum(c.tail.action)));
  EXPECT_GT(c.prefix_end.adjoint().cwiseAbs().maxCoeff(), 0.0);
}

// ---------------------------------------------------------------------------
// Diagnostics

TEST(Divergence, ConstantAndLinearFields) {
  Rng rng(19);
  const Matrix u = standard_normal(rng, 5, 3);
  Eigen::RowVectorXd c(3);
  c << 1.0, 2.0, 3.0;
  EXPECT_LT(estimate_divergence(constant_field(1, c), Matrix::Zero(5, 1), u, 0.3).cwiseAbs().maxCoeff(), 1e-8);
  Matrix A(3, 3);
  A << 0.5, 1.0, -2.0, 0.3, -1.5, 0.7, 2.0, 0.1, 0.4;
  const Matrix div = estimate_divergence(linear_field(1, A), Matrix::Zero(5, 1), u, 0.3);
  EXPECT_LT((div.array() - A.trace()).abs().maxCoeff(), 1e-6);
}

TEST(Divergence, MatchesAutodiffJacobianTrace) {
  const FlowPolicyParams p = random_policy(2, 3, 20, 1.0);
  Rng rng(20);
  const Matrix s = standard_normal(rng, 6, 2);
  const Matrix u = standard_normal(rng, 6, 3);
  const double t = 0.4;
  Matrix trace = Matrix::Zero(6, 1);
  for (Index j = 0; j < 3; ++j) {
    Tape tape;
    const FlowPolicyVars vars = bind(tape, p, false);
    const Var uv = tape.variable(u);
    const Var v = velocity_on_tape(p, vars, tape.constant(s), uv, tape.constant(time_column(6, t)));
    // rows are independent, so d(sum_i v_ij)/du_ij is the diagonal entry per row
    tape.backward(diff::sum(diff::slice_cols(v, j, 1)));
    trace += uv.adjoint().col(j);
  }
  EXPECT_LT((estimate_divergence(p, s, u, t) - trace).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(PrefixDensityError, ConstantFieldIsZero) {
  Eigen::RowVectorXd c(2);
  c << 0.5, 0.5;
  Rng rng(21);
  const PrefixDensityError e =
      prefix_logdensity_error(constant_field(1, c), Matrix::Zero(4, 1), standard_normal(rng, 4, 2), 0.75, 20);
  EXPECT_LT(e.delta.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_TRUE(e.bound_holds());
}

TEST(PrefixDensityError, LinearFieldClosedForm) {
  Matrix A(2, 2);
  A << -0.8, 0.4, 0.2, 0.3;
  Rng rng(22);
  const PrefixDensityError e =
      prefix_logdensity_error(linear_field(1, A), Matrix::Zero(4, 1), standard_normal(rng, 4, 2), 0.75, 20);
  EXPECT_LT((e.delta.array() + A.trace() * 0.75).abs().maxCoeff(), 1e-3);
  EXPECT_TRUE(e.bound_holds());
}

TEST(PrefixDensityError, BoundHoldsOnRandomFields) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FlowPolicyParams p = random_policy(2, 2, 300 + seed, 1.0);
    Rng rng(seed);
    const PrefixDensityError e =
        prefix_logdensity_error(p, standard_normal(rng, 8, 2), standard_normal(rng, 8, 2), 0.75, 10);
    EXPECT_TRUE(e.bound_holds()) << "seed " << seed;
  }
}

TEST(PrefixDensityError, RejectsCoarseQuadrature) {
  EXPECT_THROW(prefix_logdensity_error(zero_field(1, 1), Matrix::Zero(1, 1), Matrix::Zero(1, 1), 0.75, 9),
               ConfigError);
}

TEST(Straightness, KnownShapes) {
  Matrix a(1, 2), b(1, 2), c(1, 2);
  a << 0.0, 0.0;
  b << 1.0, 1.0;
  c << 2.0, 0.0;
  EXPECT_DOUBLE_EQ(straightness({a, b, c})(0, 0), 0.5);
  Matrix m(1, 2);
  m << 1.0, 0.0;
  EXPECT_DOUBLE_EQ(straightness({a, m, c})(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(straightness({a, b, a})(0, 0), 0.0);
}
