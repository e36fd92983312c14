#pragma once

// Shared test oracles: central finite differences and a generator of random
// small graphs that touches every tape operation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "trfp/diffcore/mlp.hpp"
#include "trfp/diffcore/tape.hpp"
#include "trfp/rng.hpp"

namespace trfp_test {

using trfp::Rng;
using trfp::diff::Index;
using trfp::diff::Matrix;
using trfp::diff::Tape;
using trfp::diff::Var;

// Scalar function of a list of parameter tensors.
using ScalarFn = std::function<double(const std::vector<Matrix>&)>;

inline std::vector<Matrix> central_differences(const ScalarFn& f, std::vector<Matrix> params, double h) {
  std::vector<Matrix> grads;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix g(params[k].rows(), params[k].cols());
    for (Index i = 0; i < params[k].size(); ++i) {
      const double x = params[k].data()[i];
      params[k].data()[i] = x + h;
      const double up = f(params);
      params[k].data()[i] = x - h;
      const double dn = f(params);
      params[k].data()[i] = x;
      g.data()[i] = (up - dn) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale == 0.0) return 0.0;
  return (a - b).norm() / scale;
}

// A random MLP (1-3 hidden layers, widths <= 32) followed by a head that
// uses every elementwise, reduction, shape and detach operation. With
// `frozen` set, the detached node is replaced by a constant of that value,
// which is what a finite-difference oracle must hold fixed.
struct RandomGraph {
  Index batch = 3;
  Index in = 4;
  Index out = 3;
  trfp::diff::MlpParams mlp;
  Matrix input;
  Matrix extra;  // trainable 1 x out row used by the head
  double clamp_lo = -0.8;
  double clamp_hi = 0.8;

  static RandomGraph make(Rng& rng) {
    std::uniform_int_distribution<int> layers(1, 3);
    std::uniform_int_distribution<int> width(2, 32);
    std::uniform_int_distribution<int> small(2, 5);
    RandomGraph g;
    g.batch = small(rng);
    g.in = small(rng);
    g.out = small(rng) + 1;
    std::vector<Index> hidden;
    for (int i = layers(rng); i > 0; --i) hidden.push_back(width(rng));
    g.mlp = trfp::diff::make_mlp(g.in, hidden, g.out, rng);
    g.input = trfp::standard_normal(rng, g.batch, g.in);
    g.extra = trfp::uniform(rng, 1, g.out, 0.5, 1.5);
    return g;
  }

  std::vector<Matrix> params() const {
    std::vector<Matrix> p;
    for (const auto& l : mlp.layers) {
      p.push_back(l.weight);
      p.push_back(l.bias);
    }
    p.push_back(extra);
    return p;
  }

  trfp::diff::MlpParams with(const std::vector<Matrix>& p) const {
    trfp::diff::MlpParams m = mlp;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      m.layers[i].weight = p[2 * i];
      m.layers[i].bias = p[2 * i + 1];
    }
    return m;
  }

  struct Built {
    Var root;
    Var detached_source;
    std::vector<Var> leaves;
    // Distance of the inputs of minimum/clamp from their kinks; finite
    // differences straddling a kink are meaningless.
    double kink_gap = 0.0;
  };

  Built build(Tape& tape, const std::vector<Matrix>& p, const std::optional<Matrix>& frozen) const {
    using namespace trfp::diff;
    const MlpParams m = with(p);
    Built b;
    MlpVars vars = bind(tape, m, true);
    for (std::size_t i = 0; i < vars.weights.size(); ++i) {
      b.leaves.push_back(vars.weights[i]);
      b.leaves.push_back(vars.biases[i]);
    }
    Var e = tape.variable(p.back());
    b.leaves.push_back(e);
    Var x = tape.constant(input);
    Var h = mlp_forward(m, vars, x);  // batch x out
    b.detached_source = h;
    Var d = frozen ? tape.constant(*frozen) : tape.stop_gradient(h);
    Var a = add_row(tanh(h), e);
    Var bterm = hadamard(logistic(h), d);
    Var c = log(shift(square(h), 1.0));
    Var s = exp(scale(sub(a, c), 0.3));
    Var both = concat_cols({s, bterm, mish(h)});
    Var left = slice_cols(both, 0, out);
    Var right = slice_cols(both, out, out);
    Var lo = minimum(left, right);
    Var half = scale(h, 0.5);
    Var cl = clamp(half, clamp_lo, clamp_hi);
    b.kink_gap = std::min({(left.value() - right.value()).cwiseAbs().minCoeff(),
                           (half.value().array() - clamp_lo).abs().minCoeff(),
                           (half.value().array() - clamp_hi).abs().minCoeff()});
    Var mixed = lo + hadamard(cl, cl) - bterm;
    Var w = matmul(mixed, tape.constant(Matrix::Ones(out, 2)));
    Var gain = mean(slice_cols(e, 0, 1));
    b.root = sum(row_sum(scale_by(gain, w))) + mean(square(a)) * 0.5;
    return b;
  }

  double value(const std::vector<Matrix>& p, const Matrix& frozen) const {
    Tape tape;
    return build(tape, p, frozen).root.value()(0, 0);
  }
};

}  // namespace trfp_test
