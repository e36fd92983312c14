#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "trfp/diffcore/adam.hpp"
#include "trfp/diffcore/tape.hpp"
#include "trfp/error.hpp"
#include "trfp/rng.hpp"

namespace trfp::diff {

enum class Activation { Mish, Identity };

// y = act(x W + b); x is batch x in, W is in x out, b is 1 x out.
struct DenseLayer {
  Matrix weight;
  Matrix bias;
  Activation activation = Activation::Mish;
};

struct MlpParams {
  std::vector<DenseLayer> layers;
  AdamState adam;

  Index input_width() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
  Index output_width() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

  // Flat parameter list in (weight, bias) order per layer.
  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> out;
    for (DenseLayer& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
    return out;
  }

  void validate() const {
    if (layers.empty()) throw ConfigError("mlp: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const DenseLayer& l = layers[i];
      if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols()) {
        throw ConfigError("mlp: layer " + std::to_string(i) + " bias width differs from weight");
      }
      if (i + 1 < layers.size() && l.weight.cols() != layers[i + 1].weight.rows()) {
        throw ConfigError("mlp: layer " + std::to_string(i) + " output width " +
                          std::to_string(l.weight.cols()) + " != layer " + std::to_string(i + 1) +
                          " input width " + std::to_string(layers[i + 1].weight.rows()));
      }
    }
    if (!adam.first_moment.empty()) {
      if (adam.first_moment.size() != 2 * layers.size() ||
          adam.second_moment.size() != 2 * layers.size()) {
        throw ConfigError("mlp: adam state does not match layer count");
      }
      for (std::size_t i = 0; i < layers.size(); ++i) {
        const Matrix* p[2] = {&layers[i].weight, &layers[i].bias};
        for (int k = 0; k < 2; ++k) {
          const Matrix& m = adam.first_moment[2 * i + k];
          const Matrix& v = adam.second_moment[2 * i + k];
          if (m.rows() != p[k]->rows() || m.cols() != p[k]->cols() || v.rows() != p[k]->rows() ||
              v.cols() != p[k]->cols()) {
            throw ConfigError("mlp: adam moments not shape-congruent with layer " + std::to_string(i));
          }
        }
      }
    }
  }
};

struct MlpInit {
  // Uniform half-width for the output layer's weights; <= 0 means the same
  // He-uniform fan-in rule as the hidden layers.
  double output_weight_scale = 0.0;
  double output_bias = 0.0;
};

// Hidden layers use Mish, the last layer is Identity. He-uniform fan-in
// initialization, zero biases.
inline MlpParams make_mlp(Index in, const std::vector<Index>& hidden, Index out, Rng& rng,
                          const MlpInit& init = {}) {
  if (in <= 0 || out <= 0) throw ConfigError("mlp: widths must be positive");
  MlpParams p;
  Index prev = in;
  std::vector<Index> widths = hidden;
  widths.push_back(out);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] <= 0) throw ConfigError("mlp: hidden widths must be positive");
    const bool last = i + 1 == widths.size();
    double bound = std::sqrt(6.0 / static_cast<double>(prev));
    if (last && init.output_weight_scale > 0.0) bound = init.output_weight_scale;
    DenseLayer layer;
    layer.weight = uniform(rng, prev, widths[i], -bound, bound);
    layer.bias = Matrix::Constant(1, widths[i], last ? init.output_bias : 0.0);
    layer.activation = last ? Activation::Identity : Activation::Mish;
    p.layers.push_back(std::move(layer));
    prev = widths[i];
  }
  return p;
}

// Tape handles for one MLP's parameters. Reuse the same binding for every
// forward pass on a tape so adjoints accumulate into one place.
struct MlpVars {
  std::vector<Var> weights;
  std::vector<Var> biases;
};

// trainable=false binds the parameters as constants (gradient blocked).
inline MlpVars bind(Tape& tape, const MlpParams& p, bool trainable = true) {
  MlpVars vars;
  for (const DenseLayer& l : p.layers) {
    vars.weights.push_back(trainable ? tape.variable(l.weight) : tape.constant(l.weight));
    vars.biases.push_back(trainable ? tape.variable(l.bias) : tape.constant(l.bias));
  }
  return vars;
}

inline Var mlp_forward(const MlpParams& p, const MlpVars& vars, Var x) {
  if (x.cols() != p.input_width()) {
    throw ConfigError("mlp_forward: input width " + std::to_string(x.cols()) + " != " +
                      std::to_string(p.input_width()));
  }
  Var h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    h = add_row(matmul(h, vars.weights[i]), vars.biases[i]);
    if (p.layers[i].activation == Activation::Mish) h = mish(h);
  }
  return h;
}

// Same arithmetic without recording anything.
inline Matrix mlp_predict(const MlpParams& p, const Matrix& x) {
  if (x.cols() != p.input_width()) {
    throw ConfigError("mlp_predict: input width " + std::to_string(x.cols()) + " != " +
                      std::to_string(p.input_width()));
  }
  Matrix h = x;
  for (const DenseLayer& l : p.layers) {
    Matrix z = h * l.weight;
    z.rowwise() += l.bias.row(0);
    h = l.activation == Activation::Mish ? mish(z) : std::move(z);
  }
  return h;
}

// Gradient map in parameters() order; zeros for parameters nothing reached.
inline std::vector<Matrix> gradients(const MlpVars& vars) {
  std::vector<Matrix> g;
  for (std::size_t i = 0; i < vars.weights.size(); ++i) {
    g.push_back(vars.weights[i].adjoint());
    g.push_back(vars.biases[i].adjoint());
  }
  return g;
}

inline void adam_step(MlpParams& p, const std::vector<Matrix>& grads, double lr,
                      const AdamConfig& cfg = {}) {
  adam_update(p.parameters(), grads, p.adam, lr, cfg);
}

}  // namespace trfp::diff
