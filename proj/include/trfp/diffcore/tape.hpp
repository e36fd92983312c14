#pragma once

// Reverse-mode differentiation over dense matrices.
//
// Every node holds a row-major matrix (batch rows x feature columns). A Tape
// records nodes in creation order; backward() walks them in reverse and
// pushes adjoints into parents through per-node pullbacks. Only nodes created
// by variable() (or derived from one) carry adjoints; constant() and
// stop_gradient() produce leaves that block flow.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "trfp/error.hpp"

namespace trfp::diff {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace scalar {

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// x * tanh(softplus(x)) through tanh(log(1 + e)) = n / (n + 2), n = e (e + 2),
// e = exp(x): one exp per element. Beyond x = 20 the tanh factor is 1 to
// double precision.
inline double mish(double x) {
  if (x > 20.0) return x;
  const double e = std::exp(x);
  const double n = e * (e + 2.0);
  return x * n / (n + 2.0);
}

// Value and slope together, sharing the exp.
inline void mish_with_slope(double x, double& value, double& slope) {
  if (x > 20.0) {
    value = x;
    slope = 1.0;
    return;
  }
  const double e = std::exp(x);
  const double n = e * (e + 2.0);
  const double th = n / (n + 2.0);
  const double sech2 = 4.0 * (n + 1.0) / ((n + 2.0) * (n + 2.0));
  value = x * th;
  slope = th + x * sech2 * e / (1.0 + e);
}

inline double mish_derivative(double x) {
  double v = 0.0;
  double d = 0.0;
  mish_with_slope(x, v, d);
  return d;
}

}  // namespace scalar

inline Matrix mish(const Matrix& x) { return x.unaryExpr([](double v) { return scalar::mish(v); }); }

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  // Accumulated adjoint after Tape::backward(); zeros when nothing flowed in.
  Matrix adjoint() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool tracks_gradient() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Pullback = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }
  Var variable(Matrix value) { return push(std::move(value), true, nullptr); }

  // Same value as x, but a leaf: nothing downstream reaches x's parents.
  Var stop_gradient(Var x) { return constant(x.value()); }

  // Records a derived node. The node tracks gradients iff some parent does;
  // when none does the pullback is dropped.
  Var record(Matrix value, std::initializer_list<Var> parents, Pullback pullback) {
    bool tracks = false;
    for (const Var& p : parents) {
      check_owner(p);
      tracks = tracks || node(p.id()).tracks;
    }
    return push(std::move(value), tracks, tracks ? std::move(pullback) : nullptr);
  }
  Var record(Matrix value, const std::vector<Var>& parents, Pullback pullback) {
    bool tracks = false;
    for (const Var& p : parents) {
      check_owner(p);
      tracks = tracks || node(p.id()).tracks;
    }
    return push(std::move(value), tracks, tracks ? std::move(pullback) : nullptr);
  }

  template <typename Expr>
  void accumulate(const Var& target, const Expr& g) {
    Node& n = node(target.id());
    if (!n.tracks) return;
    if (n.adjoint.size() == 0) {
      n.adjoint = g;
    } else {
      n.adjoint += g;
    }
  }

  // Seeds d(root)/d(root) = 1 and propagates. Adjoints from a previous call
  // are cleared first.
  void backward(Var root) {
    check_owner(root);
    const Matrix& rv = node(root.id()).value;
    if (rv.rows() != 1 || rv.cols() != 1) {
      throw UsageError("backward: root must be scalar, got " + std::to_string(rv.rows()) + "x" +
                       std::to_string(rv.cols()));
    }
    for (Node& n : nodes_) n.adjoint.resize(0, 0);
    if (!node(root.id()).tracks) return;
    node(root.id()).adjoint = Matrix::Ones(1, 1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.pullback || n.adjoint.size() == 0) continue;
      n.pullback(*this, n.adjoint);
    }
  }

  const Matrix& value_of(std::size_t id) const { return nodes_.at(id).value; }
  Matrix adjoint_of(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.adjoint.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.adjoint;
  }
  bool tracks(std::size_t id) const { return nodes_.at(id).tracks; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix adjoint;
    bool tracks = false;
    Pullback pullback;
  };

  Var push(Matrix value, bool tracks, Pullback pullback) {
    nodes_.push_back(Node{std::move(value), Matrix(), tracks, std::move(pullback)});
    return Var(this, nodes_.size() - 1);
  }

  Node& node(std::size_t id) { return nodes_[id]; }

  void check_owner(const Var& v) const {
    if (v.tape() != this) throw UsageError("Var belongs to a different tape");
  }

  // deque keeps element references stable across push_back
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value_of(id_); }
inline Matrix Var::adjoint() const { return tape_->adjoint_of(id_); }
inline bool Var::tracks_gradient() const { return tape_->tracks(id_); }

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
}

template <typename F, typename DF>
Var unary(Var x, F f, DF df) {
  Matrix out = x.value().unaryExpr(f);
  return x.tape()->record(std::move(out), {x}, [x, df](Tape& t, const Matrix& g) {
    t.accumulate(x, g.cwiseProduct(x.value().unaryExpr(df)));
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_shape(a, b, "hadamard");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [a, b](Tape& t, const Matrix& g) {
                            t.accumulate(a, g.cwiseProduct(b.value()));
                            t.accumulate(b, g.cwiseProduct(a.value()));
                          });
}

inline Var scale(Var a, double c) {
  return a.tape()->record(a.value() * c, {a},
                          [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g * c); });
}

inline Var shift(Var a, double c) {
  Matrix out = a.value().array() + c;
  return a.tape()->record(std::move(out), {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

// s is 1x1; every entry of a is multiplied by it.
inline Var scale_by(Var s, Var a) {
  if (s.rows() != 1 || s.cols() != 1) throw ConfigError("scale_by: scale must be 1x1");
  const double sv = s.value()(0, 0);
  return a.tape()->record(a.value() * sv, {s, a}, [s, a](Tape& t, const Matrix& g) {
    t.accumulate(s, Matrix::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
    t.accumulate(a, g * s.value()(0, 0));
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ConfigError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                      std::to_string(b.rows()) + ")");
  }
  return a.tape()->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.tracks_gradient()) t.accumulate(a, g * b.value().transpose());
    if (b.tracks_gradient()) t.accumulate(b, a.value().transpose() * g);
  });
}

// a (n x m) plus a 1 x m row repeated over every row.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ConfigError("add_row: row shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(row, g.colwise().sum());
  });
}

inline Var square(Var a) {
  return a.tape()->record(a.value().cwiseAbs2(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

inline Var exp(Var a) {
  Matrix out = a.value().array().exp();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix(g.array() * a.value().array().exp()));
  });
}

inline Var log(Var a) {
  Matrix out = a.value().array().log();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

inline Var tanh(Var a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double th = std::tanh(x);
        return 1.0 - th * th;
      });
}

inline Var logistic(Var a) {
  return detail::unary(
      a, [](double x) { return scalar::logistic(x); },
      [](double x) {
        const double s = scalar::logistic(x);
        return s * (1.0 - s);
      });
}

inline Var mish(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  Matrix slope(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    scalar::mish_with_slope(x.data()[i], out.data()[i], slope.data()[i]);
  }
  return a.tape()->record(std::move(out), {a}, [a, slope = std::move(slope)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(slope));
  });
}

inline Var sum(Var a) {
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

// Per-row sum: n x m -> n x 1.
inline Var row_sum(Var a) {
  Matrix out = a.value().rowwise().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.col(0).replicate(1, a.cols()));
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ConfigError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Index off = 0;
    for (const Var& p : parts) {
      t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

inline Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ConfigError("slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return a.tape()->record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    t.accumulate(a, full);
  });
}

// Elementwise clamp to [lo, hi]; the adjoint passes only where lo < a < hi.
inline Var clamp(Var a, double lo, double hi) {
  const Matrix& x = a.value();
  Matrix out = x.cwiseMax(lo).cwiseMin(hi);
  Matrix inside = ((x.array() > lo) && (x.array() < hi)).cast<double>().matrix();
  return a.tape()->record(std::move(out), {a}, [a, inside = std::move(inside)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(inside));
  });
}

// Elementwise minimum; ties route the adjoint to the first argument.
inline Var minimum(Var a, Var b) {
  detail::require_same_shape(a, b, "minimum");
  Matrix out = a.value().cwiseMin(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    Matrix ga = Matrix::Zero(av.rows(), av.cols());
    Matrix gb = Matrix::Zero(av.rows(), av.cols());
    for (Index i = 0; i < av.rows(); ++i) {
      for (Index j = 0; j < av.cols(); ++j) {
        if (av(i, j) <= bv(i, j)) {
          ga(i, j) = g(i, j);
        } else {
          gb(i, j) = g(i, j);
        }
      }
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

}  // namespace trfp::diff
