#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records nodes in creation order; each node holds its value, a lazily
// materialised gradient and a closure that pushes the node's gradient into its
// parents. Parents always precede children, so backward() is one reverse sweep.
// Nodes that do not depend on a trainable leaf carry no closure at all.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "canonpose/errors.hpp"

namespace canonpose::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kLeakySlope = 0.01;

template <typename Scalar>
class Tape;

/// Lightweight handle to a node on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using MatrixType = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const MatrixType&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf; the value is copied onto the tape.
  Var<Scalar> variable(MatrixType value) { return push(std::move(value), true, nullptr, true); }
  Var<Scalar> constant(MatrixType value) { return push(std::move(value), false, nullptr, false); }
  Var<Scalar> constant(Scalar value) { return constant(MatrixType::Constant(1, 1, value)); }

  /// Records an op result. `requires_grad` should be the OR of the parents'
  /// flags; the closure is dropped when it is false.
  Var<Scalar> push(MatrixType value, bool requires_grad, Backward backward, bool trainable = false) {
    if (!value.allFinite()) {
      throw NonFiniteValue("node " + std::to_string(nodes_.size()) + " has a non-finite entry");
    }
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.trainable = trainable;
    if (requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  const MatrixType& value(const Var<Scalar>& v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(const Var<Scalar>& v) const { return nodes_.at(v.id()).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Hash of the side of its kink every input to a kinked op (leaky_relu,
  /// abs) lies on. Two evaluations of one graph share a piecewise-smooth
  /// piece iff their patterns agree (up to hash collisions).
  std::uint64_t kink_pattern() const { return kink_pattern_; }

  /// `side` maps an entry to -1, 0 or 1.
  template <typename Side>
  void observe_kink(const MatrixType& x, Side side) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      kink_pattern_ = (kink_pattern_ ^ std::uint64_t(side(x(i)) + 2)) * 0x100000001b3ull;
    }
  }

  /// Gradient of the last backward() loss with respect to `v`; zeros when no
  /// path reached it.
  MatrixType grad(const Var<Scalar>& v) const {
    const Node& node = nodes_.at(v.id());
    if (node.grad.size() == 0) return MatrixType::Zero(node.value.rows(), node.value.cols());
    return node.grad;
  }

  /// Reverse sweep from a 1x1 loss. Gradients of intermediate nodes are
  /// released once propagated; leaf gradients are kept.
  void backward(const Var<Scalar>& loss) {
    const Node& root = nodes_.at(loss.id());
    if (root.value.rows() != 1 || root.value.cols() != 1) {
      throw NonScalarLoss("loss has shape " + std::to_string(root.value.rows()) + "x" +
                          std::to_string(root.value.cols()));
    }
    for (Node& node : nodes_) node.grad.resize(0, 0);
    if (!root.requires_grad) return;
    nodes_[loss.id()].grad = MatrixType::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.grad.size() == 0 || !node.backward) continue;
      node.backward(*this, node.grad);
      node.grad.resize(0, 0);
    }
  }

  template <typename Expr>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Expr>& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad.noalias() = g;
    } else {
      node.grad.noalias() += g;
    }
  }

  template <typename Expr>
  void accumulate_block(std::size_t id, Eigen::Index row, Eigen::Index col,
                        const Eigen::MatrixBase<Expr>& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) node.grad = MatrixType::Zero(node.value.rows(), node.value.cols());
    node.grad.block(row, col, g.rows(), g.cols()) += g;
  }

 private:
  struct Node {
    MatrixType value;
    MatrixType grad;
    Backward backward;
    bool requires_grad = false;
    bool trainable = false;
  };

  std::vector<Node> nodes_;
  std::uint64_t kink_pattern_ = 0xcbf29ce484222325ull;
};

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.rows(), a.cols()) + " vs " +
                        shape_str(b.rows(), b.cols()));
  }
}

template <typename Scalar>
void require_scalar(const char* op, const Var<Scalar>& s) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw ShapeMismatch(std::string(op) + ": expected 1x1, got " + shape_str(s.rows(), s.cols()));
  }
}

template <typename Scalar>
void require_same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("nodes live on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul: " + detail::shape_str(a.rows(), a.cols()) + " * " +
                        detail::shape_str(b.rows(), b.cols()));
  }
  Tape<Scalar>& t = a.tape();
  Matrix<Scalar> out;
  out.noalias() = a.value() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  if (tape.requires_grad(ia)) {
                    tape.accumulate(ia, g * tape.value(Var<Scalar>(&tape, ib)).transpose());
                  }
                  if (tape.requires_grad(ib)) {
                    tape.accumulate(ib, tape.value(Var<Scalar>(&tape, ia)).transpose() * g);
                  }
                });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id();
  return t.push(a.value().transpose(), t.requires_grad(ia),
                [ia](Tape<Scalar>& tape, const Matrix<Scalar>& g) { tape.accumulate(ia, g.transpose()); });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("add", a, b);
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  tape.accumulate(ia, g);
                  tape.accumulate(ib, g);
                });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("sub", a, b);
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  tape.accumulate(ia, g);
                  tape.accumulate(ib, -g);
                });
}

/// Hadamard product.
template <typename Scalar>
Var<Scalar> hadamard(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("hadamard", a, b);
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  const Var<Scalar> va(&tape, ia), vb(&tape, ib);
                  if (tape.requires_grad(ia)) tape.accumulate(ia, g.cwiseProduct(vb.value()));
                  if (tape.requires_grad(ib)) tape.accumulate(ib, g.cwiseProduct(va.value()));
                });
}

/// Sum of same-shaped nodes; one node instead of a chain of binary adds.
template <typename Scalar>
Var<Scalar> add_n(const std::vector<Var<Scalar>>& terms) {
  if (terms.empty()) throw std::invalid_argument("add_n: no terms");
  Tape<Scalar>& t = terms.front().tape();
  Matrix<Scalar> out = terms.front().value();
  bool needs = t.requires_grad(terms.front().id());
  std::vector<std::size_t> ids{terms.front().id()};
  for (std::size_t k = 1; k < terms.size(); ++k) {
    detail::require_same_tape(terms.front(), terms[k]);
    detail::require_same_shape("add_n", terms.front(), terms[k]);
    out += terms[k].value();
    needs = needs || t.requires_grad(terms[k].id());
    ids.push_back(terms[k].id());
  }
  return t.push(std::move(out), needs, [ids = std::move(ids)](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
    for (std::size_t id : ids) tape.accumulate(id, g);
  });
}

/// Adds a 1 x cols row vector to every row of `a`.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  detail::require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeMismatch("add_row: bias " + detail::shape_str(row.rows(), row.cols()) + " for input " +
                        detail::shape_str(a.rows(), a.cols()));
  }
  Tape<Scalar>& t = a.tape();
  Matrix<Scalar> out = a.value();
  out.rowwise() += row.value().row(0);
  const std::size_t ia = a.id(), ib = row.id();
  return t.push(std::move(out), t.requires_grad(ia) || t.requires_grad(ib),
                [ia, ib](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  tape.accumulate(ia, g);
                  if (tape.requires_grad(ib)) tape.accumulate(ib, g.colwise().sum());
                });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar c) {
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id();
  return t.push(c * a.value(), t.requires_grad(ia),
                [ia, c](Tape<Scalar>& tape, const Matrix<Scalar>& g) { tape.accumulate(ia, c * g); });
}

/// Matrix times a 1x1 node.
template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, const Var<Scalar>& s) {
  detail::require_same_tape(a, s);
  detail::require_scalar("scale", s);
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id(), is = s.id();
  return t.push(s.scalar() * a.value(), t.requires_grad(ia) || t.requires_grad(is),
                [ia, is](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  const Var<Scalar> va(&tape, ia), vs(&tape, is);
                  if (tape.requires_grad(ia)) tape.accumulate(ia, vs.scalar() * g);
                  if (tape.requires_grad(is)) {
                    tape.accumulate(is, Matrix<Scalar>::Constant(1, 1, g.cwiseProduct(va.value()).sum()));
                  }
                });
}

/// a / s for a positive 1x1 node s, differentiated through s.
template <typename Scalar>
Var<Scalar> divide(const Var<Scalar>& a, const Var<Scalar>& s) {
  detail::require_same_tape(a, s);
  detail::require_scalar("divide", s);
  if (!(s.scalar() > Scalar(0))) {
    throw std::domain_error("divide: divisor must be positive, got " + std::to_string(double(s.scalar())));
  }
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id(), is = s.id();
  return t.push(a.value() / s.scalar(), t.requires_grad(ia) || t.requires_grad(is),
                [ia, is](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  const Var<Scalar> va(&tape, ia), vs(&tape, is);
                  const Scalar inv = Scalar(1) / vs.scalar();
                  if (tape.requires_grad(ia)) tape.accumulate(ia, inv * g);
                  if (tape.requires_grad(is)) {
                    const Scalar dot = g.cwiseProduct(va.value()).sum();
                    tape.accumulate(is, Matrix<Scalar>::Constant(1, 1, -dot * inv * inv));
                  }
                });
}

/// Leaky rectifier; the derivative at exactly 0 is taken from the positive side.
template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& a, Scalar slope = Scalar(kLeakySlope)) {
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id();
  t.observe_kink(a.value(), [](Scalar x) { return x >= Scalar(0) ? 1 : -1; });
  Matrix<Scalar> out = a.value().unaryExpr([slope](Scalar x) { return x >= Scalar(0) ? x : slope * x; });
  return t.push(std::move(out), t.requires_grad(ia), [ia, slope](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
    const Matrix<Scalar>& x = tape.value(Var<Scalar>(&tape, ia));
    tape.accumulate(ia, g.binaryExpr(x, [slope](Scalar gi, Scalar xi) { return xi >= Scalar(0) ? gi : slope * gi; }));
  });
}

/// Absolute value. The subgradient is 0 for |x| <= kAbsKink, so a residual
/// that is zero up to round-off contributes no gradient.
inline constexpr double kAbsKink = 1e-12;

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& a) {
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id();
  t.observe_kink(a.value(), [](Scalar x) {
    const Scalar kink = Scalar(kAbsKink);
    return x > kink ? 1 : (x < -kink ? -1 : 0);
  });
  return t.push(a.value().cwiseAbs(), t.requires_grad(ia), [ia](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
    const Matrix<Scalar>& x = tape.value(Var<Scalar>(&tape, ia));
    tape.accumulate(ia, g.binaryExpr(x, [](Scalar gi, Scalar xi) {
      const Scalar kink = Scalar(kAbsKink);
      return xi > kink ? gi : (xi < -kink ? -gi : Scalar(0));
    }));
  });
}

template <typename Scalar>
Var<Scalar> sin(const Var<Scalar>& a) {
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id();
  return t.push(a.value().array().sin().matrix(), t.requires_grad(ia),
                [ia](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  const Matrix<Scalar>& x = tape.value(Var<Scalar>(&tape, ia));
                  tape.accumulate(ia, g.cwiseProduct(x.array().cos().matrix()));
                });
}

template <typename Scalar>
Var<Scalar> cos(const Var<Scalar>& a) {
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id();
  return t.push(a.value().array().cos().matrix(), t.requires_grad(ia),
                [ia](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  const Matrix<Scalar>& x = tape.value(Var<Scalar>(&tape, ia));
                  tape.accumulate(ia, -g.cwiseProduct(x.array().sin().matrix()));
                });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return t.push(Matrix<Scalar>::Constant(1, 1, a.value().sum()), t.requires_grad(ia),
                [ia, r, c](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  tape.accumulate(ia, Matrix<Scalar>::Constant(r, c, g(0, 0)));
                });
}

/// ||a||_F as a 1x1 node. The gradient at a = 0 is taken as zero.
template <typename Scalar>
Var<Scalar> frobenius_norm(const Var<Scalar>& a) {
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id();
  const Scalar n = a.value().norm();
  return t.push(Matrix<Scalar>::Constant(1, 1, n), t.requires_grad(ia),
                [ia, n](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  const Matrix<Scalar>& x = tape.value(Var<Scalar>(&tape, ia));
                  if (n > Scalar(0)) {
                    tape.accumulate(ia, (g(0, 0) / n) * x);
                  } else {
                    tape.accumulate(ia, Matrix<Scalar>::Zero(x.rows(), x.cols()));
                  }
                });
}

/// Euclidean norm of a row or column vector.
template <typename Scalar>
Var<Scalar> norm2(const Var<Scalar>& v) {
  if (v.rows() != 1 && v.cols() != 1) {
    throw ShapeMismatch("norm2: expected a vector, got " + detail::shape_str(v.rows(), v.cols()));
  }
  return frobenius_norm(v);
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename Scalar>
Var<Scalar> block(const Var<Scalar>& a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols) {
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > a.rows() || col + cols > a.cols()) {
    throw ShapeMismatch("block: " + detail::shape_str(rows, cols) + " at (" + std::to_string(row) + "," +
                        std::to_string(col) + ") outside " + detail::shape_str(a.rows(), a.cols()));
  }
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id();
  return t.push(a.value().block(row, col, rows, cols), t.requires_grad(ia),
                [ia, row, col](Tape<Scalar>& tape, const Matrix<Scalar>& g) { tape.accumulate_block(ia, row, col, g); });
}

/// Reinterprets the entries in row-major order: out(r, c) = a_flat[r * cols + c]
/// where a_flat also enumerates `a` row by row.
template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeMismatch("reshape: " + detail::shape_str(a.rows(), a.cols()) + " to " + detail::shape_str(rows, cols));
  }
  using RowMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Index in_rows = a.rows(), in_cols = a.cols();
  RowMajor flat = a.value();
  Matrix<Scalar> out = Eigen::Map<const RowMajor>(flat.data(), rows, cols);
  Tape<Scalar>& t = a.tape();
  const std::size_t ia = a.id();
  return t.push(std::move(out), t.requires_grad(ia),
                [ia, in_rows, in_cols](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
                  RowMajor gflat = g;
                  tape.accumulate(ia, Eigen::Map<const RowMajor>(gflat.data(), in_rows, in_cols));
                });
}

/// Concatenation along the feature (column) axis.
template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape<Scalar>& t = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool needs = false;
  for (const auto& p : parts) {
    detail::require_same_tape(parts.front(), p);
    if (p.rows() != rows) throw ShapeMismatch("concat_cols: row counts differ");
    cols += p.cols();
    needs = needs || t.requires_grad(p.id());
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id(), at);
    at += p.cols();
  }
  return t.push(std::move(out), needs, [spans = std::move(spans)](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
    for (const auto& [id, offset] : spans) {
      const Eigen::Index width = tape.value(Var<Scalar>(&tape, id)).cols();
      tape.accumulate(id, g.middleCols(offset, width));
    }
  });
}

/// Skew-symmetric cross-product matrix of a 3-vector (any 1x3 or 3x1 node).
template <typename Scalar>
Var<Scalar> skew(const Var<Scalar>& v) {
  if (v.value().size() != 3) throw ShapeMismatch("skew: expected 3 entries");
  const auto& x = v.value();
  Matrix<Scalar> out(3, 3);
  out << Scalar(0), -x(2), x(1),
         x(2), Scalar(0), -x(0),
         -x(1), x(0), Scalar(0);
  Tape<Scalar>& t = v.tape();
  const std::size_t iv = v.id();
  const Eigen::Index r = v.rows(), c = v.cols();
  return t.push(std::move(out), t.requires_grad(iv), [iv, r, c](Tape<Scalar>& tape, const Matrix<Scalar>& g) {
    Matrix<Scalar> dv(r, c);
    dv(0) = g(2, 1) - g(1, 2);
    dv(1) = g(0, 2) - g(2, 0);
    dv(2) = g(1, 0) - g(0, 1);
    tape.accumulate(iv, dv);
  });
}

// ---------------------------------------------------------------------------
// Operators

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Scalar c, const Var<Scalar>& a) { return scale(a, c); }

}  // namespace canonpose::ad
