#pragma once

// Minimal dense reverse-mode autodiff over Eigen row-major matrices.
//
// A Tensor is a shared handle to a Node holding a value and (lazily) a
// gradient. Operations are free functions that take the Tape they record on
// as their first argument; every op whose inputs require gradients appends a
// backward closure, so the tape order is execution order and backward() is a
// single reverse sweep.
//
// Broadcasting is limited to a 1x1 operand and to a 1xn row added/multiplied
// onto every row of an mxn operand.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "bridgerec/errors.hpp"
#include "bridgerec/rng.hpp"

namespace bridgerec::ad {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;  // empty until something flows into it
  bool requires_grad = false;
  const Tape<Scalar>* producer = nullptr;
  std::uint64_t generation = 0;
};

template <typename Scalar>
class Tensor {
 public:
  using MatrixType = Matrix<Scalar>;

  Tensor() = default;

  /// Leaf that never receives a gradient.
  static Tensor constant(MatrixType value) { return make(std::move(value), false); }
  /// Leaf whose gradient accumulates across backward passes until zero_grad().
  static Tensor parameter(MatrixType value) { return make(std::move(value), true); }
  static Tensor scalar(Scalar s) {
    MatrixType m(1, 1);
    m(0, 0) = s;
    return constant(std::move(m));
  }
  /// A 1xn row from an Eigen vector expression.
  template <typename Derived>
  static Tensor row(const Eigen::MatrixBase<Derived>& v, bool requires_grad = false) {
    MatrixType m = v.reshaped(1, v.size());
    return make(std::move(m), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const MatrixType& value() const { return node_->value; }
  /// Write access for optimizers and checkpoint loading. Do not call while a
  /// tape that references this tensor is still live.
  MatrixType& mutable_value() { return node_->value; }

  bool has_grad() const { return node_->grad.size() != 0; }
  MatrixType grad() const {
    if (has_grad()) return node_->grad;
    return MatrixType::Zero(rows(), cols());
  }
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  Scalar item() const {
    if (size() != 1) throw DimensionError("item() on a non-scalar tensor");
    return node_->value(0, 0);
  }

  Node<Scalar>* node() const { return node_.get(); }
  const std::shared_ptr<Node<Scalar>>& shared() const { return node_; }

 private:
  friend class Tape<Scalar>;
  explicit Tensor(std::shared_ptr<Node<Scalar>> n) : node_(std::move(n)) {}

  static Tensor make(MatrixType value, bool requires_grad) {
    if (value.rows() <= 0 || value.cols() <= 0) {
      throw DimensionError("tensor dimensions must be positive");
    }
    auto n = std::make_shared<Node<Scalar>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  std::shared_ptr<Node<Scalar>> node_;
};

template <typename Scalar, typename Derived>
void accumulate(const Tensor<Scalar>& t, const Eigen::MatrixBase<Derived>& g) {
  if (!t.requires_grad()) return;
  auto& grad = t.node()->grad;
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

template <typename Scalar>
class Tape {
 public:
  using MatrixType = Matrix<Scalar>;
  using Backward = std::function<void(const MatrixType&)>;

  Tape() = default;
  /// A tape built with grad_enabled = false records nothing; ops on it only
  /// compute values. Used for inference.
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Wraps an op result. The closure receives d(loss)/d(result) and must
  /// accumulate into the op's inputs; it is only stored when some input
  /// requires a gradient.
  Tensor<Scalar> record(MatrixType value, std::initializer_list<Tensor<Scalar>> inputs,
                        Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    return record_if(std::move(value), needs, std::move(backward));
  }

  Tensor<Scalar> record_if(MatrixType value, bool needs_grad, Backward backward) {
    if (finished_) throw ContractError("tape already ran backward; reset() before reuse");
    needs_grad = needs_grad && grad_enabled_;
    auto out = Tensor<Scalar>::make(std::move(value), needs_grad);
    out.node_->producer = this;
    out.node_->generation = generation_;
    if (needs_grad) entries_.push_back({out.node_, std::move(backward)});
    return out;
  }

  /// Populates gradients of every requires_grad tensor reachable from `loss`.
  void backward(const Tensor<Scalar>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError("backward() needs a scalar loss");
    }
    if (loss.node()->producer != this || loss.node()->generation != generation_) {
      throw ContractError("loss was not produced on this tape");
    }
    if (finished_) throw ContractError("backward() already called on this tape");
    finished_ = true;
    if (!loss.requires_grad()) return;
    loss.node()->grad = MatrixType::Ones(1, 1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      const auto& grad = it->output->grad;
      if (grad.size() == 0) continue;
      it->backward(grad);
    }
  }

  /// Drops recorded closures so the tape can be reused for a new pass.
  void reset() {
    entries_.clear();
    finished_ = false;
    ++generation_;
  }

  std::size_t size() const { return entries_.size(); }
  bool finished() const { return finished_; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Entry {
    std::shared_ptr<Node<Scalar>> output;
    Backward backward;
  };
  std::vector<Entry> entries_;
  bool finished_ = false;
  bool grad_enabled_ = true;
  std::uint64_t generation_ = 0;
};

namespace detail {

inline std::string shape_str(Index r, Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

enum class Broadcast { kSame, kLeftScalar, kRightScalar, kRightRow };

template <typename Scalar>
Broadcast classify(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kRightScalar;
  if (a.size() == 1) return Broadcast::kLeftScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRightRow;
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_str(a.rows(), a.cols()) + " and " +
                       shape_str(b.rows(), b.cols()));
}

template <typename Scalar>
Matrix<Scalar> expand(const Matrix<Scalar>& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.size() == 1) return Matrix<Scalar>::Constant(rows, cols, m(0, 0));
  return m.replicate(rows, 1);
}

// Sums a full-shape gradient back down to the operand's shape.
template <typename Scalar>
Matrix<Scalar> reduce_to(const Matrix<Scalar>& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix<Scalar>::Constant(1, 1, g.sum());
  return g.colwise().sum();
}

template <typename Scalar>
void check_axis(const Tensor<Scalar>& a, int axis, const char* op) {
  if (axis != 0 && axis != 1 && axis != -1) {
    throw DimensionError(std::string(op) + ": invalid axis " + std::to_string(axis) +
                         " for a 2-d tensor");
  }
  (void)a;
}

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& x) {
  Matrix<Scalar> y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> softmax_rows_backward(const Matrix<Scalar>& y, const Matrix<Scalar>& g) {
  Matrix<Scalar> dx(y.rows(), y.cols());
  for (Index i = 0; i < y.rows(); ++i) {
    const Scalar dot = (g.row(i).array() * y.row(i).array()).sum();
    dx.row(i) = y.row(i).array() * (g.row(i).array() - dot);
  }
  return dx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Tensor<Scalar> matmul(Tape<Scalar>& tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " +
                         detail::shape_str(a.rows(), a.cols()) + " * " +
                         detail::shape_str(b.rows(), b.cols()));
  }
  return tape.record(a.value() * b.value(), {a, b}, [a, b](const Matrix<Scalar>& g) {
    accumulate(a, g * b.value().transpose());
    accumulate(b, a.value().transpose() * g);
  });
}

/// a * b^T without materialising the transpose.
template <typename Scalar>
Tensor<Scalar> matmul_nt(Tape<Scalar>& tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ " +
                         detail::shape_str(a.rows(), a.cols()) + " * " +
                         detail::shape_str(b.rows(), b.cols()) + "^T");
  }
  return tape.record(a.value() * b.value().transpose(), {a, b},
                     [a, b](const Matrix<Scalar>& g) {
                       accumulate(a, g * b.value());
                       accumulate(b, g.transpose() * a.value());
                     });
}

template <typename Scalar>
Tensor<Scalar> transpose(Tape<Scalar>& tape, const Tensor<Scalar>& a) {
  Matrix<Scalar> t = a.value().transpose();
  return tape.record(std::move(t), {a},
                     [a](const Matrix<Scalar>& g) { accumulate(a, g.transpose()); });
}

// ---------------------------------------------------------------------------
// Elementwise

enum class Binary { kAdd, kSub, kMul };

template <typename Scalar>
Tensor<Scalar> elementwise(Tape<Scalar>& tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                           Binary op) {
  const auto mode = detail::classify(a, b, "elementwise");
  const Index rows = mode == detail::Broadcast::kLeftScalar ? b.rows() : a.rows();
  const Index cols = mode == detail::Broadcast::kLeftScalar ? b.cols() : a.cols();
  const Matrix<Scalar> av = detail::expand(a.value(), rows, cols);
  const Matrix<Scalar> bv = detail::expand(b.value(), rows, cols);
  Matrix<Scalar> out;
  switch (op) {
    case Binary::kAdd: out = av + bv; break;
    case Binary::kSub: out = av - bv; break;
    case Binary::kMul: out = av.cwiseProduct(bv); break;
  }
  return tape.record(std::move(out), {a, b}, [a, b, op, rows, cols](const Matrix<Scalar>& g) {
    Matrix<Scalar> ga, gb;
    switch (op) {
      case Binary::kAdd:
        ga = g;
        gb = g;
        break;
      case Binary::kSub:
        ga = g;
        gb = -g;
        break;
      case Binary::kMul:
        ga = g.cwiseProduct(detail::expand(b.value(), rows, cols));
        gb = g.cwiseProduct(detail::expand(a.value(), rows, cols));
        break;
    }
    if (a.requires_grad()) accumulate(a, detail::reduce_to(ga, a.rows(), a.cols()));
    if (b.requires_grad()) accumulate(b, detail::reduce_to(gb, b.rows(), b.cols()));
  });
}

template <typename Scalar>
Tensor<Scalar> add(Tape<Scalar>& tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return elementwise(tape, a, b, Binary::kAdd);
}
template <typename Scalar>
Tensor<Scalar> sub(Tape<Scalar>& tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return elementwise(tape, a, b, Binary::kSub);
}
template <typename Scalar>
Tensor<Scalar> mul(Tape<Scalar>& tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return elementwise(tape, a, b, Binary::kMul);
}

template <typename Scalar>
Tensor<Scalar> add(Tape<Scalar>& tape, const Tensor<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value().array() + s;
  return tape.record(std::move(out), {a}, [a](const Matrix<Scalar>& g) { accumulate(a, g); });
}

template <typename Scalar>
Tensor<Scalar> mul(Tape<Scalar>& tape, const Tensor<Scalar>& a, Scalar s) {
  return tape.record(a.value() * s, {a}, [a, s](const Matrix<Scalar>& g) { accumulate(a, g * s); });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename Scalar>
Tensor<Scalar> softmax(Tape<Scalar>& tape, const Tensor<Scalar>& a, int axis = -1) {
  detail::check_axis(a, axis, "softmax");
  if (axis == 0) {
    Matrix<Scalar> y = detail::softmax_rows<Scalar>(a.value().transpose()).transpose();
    return tape.record(y, {a}, [a, y](const Matrix<Scalar>& g) {
      accumulate(a, detail::softmax_rows_backward<Scalar>(y.transpose(), g.transpose())
                        .transpose());
    });
  }
  Matrix<Scalar> y = detail::softmax_rows<Scalar>(a.value());
  return tape.record(y, {a}, [a, y](const Matrix<Scalar>& g) {
    accumulate(a, detail::softmax_rows_backward<Scalar>(y, g));
  });
}

/// Normalises to zero mean and unit (biased) variance along `axis`; no affine.
template <typename Scalar>
Tensor<Scalar> layernorm(Tape<Scalar>& tape, const Tensor<Scalar>& a, int axis = -1,
                         Scalar eps = Scalar(1e-5)) {
  detail::check_axis(a, axis, "layernorm");
  const bool by_col = axis == 0;
  Matrix<Scalar> x = by_col ? Matrix<Scalar>(a.value().transpose()) : a.value();
  const Index n = x.cols();
  Matrix<Scalar> y(x.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).mean();
    const Scalar var = (x.row(i).array() - mean).square().sum() / Scalar(n);
    inv_std[i] = Scalar(1) / std::sqrt(var + eps);
    y.row(i) = (x.row(i).array() - mean) * inv_std[i];
  }
  Matrix<Scalar> out = by_col ? Matrix<Scalar>(y.transpose()) : y;
  return tape.record(std::move(out), {a}, [a, y, inv_std, by_col](const Matrix<Scalar>& g_in) {
    Matrix<Scalar> g = by_col ? Matrix<Scalar>(g_in.transpose()) : g_in;
    Matrix<Scalar> dx(g.rows(), g.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      const Scalar mg = g.row(i).mean();
      const Scalar mgy = (g.row(i).array() * y.row(i).array()).mean();
      dx.row(i) = inv_std[i] * (g.row(i).array() - mg - y.row(i).array() * mgy);
    }
    if (by_col) {
      accumulate(a, dx.transpose());
    } else {
      accumulate(a, dx);
    }
  });
}

template <typename Scalar>
Tensor<Scalar> gelu(Tape<Scalar>& tape, const Tensor<Scalar>& a) {
  const Scalar inv_sqrt2 = Scalar(0.70710678118654752440);
  Matrix<Scalar> out = a.value().unaryExpr([inv_sqrt2](Scalar x) {
    return Scalar(0.5) * x * (Scalar(1) + std::erf(x * inv_sqrt2));
  });
  return tape.record(std::move(out), {a}, [a, inv_sqrt2](const Matrix<Scalar>& g) {
    const Scalar inv_sqrt_2pi = Scalar(0.39894228040143267794);
    Matrix<Scalar> d = a.value().unaryExpr([&](Scalar x) {
      return Scalar(0.5) * (Scalar(1) + std::erf(x * inv_sqrt2)) +
             x * inv_sqrt_2pi * std::exp(Scalar(-0.5) * x * x);
    });
    accumulate(a, g.cwiseProduct(d));
  });
}

template <typename Scalar>
Tensor<Scalar> relu(Tape<Scalar>& tape, const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  return tape.record(std::move(out), {a}, [a](const Matrix<Scalar>& g) {
    accumulate(a, (a.value().array() > Scalar(0)).select(g, Scalar(0)).matrix());
  });
}

/// Inverted dropout. Identity when `train` is false or `rate` is 0.
template <typename Scalar>
Tensor<Scalar> dropout(Tape<Scalar>& tape, const Tensor<Scalar>& a, double rate, Rng& rng,
                       bool train) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must be in [0, 1)");
  if (!train || rate == 0.0) return a;
  const Scalar scale = Scalar(1.0 / (1.0 - rate));
  Matrix<Scalar> mask(a.rows(), a.cols());
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < rate ? Scalar(0) : scale;
  }
  return tape.record(a.value().cwiseProduct(mask), {a},
                     [a, mask](const Matrix<Scalar>& g) { accumulate(a, g.cwiseProduct(mask)); });
}

// ---------------------------------------------------------------------------
// Indexing and reshaping

template <typename Scalar>
Tensor<Scalar> gather_rows(Tape<Scalar>& tape, const Tensor<Scalar>& table,
                           std::span<const Index> ids) {
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  Matrix<Scalar> out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " outside [0, " +
                       std::to_string(table.rows()) + ")");
    }
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<Index> idv(ids.begin(), ids.end());
  return tape.record(std::move(out), {table}, [table, idv](const Matrix<Scalar>& g) {
    Matrix<Scalar> dt = Matrix<Scalar>::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < idv.size(); ++i) dt.row(idv[i]) += g.row(static_cast<Index>(i));
    accumulate(table, dt);
  });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(Tape<Scalar>& tape, const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool needs = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
    needs = needs || p.requires_grad();
  }
  Matrix<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return tape.record_if(std::move(out), needs, [parts](const Matrix<Scalar>& g) {
    Index at = 0;
    for (const auto& p : parts) {
      accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename Scalar>
Tensor<Scalar> sum(Tape<Scalar>& tape, const Tensor<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return tape.record(std::move(out), {a}, [a](const Matrix<Scalar>& g) {
    accumulate(a, Matrix<Scalar>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Tensor<Scalar> mean(Tape<Scalar>& tape, const Tensor<Scalar>& a) {
  return mul(tape, sum(tape, a), Scalar(1) / Scalar(a.size()));
}

/// Mean over rows of -log softmax(logits)[row, target[row]].
template <typename Scalar>
Tensor<Scalar> cross_entropy(Tape<Scalar>& tape, const Tensor<Scalar>& logits,
                             std::span<const Index> targets) {
  if (static_cast<Index>(targets.size()) != logits.rows()) {
    throw DimensionError("cross_entropy: one target per row required");
  }
  const Index m = logits.rows();
  Matrix<Scalar> probs = detail::softmax_rows<Scalar>(logits.value());
  Scalar loss = 0;
  for (Index i = 0; i < m; ++i) {
    const Index t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= logits.cols()) throw IndexError("cross_entropy: target out of range");
    const auto row = logits.value().row(i);
    const Scalar mx = row.maxCoeff();
    const Scalar lse = mx + std::log((row.array() - mx).exp().sum());
    loss += lse - row(t);
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = loss / Scalar(m);
  std::vector<Index> tv(targets.begin(), targets.end());
  return tape.record(std::move(out), {logits}, [logits, probs, tv, m](const Matrix<Scalar>& g) {
    Matrix<Scalar> d = probs;
    for (Index i = 0; i < m; ++i) d(i, tv[static_cast<std::size_t>(i)]) -= Scalar(1);
    accumulate(logits, d * (g(0, 0) / Scalar(m)));
  });
}

// ---------------------------------------------------------------------------
// Attention

/// Contiguous block of rows belonging to one sequence in a packed batch.
struct Segment {
  Index offset = 0;
  Index length = 0;
};

/// Multi-head causal self-attention over packed sequences. q, k, v are
/// (total_rows x d); each segment attends only within itself and only to
/// positions at or before the query. Heads split the columns evenly.
template <typename Scalar>
Tensor<Scalar> causal_attention(Tape<Scalar>& tape, const Tensor<Scalar>& q,
                                const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                std::span<const Segment> segments, Index heads) {
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("causal_attention: q, k, v shapes differ");
  }
  if (heads <= 0 || q.cols() % heads != 0) {
    throw DimensionError("causal_attention: width not divisible by head count");
  }
  for (const auto& s : segments) {
    if (s.length <= 0 || s.offset < 0 || s.offset + s.length > q.rows()) {
      throw DimensionError("causal_attention: segment outside the packed rows");
    }
  }
  const Index dh = q.cols() / heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  std::vector<Segment> segs(segments.begin(), segments.end());

  Matrix<Scalar> out = Matrix<Scalar>::Zero(q.rows(), q.cols());
  // Attention weights per (segment, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<Matrix<Scalar>>>();
  probs->reserve(segs.size() * static_cast<std::size_t>(heads));
  for (const auto& s : segs) {
    for (Index h = 0; h < heads; ++h) {
      const auto qs = q.value().block(s.offset, h * dh, s.length, dh);
      const auto ks = k.value().block(s.offset, h * dh, s.length, dh);
      const auto vs = v.value().block(s.offset, h * dh, s.length, dh);
      Matrix<Scalar> scores = (qs * ks.transpose()) * scale;
      for (Index i = 0; i < s.length; ++i) {
        for (Index j = i + 1; j < s.length; ++j) scores(i, j) = -std::numeric_limits<Scalar>::infinity();
      }
      Matrix<Scalar> p = detail::softmax_rows<Scalar>(scores);
      out.block(s.offset, h * dh, s.length, dh) = p * vs;
      probs->push_back(std::move(p));
    }
  }
  return tape.record(std::move(out), {q, k, v},
                     [q, k, v, segs, heads, dh, scale, probs](const Matrix<Scalar>& g) {
    Matrix<Scalar> dq = Matrix<Scalar>::Zero(q.rows(), q.cols());
    Matrix<Scalar> dk = Matrix<Scalar>::Zero(k.rows(), k.cols());
    Matrix<Scalar> dv = Matrix<Scalar>::Zero(v.rows(), v.cols());
    std::size_t at = 0;
    for (const auto& s : segs) {
      for (Index h = 0; h < heads; ++h, ++at) {
        const Matrix<Scalar>& p = (*probs)[at];
        const auto qs = q.value().block(s.offset, h * dh, s.length, dh);
        const auto ks = k.value().block(s.offset, h * dh, s.length, dh);
        const auto vs = v.value().block(s.offset, h * dh, s.length, dh);
        const auto gs = g.block(s.offset, h * dh, s.length, dh);
        dv.block(s.offset, h * dh, s.length, dh) = p.transpose() * gs;
        Matrix<Scalar> dp = gs * vs.transpose();
        Matrix<Scalar> ds = detail::softmax_rows_backward<Scalar>(p, dp) * scale;
        dq.block(s.offset, h * dh, s.length, dh) = ds * ks;
        dk.block(s.offset, h * dh, s.length, dh) = ds.transpose() * qs;
      }
    }
    accumulate(q, dq);
    accumulate(k, dk);
    accumulate(v, dv);
  });
}

}  // namespace bridgerec::ad
