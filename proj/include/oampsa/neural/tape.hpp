#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oampsa/error.hpp"
#include "oampsa/numerics.hpp"

// Minimal reverse-mode differentiation over dense matrices. A Tape records
// nodes in creation order; backward() walks them in reverse and accumulates
// adjoints into every node that (transitively) depends on a parameter.

namespace oampsa::neural {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const RealMatrix& value() const;
  const RealMatrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, int)>;

  Var constant(RealMatrix value) { return push(std::move(value), false, nullptr); }
  Var constant(double value) { return constant(RealMatrix::Constant(1, 1, value)); }
  Var parameter(RealMatrix value) { return push(std::move(value), true, nullptr); }

  const RealMatrix& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  const RealMatrix& grad(int id) const {
    const auto& n = nodes_.at(static_cast<std::size_t>(id));
    if (n.grad.size() == 0) {
      static thread_local RealMatrix zeros;
      zeros = RealMatrix::Zero(n.value.rows(), n.value.cols());
      return zeros;
    }
    return n.grad;
  }

  /// Adjoint buffer of a node, zero-initialized on first access.
  RealMatrix& grad_buffer(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = RealMatrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Records an op output. The node needs a gradient iff any input does.
  Var record(RealMatrix value, std::initializer_list<Var> inputs, Backprop backprop) {
    bool rg = false;
    for (const auto& v : inputs) {
      check_owner(v);
      rg = rg || requires_grad(v.id);
    }
    return push(std::move(value), rg, rg ? std::move(backprop) : nullptr);
  }
  Var record(RealMatrix value, std::span<const Var> inputs, Backprop backprop) {
    bool rg = false;
    for (const auto& v : inputs) {
      check_owner(v);
      rg = rg || requires_grad(v.id);
    }
    return push(std::move(value), rg, rg ? std::move(backprop) : nullptr);
  }

  /// Reverse sweep from a scalar node.
  void backward(Var loss) {
    if (nodes_.empty() || loss.tape != this || loss.id < 0 || static_cast<std::size_t>(loss.id) >= nodes_.size()) {
      throw NumericError("backward called before a forward pass was recorded on this tape");
    }
    const auto& out = nodes_[static_cast<std::size_t>(loss.id)].value;
    if (out.rows() != 1 || out.cols() != 1) throw DimensionError("backward requires a scalar output");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad_buffer(loss.id)(0, 0) = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backprop && n.grad.size() != 0) n.backprop(*this, id);
    }
  }

  void check_owner(const Var& v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw DimensionError("variable does not belong to this tape");
    }
  }

 private:
  struct Node {
    RealMatrix value;
    RealMatrix grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  Var push(RealMatrix value, bool rg, Backprop backprop) {
    nodes_.push_back(Node{std::move(value), RealMatrix(), rg, std::move(backprop)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

inline const RealMatrix& Var::value() const { return tape->value(id); }
inline const RealMatrix& Var::grad() const { return tape->grad(id); }

namespace ops {

namespace detail {
inline void accumulate(Tape& t, const Var& v, const RealMatrix& g) {
  if (t.requires_grad(v.id)) t.grad_buffer(v.id) += g;
}
inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul inner dimensions");
  Tape& t = *a.tape;
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& t, int self) {
    const RealMatrix& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad_buffer(a.id).noalias() += g * b.value().transpose();
    if (t.requires_grad(b.id)) t.grad_buffer(b.id).noalias() += a.value().transpose() * g;
  });
}

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  Tape& t = *a.tape;
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, int self) {
    detail::accumulate(t, a, t.grad(self));
    detail::accumulate(t, b, t.grad(self));
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  Tape& t = *a.tape;
  return t.record(a.value() - b.value(), {a, b}, [a, b](Tape& t, int self) {
    detail::accumulate(t, a, t.grad(self));
    detail::accumulate(t, b, -t.grad(self));
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  Tape& t = *a.tape;
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, int self) {
    const RealMatrix& g = t.grad(self);
    detail::accumulate(t, a, g.cwiseProduct(b.value()));
    detail::accumulate(t, b, g.cwiseProduct(a.value()));
  });
}

/// a * s for a 1x1 variable s.
inline Var mul_scalar(Var a, Var s) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError("mul_scalar expects a 1x1 factor");
  Tape& t = *a.tape;
  return t.record(a.value() * s.scalar(), {a, s}, [a, s](Tape& t, int self) {
    const RealMatrix& g = t.grad(self);
    detail::accumulate(t, a, g * s.scalar());
    if (t.requires_grad(s.id)) t.grad_buffer(s.id)(0, 0) += g.cwiseProduct(a.value()).sum();
  });
}

inline Var scale(Var a, double c) {
  Tape& t = *a.tape;
  return t.record(a.value() * c, {a}, [a, c](Tape& t, int self) { detail::accumulate(t, a, t.grad(self) * c); });
}

inline Var add_constant(Var a, double c) {
  Tape& t = *a.tape;
  return t.record((a.value().array() + c).matrix(), {a},
                  [a](Tape& t, int self) { detail::accumulate(t, a, t.grad(self)); });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.record(a.value().transpose(), {a},
                  [a](Tape& t, int self) { detail::accumulate(t, a, t.grad(self).transpose()); });
}

inline Var relu(Var a) {
  Tape& t = *a.tape;
  return t.record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, int self) {
    detail::accumulate(t, a, (a.value().array() > 0.0).select(t.grad(self).array(), 0.0).matrix());
  });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  RealMatrix s = a.value().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  return t.record(std::move(s), {a}, [a](Tape& t, int self) {
    const RealMatrix& s = t.value(self);
    detail::accumulate(t, a, t.grad(self).cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

inline Var abs(Var a) {
  Tape& t = *a.tape;
  return t.record(a.value().cwiseAbs(), {a}, [a](Tape& t, int self) {
    const RealMatrix sign = a.value().unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    detail::accumulate(t, a, t.grad(self).cwiseProduct(sign));
  });
}

/// max(a, floor) elementwise; the gradient passes where a > floor.
inline Var clamp_min(Var a, double floor) {
  Tape& t = *a.tape;
  return t.record(a.value().cwiseMax(floor), {a}, [a, floor](Tape& t, int self) {
    detail::accumulate(t, a, (a.value().array() > floor).select(t.grad(self).array(), 0.0).matrix());
  });
}

/// Row-wise softmax of beta * a.
inline Var softmax_rows(Var a, double beta = 1.0) {
  Tape& t = *a.tape;
  RealMatrix p(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double mx = a.value().row(i).maxCoeff();
    p.row(i) = (beta * (a.value().row(i).array() - mx)).exp();
    p.row(i) /= p.row(i).sum();
  }
  return t.record(std::move(p), {a}, [a, beta](Tape& t, int self) {
    const RealMatrix& p = t.value(self);
    const RealMatrix& g = t.grad(self);
    const RealVector inner = g.cwiseProduct(p).rowwise().sum();
    RealMatrix da = p.cwiseProduct((g.colwise() - inner)) * beta;
    detail::accumulate(t, a, da);
  });
}

/// Per-row layer normalization (z - mean) / sqrt(var + eps).
inline Var layer_norm_rows(Var a, double eps) {
  Tape& t = *a.tape;
  const auto C = static_cast<double>(a.cols());
  RealMatrix y(a.rows(), a.cols());
  RealVector inv_std(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double mu = a.value().row(i).sum() / C;
    const double var = (a.value().row(i).array() - mu).square().sum() / C;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    y.row(i) = (a.value().row(i).array() - mu) * inv_std(i);
  }
  return t.record(std::move(y), {a}, [a, inv_std, C](Tape& t, int self) {
    const RealMatrix& y = t.value(self);
    const RealMatrix& g = t.grad(self);
    RealMatrix da(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double mean_g = g.row(i).sum() / C;
      const double mean_gy = g.row(i).dot(y.row(i)) / C;
      da.row(i) = inv_std(i) * (g.row(i).array() - mean_g - y.row(i).array() * mean_gy);
    }
    detail::accumulate(t, a, da);
  });
}

/// Mean over rows: (R x C) -> (1 x C).
inline Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const auto R = static_cast<double>(a.rows());
  return t.record(a.value().colwise().mean(), {a}, [a, R](Tape& t, int self) {
    detail::accumulate(t, a, t.grad(self).replicate(a.rows(), 1) / R);
  });
}

/// Sum of all entries -> 1 x 1.
inline Var sum(Var a) {
  Tape& t = *a.tape;
  return t.record(RealMatrix::Constant(1, 1, a.value().sum()), {a}, [a](Tape& t, int self) {
    detail::accumulate(t, a, RealMatrix::Constant(a.rows(), a.cols(), t.grad(self)(0, 0)));
  });
}

/// Repeats a 1x1 variable into a rows x cols block.
inline Var broadcast(Var s, Eigen::Index rows, Eigen::Index cols) {
  if (s.rows() != 1 || s.cols() != 1) throw DimensionError("broadcast expects a 1x1 source");
  Tape& t = *s.tape;
  return t.record(RealMatrix::Constant(rows, cols, s.scalar()), {s}, [s](Tape& t, int self) {
    if (t.requires_grad(s.id)) t.grad_buffer(s.id)(0, 0) += t.grad(self).sum();
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  Tape& t = *parts.front().tape;
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols row mismatch");
    cols += p.cols();
  }
  RealMatrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [keep](Tape& t, int self) {
    const RealMatrix& g = t.grad(self);
    Eigen::Index c = 0;
    for (const auto& p : keep) {
      if (t.requires_grad(p.id)) t.grad_buffer(p.id) += g.middleCols(c, p.cols());
      c += p.cols();
    }
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw DimensionError("slice_cols out of range");
  Tape& t = *a.tape;
  return t.record(a.value().middleCols(start, count), {a}, [a, start, count](Tape& t, int self) {
    if (t.requires_grad(a.id)) t.grad_buffer(a.id).middleCols(start, count) += t.grad(self);
  });
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw DimensionError("slice_rows out of range");
  Tape& t = *a.tape;
  return t.record(a.value().middleRows(start, count), {a}, [a, start, count](Tape& t, int self) {
    if (t.requires_grad(a.id)) t.grad_buffer(a.id).middleRows(start, count) += t.grad(self);
  });
}

/// Divides every row by its sum.
inline Var normalize_rows(Var a) {
  Tape& t = *a.tape;
  const RealVector totals = a.value().rowwise().sum();
  if ((totals.array() <= 0.0).any()) throw NumericError("normalize_rows: non-positive row sum");
  RealMatrix q = a.value().array().colwise() / totals.array();
  return t.record(std::move(q), {a}, [a, totals](Tape& t, int self) {
    const RealMatrix& q = t.value(self);
    const RealMatrix& g = t.grad(self);
    const RealVector inner = g.cwiseProduct(q).rowwise().sum();
    RealMatrix da = (g.colwise() - inner).array().colwise() / totals.array();
    detail::accumulate(t, a, da);
  });
}

/// Posterior over PAM levels for r_i observed in Gaussian noise of variance tau_sq:
/// P_ik = softmax_k(-(r_i - a_k)^2 / (2 tau_sq)). r is n x 1, tau_sq 1 x 1.
inline Var gaussian_posteriors(Var r, Var tau_sq, std::span<const double> levels) {
  if (r.cols() != 1 || tau_sq.rows() != 1 || tau_sq.cols() != 1) throw DimensionError("gaussian_posteriors shapes");
  Tape& t = *r.tape;
  const auto K = static_cast<Eigen::Index>(levels.size());
  const Eigen::Map<const Eigen::RowVectorXd> lv(levels.data(), K);
  const double tau = tau_sq.scalar();
  RealMatrix diff = (-lv).replicate(r.rows(), 1);
  diff.colwise() += r.value().col(0);  // r_i - a_k
  RealMatrix logits = -diff.array().square() / (2.0 * tau);
  RealMatrix p(r.rows(), K);
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return t.record(std::move(p), {r, tau_sq}, [r, tau_sq, diff, tau](Tape& t, int self) {
    const RealMatrix& p = t.value(self);
    const RealMatrix& g = t.grad(self);
    const RealVector inner = g.cwiseProduct(p).rowwise().sum();
    const RealMatrix dlogits = p.cwiseProduct(g.colwise() - inner);
    if (t.requires_grad(r.id)) t.grad_buffer(r.id).col(0) += (-dlogits.cwiseProduct(diff) / tau).rowwise().sum();
    if (t.requires_grad(tau_sq.id)) {
      t.grad_buffer(tau_sq.id)(0, 0) += (dlogits.array() * diff.array().square()).sum() / (2.0 * tau * tau);
    }
  });
}

inline constexpr double kProbClampLo = 1e-7;
inline constexpr double kProbClampHi = 1.0 - 1e-7;

/// Summed binary cross-entropy of probabilities P against 0/1 targets Y,
/// with P clamped to [1e-7, 1 - 1e-7].
inline Var binary_cross_entropy_sum(Var P, const RealMatrix& Y) {
  if (P.rows() != Y.rows() || P.cols() != Y.cols()) throw DimensionError("cross-entropy target shape");
  Tape& t = *P.tape;
  const RealMatrix Pc = P.value().cwiseMax(kProbClampLo).cwiseMin(kProbClampHi);
  double loss = -(Y.array() * Pc.array().log() + (1.0 - Y.array()) * (1.0 - Pc.array()).log()).sum();
  if (!P.value().allFinite()) loss = std::numeric_limits<double>::quiet_NaN();
  return t.record(RealMatrix::Constant(1, 1, loss), {P}, [P, Y, Pc](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    const auto& raw = P.value().array();
    const auto inside = (raw >= kProbClampLo && raw <= kProbClampHi);
    const Eigen::ArrayXXd d = (-Y.array() / Pc.array() + (1.0 - Y.array()) / (1.0 - Pc.array())) * g;
    detail::accumulate(t, P, inside.select(d, 0.0).matrix());
  });
}

}  // namespace ops
}  // namespace oampsa::neural
