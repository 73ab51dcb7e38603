#pragma once

// Reverse-mode differentiation over row-major Eigen matrices. A Tape records
// every operation of one forward pass; backward() replays it in reverse.
// Templated on the scalar so the same model code runs in float for training
// and in double for gradient checking.

#include <cmath>
#include <deque>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "anameta/error.hpp"

namespace anameta::kdf {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Id = int;

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Id self)>;

  /// With gradients disabled parameters are read but never collect gradients.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  bool grad_enabled() const { return grad_enabled_; }

  Id constant(Mat<T> v) { return push(std::move(v), false, {}); }

  /// A leaf that reads `value` in place; its gradient is added to *sink.
  Id param(const Mat<T>& value, Mat<T>* sink) {
    if (!grad_enabled_) sink = nullptr;
    Node n;
    n.ref = &value;
    n.needs_grad = sink != nullptr;
    if (sink)
      n.back = [sink](Tape& t, Id self) {
        if (sink->rows() != t.value(self).rows() || sink->cols() != t.value(self).cols())
          *sink = Mat<T>::Zero(t.value(self).rows(), t.value(self).cols());
        *sink += t.grad(self);
      };
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
  }

  Id push(Mat<T> v, bool needs, Backward back) {
    Node n;
    n.owned = std::move(v);
    n.needs_grad = needs;
    if (needs) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size()) - 1;
  }

  const Mat<T>& value(Id i) const {
    const Node& n = nodes_[i];
    return n.ref ? *n.ref : n.owned;
  }
  bool needs_grad(Id i) const { return nodes_[i].needs_grad; }

  /// Gradient buffer of node i, zero-allocated on first touch.
  Mat<T>& grad(Id i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 && value(i).size() != 0) n.grad = Mat<T>::Zero(value(i).rows(), value(i).cols());
    return n.grad;
  }

  void backward(Id out) {
    if (value(out).size() != 1) throw Error(ErrorCode::ShapeMismatch, "backward needs a 1x1 output");
    grad(out).setOnes();
    for (Id i = out; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.back && n.grad.size() != 0) n.back(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> owned;
    const Mat<T>* ref = nullptr;
    Mat<T> grad;
    bool needs_grad = false;
    Backward back;
  };
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

namespace ops {

inline void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

template <class T>
Id matmul(Tape<T>& t, Id a, Id b) {
  require(t.value(a).cols() == t.value(b).rows(), "matmul: inner dimensions differ");
  return t.push(t.value(a) * t.value(b), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape<T>& t, Id s) {
    if (t.needs_grad(a)) t.grad(a).noalias() += t.grad(s) * t.value(b).transpose();
    if (t.needs_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * t.grad(s);
  });
}

/// a · bᵀ without materialising the transpose.
template <class T>
Id matmul_nt(Tape<T>& t, Id a, Id b) {
  require(t.value(a).cols() == t.value(b).cols(), "matmul_nt: widths differ");
  return t.push(t.value(a) * t.value(b).transpose(), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape<T>& t, Id s) {
    if (t.needs_grad(a)) t.grad(a).noalias() += t.grad(s) * t.value(b);
    if (t.needs_grad(b)) t.grad(b).noalias() += t.grad(s).transpose() * t.value(a);
  });
}

template <class T>
Id add(Tape<T>& t, Id a, Id b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "add: shapes differ");
  return t.push(t.value(a) + t.value(b), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape<T>& t, Id s) {
    if (t.needs_grad(a)) t.grad(a) += t.grad(s);
    if (t.needs_grad(b)) t.grad(b) += t.grad(s);
  });
}

/// x + bias, with a 1×d bias broadcast over rows.
template <class T>
Id add_row(Tape<T>& t, Id x, Id bias) {
  require(t.value(bias).rows() == 1 && t.value(bias).cols() == t.value(x).cols(), "add_row: bias shape");
  Mat<T> v = t.value(x).rowwise() + t.value(bias).row(0);
  return t.push(std::move(v), t.needs_grad(x) || t.needs_grad(bias), [x, bias](Tape<T>& t, Id s) {
    if (t.needs_grad(x)) t.grad(x) += t.grad(s);
    if (t.needs_grad(bias)) t.grad(bias) += t.grad(s).colwise().sum();
  });
}

template <class T>
Id hadamard(Tape<T>& t, Id a, Id b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "hadamard: shapes differ");
  return t.push(t.value(a).cwiseProduct(t.value(b)), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape<T>& t, Id s) {
    if (t.needs_grad(a)) t.grad(a) += t.grad(s).cwiseProduct(t.value(b));
    if (t.needs_grad(b)) t.grad(b) += t.grad(s).cwiseProduct(t.value(a));
  });
}

template <class T>
Id scale(Tape<T>& t, Id a, T k) {
  return t.push(t.value(a) * k, t.needs_grad(a), [a, k](Tape<T>& t, Id s) { t.grad(a) += t.grad(s) * k; });
}

/// Row-wise softmax. Entries far below the row maximum underflow to exactly 0,
/// which is how additive −1e30 masks remove positions.
template <class T>
Mat<T> softmax_rows_value(const Mat<T>& x) {
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mx = x.row(r).maxCoeff();
    // Scalar std::exp: Eigen's vectorised exp clamps its argument, which would
    // turn a masked -1e30 into a subnormal instead of an exact zero.
    T total = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) total += (y(r, c) = std::exp(x(r, c) - mx));
    y.row(r) /= total;
  }
  return y;
}

template <class T>
Id softmax_rows(Tape<T>& t, Id x) {
  return t.push(softmax_rows_value(t.value(x)), t.needs_grad(x), [x](Tape<T>& t, Id s) {
    const Mat<T>& y = t.value(s);
    const Mat<T>& dy = t.grad(s);
    Mat<T> inner = dy.cwiseProduct(y).rowwise().sum();
    t.grad(x).array() += y.array() * (dy.colwise() - inner.col(0)).array();
  });
}

template <class T>
Id layer_norm(Tape<T>& t, Id x, Id gamma, Id beta, T eps = T(1e-5)) {
  const Mat<T>& xv = t.value(x);
  const Eigen::Index n = xv.rows(), d = xv.cols();
  Mat<T> xhat(n, d);
  std::vector<T> inv_std(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    inv_std[static_cast<std::size_t>(r)] = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std[static_cast<std::size_t>(r)];
  }
  Mat<T> y = (xhat.array().rowwise() * t.value(gamma).row(0).array()).matrix();
  y.rowwise() += t.value(beta).row(0);
  const Id xh = t.constant(std::move(xhat));
  const bool needs = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
  return t.push(std::move(y), needs, [x, gamma, beta, xh, inv_std](Tape<T>& t, Id s) {
    const Mat<T>& dy = t.grad(s);
    const Mat<T>& xhat = t.value(xh);
    if (t.needs_grad(gamma)) t.grad(gamma) += dy.cwiseProduct(xhat).colwise().sum();
    if (t.needs_grad(beta)) t.grad(beta) += dy.colwise().sum();
    if (!t.needs_grad(x)) return;
    const Mat<T> g = (dy.array().rowwise() * t.value(gamma).row(0).array()).matrix();
    const T d = static_cast<T>(g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const T mg = g.row(r).mean();
      const T mgx = g.row(r).dot(xhat.row(r)) / d;
      t.grad(x).row(r).array() +=
          inv_std[static_cast<std::size_t>(r)] * (g.row(r).array() - mg - xhat.row(r).array() * mgx);
    }
  });
}

/// Exact GELU, x·Φ(x).
template <class T>
Id gelu(Tape<T>& t, Id x) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Mat<T> y = t.value(x).unaryExpr([inv_sqrt2](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); });
  return t.push(std::move(y), t.needs_grad(x), [x, inv_sqrt2](Tape<T>& t, Id s) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    const Mat<T> d = t.value(x).unaryExpr([&](T v) {
      return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
    });
    t.grad(x) += t.grad(s).cwiseProduct(d);
  });
}

template <class T>
Id concat_cols(Tape<T>& t, const std::vector<Id>& parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  const Eigen::Index n = t.value(parts[0]).rows();
  Eigen::Index w = 0;
  bool needs = false;
  for (Id p : parts) {
    require(t.value(p).rows() == n, "concat_cols: row counts differ");
    w += t.value(p).cols();
    needs = needs || t.needs_grad(p);
  }
  Mat<T> v(n, w);
  Eigen::Index off = 0;
  for (Id p : parts) {
    v.middleCols(off, t.value(p).cols()) = t.value(p);
    off += t.value(p).cols();
  }
  return t.push(std::move(v), needs, [parts](Tape<T>& t, Id s) {
    Eigen::Index off = 0;
    for (Id p : parts) {
      const Eigen::Index w = t.value(p).cols();
      if (t.needs_grad(p)) t.grad(p) += t.grad(s).middleCols(off, w);
      off += w;
    }
  });
}

template <class T>
Id slice_cols(Tape<T>& t, Id x, Eigen::Index start, Eigen::Index width) {
  require(start >= 0 && start + width <= t.value(x).cols(), "slice_cols: out of range");
  return t.push(t.value(x).middleCols(start, width), t.needs_grad(x), [x, start, width](Tape<T>& t, Id s) {
    t.grad(x).middleCols(start, width) += t.grad(s);
  });
}

/// Rows of `table` picked by index; the backward pass scatter-adds.
template <class T>
Id gather_rows(Tape<T>& t, Id table, const std::vector<int>& rows) {
  const Mat<T>& tv = t.value(table);
  Mat<T> v(static_cast<Eigen::Index>(rows.size()), tv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < tv.rows(), "gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = tv.row(rows[i]);
  }
  return t.push(std::move(v), t.needs_grad(table), [table, rows](Tape<T>& t, Id s) {
    for (std::size_t i = 0; i < rows.size(); ++i) t.grad(table).row(rows[i]) += t.grad(s).row(static_cast<Eigen::Index>(i));
  });
}

template <class T>
Id sum_scalars(Tape<T>& t, const std::vector<Id>& xs) {
  Mat<T> v = Mat<T>::Zero(1, 1);
  bool needs = false;
  for (Id x : xs) {
    require(t.value(x).size() == 1, "sum_scalars: operand is not 1x1");
    v(0, 0) += t.value(x)(0, 0);
    needs = needs || t.needs_grad(x);
  }
  return t.push(std::move(v), needs, [xs](Tape<T>& t, Id s) {
    for (Id x : xs)
      if (t.needs_grad(x)) t.grad(x)(0, 0) += t.grad(s)(0, 0);
  });
}

/// Mean binary cross-entropy over selected rows of an n×1 logit column.
template <class T>
Id bce_logits(Tape<T>& t, Id logits, const std::vector<int>& rows, const std::vector<T>& targets) {
  require(rows.size() == targets.size() && !rows.empty(), "bce_logits: need aligned, non-empty targets");
  const Mat<T>& z = t.value(logits);
  T loss = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const T v = z(rows[k], 0);
    // softplus(v) − y·v, written to stay finite for large |v|
    loss += std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))) - targets[k] * v;
  }
  const T n = static_cast<T>(rows.size());
  Mat<T> out(1, 1);
  out(0, 0) = loss / n;
  return t.push(std::move(out), t.needs_grad(logits), [logits, rows, targets, n](Tape<T>& t, Id s) {
    const T g = t.grad(s)(0, 0) / n;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const T v = t.value(logits)(rows[k], 0);
      const T p = T(1) / (T(1) + std::exp(-v));
      t.grad(logits)(rows[k], 0) += g * (p - targets[k]);
    }
  });
}

/// Cross-entropy over selected rows of an n×K logit matrix. A row with several
/// gold classes contributes the mean of its per-class terms, so every row
/// weighs the same however many labels it carries. The result is the mean
/// over rows.
template <class T>
Id cross_entropy(Tape<T>& t, Id logits, const std::vector<int>& rows, const std::vector<std::vector<int>>& gold) {
  require(rows.size() == gold.size() && !rows.empty(), "cross_entropy: need aligned, non-empty targets");
  const Mat<T>& z = t.value(logits);
  const Eigen::Index k = z.cols();
  Mat<T> probs(static_cast<Eigen::Index>(rows.size()), k);
  T loss = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(!gold[r].empty(), "cross_entropy: row without gold classes");
    const auto row = z.row(rows[r]);
    const T mx = row.maxCoeff();
    const T lse = mx + std::log((row.array() - mx).exp().sum());
    probs.row(static_cast<Eigen::Index>(r)) = (row.array() - lse).exp().matrix();
    T term = 0;
    for (int g : gold[r]) {
      require(g >= 0 && g < k, "cross_entropy: gold class out of range");
      term += lse - row(g);
    }
    loss += term / static_cast<T>(gold[r].size());
  }
  const T n = static_cast<T>(rows.size());
  Mat<T> out(1, 1);
  out(0, 0) = loss / n;
  return t.push(std::move(out), t.needs_grad(logits), [logits, rows, gold, probs, n](Tape<T>& t, Id s) {
    const T g = t.grad(s)(0, 0) / n;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto dst = t.grad(logits).row(rows[r]);
      dst += g * probs.row(static_cast<Eigen::Index>(r));
      const T share = g / static_cast<T>(gold[r].size());
      for (int c : gold[r]) dst(c) -= share;
    }
  });
}

/// Mean of squared differences to a fixed target.
template <class T>
Id mse(Tape<T>& t, Id x, const Mat<T>& target) {
  require(t.value(x).rows() == target.rows() && t.value(x).cols() == target.cols(), "mse: shapes differ");
  const Mat<T> diff = t.value(x) - target;
  const T n = static_cast<T>(diff.size());
  Mat<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return t.push(std::move(out), t.needs_grad(x), [x, diff, n](Tape<T>& t, Id s) {
    t.grad(x) += diff * (T(2) * t.grad(s)(0, 0) / n);
  });
}

/// ½‖x‖², the textbook check for a gradient checker.
template <class T>
Id half_squared_norm(Tape<T>& t, Id x) {
  Mat<T> out(1, 1);
  out(0, 0) = T(0.5) * t.value(x).squaredNorm();
  return t.push(std::move(out), t.needs_grad(x), [x](Tape<T>& t, Id s) { t.grad(x) += t.value(x) * t.grad(s)(0, 0); });
}

}  // namespace ops
}  // namespace anameta::kdf
