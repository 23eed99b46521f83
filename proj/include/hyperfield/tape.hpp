#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "hyperfield/common.hpp"
#include "hyperfield/param_store.hpp"

namespace hyperfield {

template <typename T>
class Tape;

// Handle to a node on a tape. Values are matrices; by convention rows index
// the batch and columns index features.
template <typename T>
struct Value {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Mat<T>& val() const;
  int64_t rows() const { return val().rows(); }
  int64_t cols() const { return val().cols(); }
};

// Reverse-mode tape. One tape per forward/backward pass; parameter leaves
// copy the current values and collect gradients locally so that several
// tapes can run in parallel against one read-only ParamStore. The owner
// merges leaf gradients back in a fixed order (merge_param_grads).
template <typename T>
class Tape {
 public:
  struct Node {
    Mat<T> val;
    Mat<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::function<void(Tape&, int)> back;  // (tape, self id)
    ParamTensor<T>* param = nullptr;
  };

  Value<T> constant(Mat<T> m) {
    nodes_.push_back(Node{std::move(m), {}, false, false, nullptr, nullptr});
    return {this, int(nodes_.size() - 1)};
  }

  Value<T> param(ParamTensor<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.val = p.values;
    n.requires_grad = p.trainable;
    n.param = &p;
    nodes_.push_back(std::move(n));
    int id = int(nodes_.size() - 1);
    param_nodes_[&p] = id;
    if (p.trainable) param_leaves_.push_back(id);
    return {this, id};
  }

  Value<T> make_node(Mat<T> val, bool requires_grad, std::function<void(Tape&, int)> back) {
    Node n;
    n.val = std::move(val);
    n.requires_grad = requires_grad;
    if (requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return {this, int(nodes_.size() - 1)};
  }

  Node& node(int id) { return nodes_[size_t(id)]; }
  const Mat<T>& val(int id) const { return nodes_[size_t(id)].val; }
  bool needs(int id) const { return nodes_[size_t(id)].requires_grad; }

  // Gradient buffer, zero-initialized on first touch.
  Mat<T>& grad_buf(int id) {
    Node& n = nodes_[size_t(id)];
    if (!n.has_grad) {
      n.grad = Mat<T>::Zero(n.val.rows(), n.val.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  // Propagates d(loss)/d(node) into the local gradient buffers. Repeated
  // calls accumulate. Loss must be 1x1.
  void backward(Value<T> loss) {
    if (loss.tape != this) throw ContractError("backward: loss from another tape");
    Node& ln = node(loss.id);
    if (ln.val.rows() != 1 || ln.val.cols() != 1)
      throw ContractError("backward: loss must be a scalar node");
    grad_buf(loss.id)(0, 0) += T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[size_t(id)];
      if (n.has_grad && n.back) n.back(*this, id);
    }
  }

  // Adds local leaf gradients into the owning ParamTensor buffers, in leaf
  // creation order. Call exactly once per backward pass (single-threaded).
  void merge_param_grads() {
    for (int id : param_leaves_) {
      Node& n = nodes_[size_t(id)];
      if (n.has_grad) n.param->grad += n.grad;
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<ParamTensor<T>*, int> param_nodes_;
  std::vector<int> param_leaves_;
};

template <typename T>
const Mat<T>& Value<T>::val() const {
  return tape->val(id);
}

namespace detail {

template <typename T>
void check_same_shape(const Value<T>& a, const Value<T>& b, const char* op) {
  if (a.val().rows() != b.val().rows() || a.val().cols() != b.val().cols())
    throw ContractError(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---- affine ----------------------------------------------------------------

// y = x * w^T + 1 b^T    x: [n,in], w: [out,in], b: [out,1]
template <typename T>
Value<T> linear(Value<T> x, Value<T> w, Value<T> b) {
  Tape<T>& t = *x.tape;
  if (x.cols() != w.cols())
    throw ConfigError("linear: input width " + std::to_string(x.cols()) +
                      " does not match weight fan-in " + std::to_string(w.cols()));
  if (b.rows() != w.rows() || b.cols() != 1) throw ConfigError("linear: bad bias shape");
  Mat<T> y = x.val() * w.val().transpose();
  y.rowwise() += b.val().col(0).transpose();
  bool rg = t.needs(x.id) || t.needs(w.id) || t.needs(b.id);
  int xi = x.id, wi = w.id, bi = b.id;
  return t.make_node(std::move(y), rg, [xi, wi, bi](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.node(self).grad;
    if (tp.needs(xi)) tp.grad_buf(xi).noalias() += g * tp.val(wi);
    if (tp.needs(wi)) tp.grad_buf(wi).noalias() += g.transpose() * tp.val(xi);
    if (tp.needs(bi)) tp.grad_buf(bi).col(0).noalias() += g.colwise().sum().transpose();
  });
}

// y = x * w^T (no bias); also the tangent rule of `linear`
template <typename T>
Value<T> linear_nt(Value<T> x, Value<T> w) {
  Tape<T>& t = *x.tape;
  if (x.cols() != w.cols()) throw ConfigError("linear_nt: fan-in mismatch");
  Mat<T> y = x.val() * w.val().transpose();
  bool rg = t.needs(x.id) || t.needs(w.id);
  int xi = x.id, wi = w.id;
  return t.make_node(std::move(y), rg, [xi, wi](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.node(self).grad;
    if (tp.needs(xi)) tp.grad_buf(xi).noalias() += g * tp.val(wi);
    if (tp.needs(wi)) tp.grad_buf(wi).noalias() += g.transpose() * tp.val(xi);
  });
}

// ---- elementwise unary -----------------------------------------------------

template <typename T, typename FwdFn, typename BackFn>
Value<T> unary_op(Value<T> x, FwdFn fwd, BackFn back_mul) {
  // back_mul(x_val, y_val) must return the elementwise dy/dx factor
  Tape<T>& t = *x.tape;
  Mat<T> y = fwd(x.val());
  int xi = x.id;
  return t.make_node(std::move(y), t.needs(xi), [xi, back_mul](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.node(self).grad;
    tp.grad_buf(xi).array() += g.array() * back_mul(tp.val(xi), tp.val(self)).array();
  });
}

template <typename T>
Value<T> relu(Value<T> x) {
  return unary_op(
      x, [](const Mat<T>& v) { return v.cwiseMax(T(0)).eval(); },
      [](const Mat<T>& v, const Mat<T>&) {
        return (v.array() > T(0)).template cast<T>().matrix().eval();
      });
}

template <typename T>
Value<T> sin(Value<T> x) {
  return unary_op(
      x, [](const Mat<T>& v) { return v.array().sin().matrix().eval(); },
      [](const Mat<T>& v, const Mat<T>&) { return v.array().cos().matrix().eval(); });
}

template <typename T>
Value<T> cos(Value<T> x) {
  return unary_op(
      x, [](const Mat<T>& v) { return v.array().cos().matrix().eval(); },
      [](const Mat<T>& v, const Mat<T>&) { return (-v.array().sin()).matrix().eval(); });
}

template <typename T>
Value<T> sigmoid(Value<T> x) {
  return unary_op(
      x,
      [](const Mat<T>& v) {
        return (T(1) / (T(1) + (-v.array()).exp())).matrix().eval();
      },
      [](const Mat<T>&, const Mat<T>& y) {
        return (y.array() * (T(1) - y.array())).matrix().eval();
      });
}

template <typename T>
Value<T> softplus(Value<T> x) {
  return unary_op(
      x,
      [](const Mat<T>& v) {
        // log(1 + e^x), stable for large |x|
        return (v.array().max(T(0)) + ((-v.array().abs()).exp() + T(1)).log()).matrix().eval();
      },
      [](const Mat<T>& v, const Mat<T>&) {
        return (T(1) / (T(1) + (-v.array()).exp())).matrix().eval();
      });
}

template <typename T>
Value<T> exp(Value<T> x) {
  return unary_op(
      x, [](const Mat<T>& v) { return v.array().exp().matrix().eval(); },
      [](const Mat<T>&, const Mat<T>& y) { return y; });
}

template <typename T>
Value<T> log(Value<T> x) {
  return unary_op(
      x, [](const Mat<T>& v) { return v.array().log().matrix().eval(); },
      [](const Mat<T>& v, const Mat<T>&) { return v.cwiseInverse().eval(); });
}

template <typename T>
Value<T> sqrt(Value<T> x) {
  return unary_op(
      x, [](const Mat<T>& v) { return v.array().sqrt().matrix().eval(); },
      [](const Mat<T>&, const Mat<T>& y) {
        return (T(0.5) / y.array()).matrix().eval();
      });
}

// Elementwise function with caller-supplied value/derivative, for the smooth
// se(3) coefficient functions whose derivatives need series fallbacks.
template <typename T>
Value<T> smooth_fn(Value<T> x, T (*f)(T), T (*df)(T)) {
  Tape<T>& t = *x.tape;
  Mat<T> y = x.val().unaryExpr(f);
  int xi = x.id;
  return t.make_node(std::move(y), t.needs(xi), [xi, df](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.node(self).grad;
    tp.grad_buf(xi).array() += g.array() * tp.val(xi).unaryExpr(df).array();
  });
}

// ---- elementwise binary / scalar -------------------------------------------

template <typename T>
Value<T> add(Value<T> a, Value<T> b) {
  detail::check_same_shape(a, b, "add");
  Tape<T>& t = *a.tape;
  Mat<T> y = a.val() + b.val();
  bool rg = t.needs(a.id) || t.needs(b.id);
  int ai = a.id, bi = b.id;
  return t.make_node(std::move(y), rg, [ai, bi](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.node(self).grad;
    if (tp.needs(ai)) tp.grad_buf(ai) += g;
    if (tp.needs(bi)) tp.grad_buf(bi) += g;
  });
}

template <typename T>
Value<T> sub(Value<T> a, Value<T> b) {
  detail::check_same_shape(a, b, "sub");
  Tape<T>& t = *a.tape;
  Mat<T> y = a.val() - b.val();
  bool rg = t.needs(a.id) || t.needs(b.id);
  int ai = a.id, bi = b.id;
  return t.make_node(std::move(y), rg, [ai, bi](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.node(self).grad;
    if (tp.needs(ai)) tp.grad_buf(ai) += g;
    if (tp.needs(bi)) tp.grad_buf(bi) -= g;
  });
}

template <typename T>
Value<T> mul(Value<T> a, Value<T> b) {
  detail::check_same_shape(a, b, "mul");
  Tape<T>& t = *a.tape;
  Mat<T> y = a.val().cwiseProduct(b.val());
  bool rg = t.needs(a.id) || t.needs(b.id);
  int ai = a.id, bi = b.id;
  return t.make_node(std::move(y), rg, [ai, bi](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.node(self).grad;
    if (tp.needs(ai)) tp.grad_buf(ai).array() += g.array() * tp.val(bi).array();
    if (tp.needs(bi)) tp.grad_buf(bi).array() += g.array() * tp.val(ai).array();
  });
}

template <typename T>
Value<T> div(Value<T> a, Value<T> b) {
  detail::check_same_shape(a, b, "div");
  Tape<T>& t = *a.tape;
  Mat<T> y = a.val().cwiseQuotient(b.val());
  bool rg = t.needs(a.id) || t.needs(b.id);
  int ai = a.id, bi = b.id;
  return t.make_node(std::move(y), rg, [ai, bi](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.node(self).grad;
    if (tp.needs(ai)) tp.grad_buf(ai).array() += g.array() / tp.val(bi).array();
    if (tp.needs(bi))
      tp.grad_buf(bi).array() -=
          g.array() * tp.val(self).array() / tp.val(bi).array();
  });
}

template <typename T>
Value<T> scale(Value<T> x, T k) {
  Tape<T>& t = *x.tape;
  Mat<T> y = x.val() * k;
  int xi = x.id;
  return t.make_node(std::move(y), t.needs(xi), [xi, k](Tape<T>& tp, int self) {
    tp.grad_buf(xi) += tp.node(self).grad * k;
  });
}

template <typename T>
Value<T> add_scalar(Value<T> x, T k) {
  Tape<T>& t = *x.tape;
  Mat<T> y = x.val().array() + k;
  int xi = x.id;
  return t.make_node(std::move(y), t.needs(xi), [xi](Tape<T>& tp, int self) {
    tp.grad_buf(xi) += tp.node(self).grad;
  });
}

template <typename T>
Value<T> operator+(Value<T> a, Value<T> b) { return add(a, b); }
template <typename T>
Value<T> operator-(Value<T> a, Value<T> b) { return sub(a, b); }
template <typename T>
Value<T> operator*(Value<T> a, Value<T> b) { return mul(a, b); }
template <typename T>
Value<T> operator*(Value<T> a, T k) { return scale(a, k); }
template <typename T>
Value<T> operator*(T k, Value<T> a) { return scale(a, k); }
template <typename T>
Value<T> operator/(Value<T> a, Value<T> b) { return div(a, b); }
template <typename T>
Value<T> operator-(Value<T> a) { return scale(a, T(-1)); }

// ---- structure -------------------------------------------------------------

template <typename T>
Value<T> concat_cols(const std::vector<Value<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty");
  Tape<T>& t = *parts[0].tape;
  int64_t rows = parts[0].rows(), cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ContractError("concat_cols: row mismatch");
    cols += p.cols();
    rg = rg || t.needs(p.id);
  }
  Mat<T> y(rows, cols);
  std::vector<int> ids;
  std::vector<int64_t> offs;
  int64_t off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.val();
    ids.push_back(p.id);
    offs.push_back(off);
    off += p.cols();
  }
  return t.make_node(std::move(y), rg, [ids, offs](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.node(self).grad;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (!tp.needs(ids[i])) continue;
      int64_t w = tp.val(ids[i]).cols();
      tp.grad_buf(ids[i]) += g.middleCols(offs[i], w);
    }
  });
}

template <typename T>
Value<T> col_block(Value<T> x, int64_t first, int64_t n) {
  Tape<T>& t = *x.tape;
  if (first < 0 || first + n > x.cols()) throw ContractError("col_block: out of range");
  Mat<T> y = x.val().middleCols(first, n);
  int xi = x.id;
  return t.make_node(std::move(y), t.needs(xi), [xi, first, n](Tape<T>& tp, int self) {
    tp.grad_buf(xi).middleCols(first, n) += tp.node(self).grad;
  });
}

template <typename T>
Value<T> col(Value<T> x, int64_t c) { return col_block(x, c, 1); }

// Row gather with scatter-add backward. Used for per-frame code lookups.
template <typename T>
Value<T> gather_rows(Value<T> table, std::vector<int> idx) {
  Tape<T>& t = *table.tape;
  const Mat<T>& m = table.val();
  Mat<T> y(int64_t(idx.size()), m.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= m.rows()) throw ContractError("gather_rows: index out of range");
    y.row(int64_t(i)) = m.row(idx[i]);
  }
  int ti = table.id;
  return t.make_node(std::move(y), t.needs(ti),
                     [ti, idx = std::move(idx)](Tape<T>& tp, int self) {
                       const Mat<T>& g = tp.node(self).grad;
                       Mat<T>& tg = tp.grad_buf(ti);
                       for (size_t i = 0; i < idx.size(); ++i)
                         tg.row(idx[i]) += g.row(int64_t(i));
                     });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Value<T> sum_all(Value<T> x) {
  Tape<T>& t = *x.tape;
  Mat<T> y(1, 1);
  y(0, 0) = x.val().sum();
  int xi = x.id;
  return t.make_node(std::move(y), t.needs(xi), [xi](Tape<T>& tp, int self) {
    tp.grad_buf(xi).array() += tp.node(self).grad(0, 0);
  });
}

template <typename T>
Value<T> mean_all(Value<T> x) {
  Tape<T>& t = *x.tape;
  T inv_n = T(1) / T(x.val().size());
  Mat<T> y(1, 1);
  y(0, 0) = x.val().sum() * inv_n;
  int xi = x.id;
  return t.make_node(std::move(y), t.needs(xi), [xi, inv_n](Tape<T>& tp, int self) {
    tp.grad_buf(xi).array() += tp.node(self).grad(0, 0) * inv_n;
  });
}

}  // namespace hyperfield
