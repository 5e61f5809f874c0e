#pragma once

// Dense row-major tensors with a reverse-mode tape.
//
// Everything is templated on the scalar type: production code uses float,
// gradient checks instantiate the same graph with double. Ops record onto
// the thread-local active tape (if any); tensors created while no tape is
// active are plain values and safe to share across threads.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "i3/errors.hpp"
#include "i3/rng.hpp"

namespace i3 {

template <class S>
class TapeT;

namespace detail {
template <class S>
inline TapeT<S>*& active_tape() {
  thread_local TapeT<S>* t = nullptr;
  return t;
}
inline std::uint64_t next_tape_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}
}  // namespace detail

template <class S>
struct TensorT {
  std::vector<int> shape;
  std::shared_ptr<std::vector<S>> data;
  // Tape handle. A (pointer, generation) pair: a recycled stack address
  // from an earlier step cannot be mistaken for the live tape.
  TapeT<S>* tape = nullptr;
  std::uint64_t tape_gen = 0;
  int node = -1;

  TensorT() : data(std::make_shared<std::vector<S>>()) {}

  static TensorT zeros(std::vector<int> shape) {
    TensorT t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<S>>(count(t.shape), S(0));
    return t;
  }

  static TensorT full(std::vector<int> shape, S v) {
    TensorT t = zeros(std::move(shape));
    for (S& x : *t.data) x = v;
    return t;
  }

  static TensorT from(std::vector<int> shape, std::vector<S> values) {
    if (count(shape) != values.size()) throw ShapeError("tensor: shape/data size mismatch");
    TensorT t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<S>>(std::move(values));
    return t;
  }

  static TensorT randn(std::vector<int> shape, Rng& rng, double std_dev) {
    TensorT t = zeros(std::move(shape));
    for (S& x : *t.data) x = static_cast<S>(rng.truncated_normal(std_dev));
    return t;
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t size() const { return data->size(); }
  bool is_scalar() const { return size() == 1; }

  // 2-D view; 1-D tensors behave as a single row.
  int rows() const {
    if (shape.size() == 1) return 1;
    if (shape.size() == 2) return shape[0];
    throw ShapeError("tensor: expected 1-D or 2-D");
  }
  int cols() const {
    if (shape.size() == 1) return shape[0];
    if (shape.size() == 2) return shape[1];
    throw ShapeError("tensor: expected 1-D or 2-D");
  }

  S at(int r, int c) const { return (*data)[static_cast<std::size_t>(r) * cols() + c]; }
  S& at(int r, int c) { return (*data)[static_cast<std::size_t>(r) * cols() + c]; }
  S value() const {
    if (!is_scalar()) throw ShapeError("tensor: not a scalar");
    return (*data)[0];
  }
};

using Tensor = TensorT<float>;

// Reverse-mode tape. Nodes are appended in forward order, which is a
// topological order by construction; backward walks them once in reverse.
template <class S>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;
  ~TapeT() {
    if (detail::active_tape<S>() == this) detail::active_tape<S>() = nullptr;
  }

  // RAII activation: ops record onto the innermost active tape.
  class Scope {
   public:
    explicit Scope(TapeT& t) : prev_(detail::active_tape<S>()) {
      detail::active_tape<S>() = &t;
    }
    ~Scope() { detail::active_tape<S>() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    TapeT* prev_;
  };

  static TapeT* active() { return detail::active_tape<S>(); }

  // Registers a leaf (typically a trainable parameter).
  int watch(TensorT<S>& t) {
    if (node_of(t) >= 0) return t.node;
    return add_node(t, {});
  }

  int add_node(TensorT<S>& out, std::vector<int> inputs) {
    Node n;
    n.inputs = std::move(inputs);
    n.out_size = out.size();
    nodes_.push_back(std::move(n));
    out.tape = this;
    out.tape_gen = gen_;
    out.node = static_cast<int>(nodes_.size()) - 1;
    return out.node;
  }

  void set_backward(int node, std::function<void(TapeT&)> fn) {
    nodes_[static_cast<std::size_t>(node)].backward = std::move(fn);
  }

  // Node id of `t` on this tape, or -1 when `t` is a constant here.
  int node_of(const TensorT<S>& t) const {
    return (t.tape == this && t.tape_gen == gen_) ? t.node : -1;
  }

  void backward(const TensorT<S>& loss) {
    if (node_of(loss) < 0) throw GraphError("backward: loss is detached from this tape");
    if (!loss.is_scalar()) throw GraphError("backward: loss is not a scalar");

    // Reachability from the loss node over recorded inputs.
    std::vector<std::uint8_t> reach(nodes_.size(), 0);
    std::vector<int> stack{loss.node};
    reach[static_cast<std::size_t>(loss.node)] = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : nodes_[static_cast<std::size_t>(u)].inputs) {
        if (v >= 0 && !reach[static_cast<std::size_t>(v)]) {
          reach[static_cast<std::size_t>(v)] = 1;
          stack.push_back(v);
        }
      }
    }

    grads_.assign(nodes_.size(), {});
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (reach[i]) grads_[i].assign(nodes_[i].out_size, S(0));
    grads_[static_cast<std::size_t>(loss.node)][0] = S(1);

    for (int i = loss.node; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (reach[static_cast<std::size_t>(i)] && n.backward) n.backward(*this);
    }
  }

  // Gradient buffer for a watched/recorded tensor; empty if unreachable.
  const std::vector<S>& grad(const TensorT<S>& t) const {
    int id = node_of(t);
    if (id < 0) throw GraphError("grad: tensor is not on this tape");
    return grads_[static_cast<std::size_t>(id)];
  }

  std::vector<S>& grad_buffer(int node) { return grads_[static_cast<std::size_t>(node)]; }
  bool has_grad(int node) const {
    return node >= 0 && !grads_[static_cast<std::size_t>(node)].empty();
  }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<int> inputs;
    std::size_t out_size = 0;
    std::function<void(TapeT&)> backward;  // leaves have none
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<S>> grads_;
  std::uint64_t gen_ = detail::next_tape_generation();
};

using Tape = TapeT<float>;

// ---------------------------------------------------------------------------
// op helpers

namespace detail {

template <class S>
void check_finite(const TensorT<S>& t, const char* op) {
  for (S v : *t.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string(op) + ": non-finite value produced");
}

// The active tape, but only if at least one input actually lives on it.
template <class S>
TapeT<S>* recording_tape(std::initializer_list<const TensorT<S>*> ins) {
  TapeT<S>* tp = active_tape<S>();
  if (!tp) return nullptr;
  for (const TensorT<S>* t : ins)
    if (tp->node_of(*t) >= 0) return tp;
  return nullptr;
}

template <class S>
void axpy(std::vector<S>& acc, const std::vector<S>& x, S a) {
  for (std::size_t i = 0; i < x.size(); ++i) acc[i] += a * x[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and shape ops

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape != b.shape) throw ShapeError("add: shape mismatch");
  TensorT<S> out = TensorT<S>::zeros(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  detail::check_finite(out, "add");
  if (TapeT<S>* tp = detail::recording_tape<S>({&a, &b})) {
    int an = tp->node_of(a), bn = tp->node_of(b);
    int on = tp->add_node(out, {an, bn});
    tp->set_backward(on, [an, bn, on](TapeT<S>& t) {
      const auto& g = t.grad_buffer(on);
      if (t.has_grad(an)) detail::axpy(t.grad_buffer(an), g, S(1));
      if (t.has_grad(bn)) detail::axpy(t.grad_buffer(bn), g, S(1));
    });
  }
  return out;
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  TensorT<S> out = TensorT<S>::zeros(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) (*out.data)[i] = c * (*a.data)[i];
  detail::check_finite(out, "scale");
  if (TapeT<S>* tp = detail::recording_tape<S>({&a})) {
    int an = tp->node_of(a);
    int on = tp->add_node(out, {an});
    tp->set_backward(on, [an, on, c](TapeT<S>& t) {
      if (t.has_grad(an)) detail::axpy(t.grad_buffer(an), t.grad_buffer(on), c);
    });
  }
  return out;
}

// m + row broadcast over every row of m.
template <class S>
TensorT<S> add_rowwise(const TensorT<S>& m, const TensorT<S>& row) {
  int r = m.rows(), c = m.cols();
  if (row.size() != static_cast<std::size_t>(c)) throw ShapeError("add_rowwise: width mismatch");
  TensorT<S> out = TensorT<S>::zeros(m.shape);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      (*out.data)[static_cast<std::size_t>(i) * c + j] =
          (*m.data)[static_cast<std::size_t>(i) * c + j] + (*row.data)[static_cast<std::size_t>(j)];
  detail::check_finite(out, "add_rowwise");
  if (TapeT<S>* tp = detail::recording_tape<S>({&m, &row})) {
    int mn = tp->node_of(m), rn = tp->node_of(row);
    int on = tp->add_node(out, {mn, rn});
    tp->set_backward(on, [mn, rn, on, r, c](TapeT<S>& t) {
      const auto& g = t.grad_buffer(on);
      if (t.has_grad(mn)) detail::axpy(t.grad_buffer(mn), g, S(1));
      if (t.has_grad(rn)) {
        auto& gr = t.grad_buffer(rn);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gr[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * c + j];
      }
    });
  }
  return out;
}

namespace detail {

// acc(m x n) += a(m x k) * b(k x n), raw buffers.
template <class S>
void matmul_acc(std::vector<S>& acc, const std::vector<S>& a, const std::vector<S>& b,
                int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      S av = a[static_cast<std::size_t>(i) * k + p];
      if (av == S(0)) continue;
      const S* brow = b.data() + static_cast<std::size_t>(p) * n;
      S* orow = acc.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
}

// acc(m x n) += a(m x k) * b(n x k)^T
template <class S>
void matmul_nt_acc(std::vector<S>& acc, const std::vector<S>& a, const std::vector<S>& b,
                   int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const S* arow = a.data() + static_cast<std::size_t>(i) * k;
      const S* brow = b.data() + static_cast<std::size_t>(j) * k;
      S s = S(0);
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      acc[static_cast<std::size_t>(i) * n + j] += s;
    }
}

// acc(k x n) += a(m x k)^T * b(m x n)
template <class S>
void matmul_tn_acc(std::vector<S>& acc, const std::vector<S>& a, const std::vector<S>& b,
                   int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      S av = a[static_cast<std::size_t>(i) * k + p];
      if (av == S(0)) continue;
      const S* brow = b.data() + static_cast<std::size_t>(i) * n;
      S* orow = acc.data() + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
}

}  // namespace detail

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) throw ShapeError("matmul: inner dimensions differ");
  TensorT<S> out = TensorT<S>::zeros({m, n});
  detail::matmul_acc(*out.data, *a.data, *b.data, m, k, n);
  detail::check_finite(out, "matmul");
  if (TapeT<S>* tp = detail::recording_tape<S>({&a, &b})) {
    int an = tp->node_of(a), bn = tp->node_of(b);
    auto ad = a.data, bd = b.data;
    int on = tp->add_node(out, {an, bn});
    tp->set_backward(on, [an, bn, on, ad, bd, m, k, n](TapeT<S>& t) {
      const auto& g = t.grad_buffer(on);
      if (t.has_grad(an)) detail::matmul_nt_acc(t.grad_buffer(an), g, *bd, m, n, k);
      if (t.has_grad(bn)) detail::matmul_tn_acc(t.grad_buffer(bn), *ad, g, m, k, n);
    });
  }
  return out;
}

// a * b^T, used for attention scores.
template <class S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  int m = a.rows(), k = a.cols(), n = b.rows();
  if (k != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  TensorT<S> out = TensorT<S>::zeros({m, n});
  detail::matmul_nt_acc(*out.data, *a.data, *b.data, m, k, n);
  detail::check_finite(out, "matmul_nt");
  if (TapeT<S>* tp = detail::recording_tape<S>({&a, &b})) {
    int an = tp->node_of(a), bn = tp->node_of(b);
    auto ad = a.data, bd = b.data;
    int on = tp->add_node(out, {an, bn});
    tp->set_backward(on, [an, bn, on, ad, bd, m, k, n](TapeT<S>& t) {
      const auto& g = t.grad_buffer(on);  // m x n
      if (t.has_grad(an)) detail::matmul_acc(t.grad_buffer(an), g, *bd, m, n, k);
      if (t.has_grad(bn)) detail::matmul_tn_acc(t.grad_buffer(bn), g, *ad, m, n, k);
    });
  }
  return out;
}

template <class S>
TensorT<S> concat_rows(const TensorT<S>& a, const TensorT<S>& b) {
  int c = a.cols();
  if (b.cols() != c) throw ShapeError("concat_rows: width mismatch");
  int ra = a.rows(), rb = b.rows();
  TensorT<S> out = TensorT<S>::zeros({ra + rb, c});
  std::copy(a.data->begin(), a.data->end(), out.data->begin());
  std::copy(b.data->begin(), b.data->end(), out.data->begin() + a.size());
  if (TapeT<S>* tp = detail::recording_tape<S>({&a, &b})) {
    int an = tp->node_of(a), bn = tp->node_of(b);
    std::size_t asz = a.size();
    int on = tp->add_node(out, {an, bn});
    tp->set_backward(on, [an, bn, on, asz](TapeT<S>& t) {
      const auto& g = t.grad_buffer(on);
      if (t.has_grad(an)) {
        auto& ga = t.grad_buffer(an);
        for (std::size_t i = 0; i < asz; ++i) ga[i] += g[i];
      }
      if (t.has_grad(bn)) {
        auto& gb = t.grad_buffer(bn);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[asz + i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  int r = parts[0].rows();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
    total += p.cols();
  }
  TensorT<S> out = TensorT<S>::zeros({r, total});
  int off = 0;
  for (const auto& p : parts) {
    int pc = p.cols();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < pc; ++j)
        (*out.data)[static_cast<std::size_t>(i) * total + off + j] =
            (*p.data)[static_cast<std::size_t>(i) * pc + j];
    off += pc;
  }
  TapeT<S>* tp = detail::active_tape<S>();
  bool any = false;
  if (tp)
    for (const auto& p : parts)
      if (tp->node_of(p) >= 0) any = true;
  if (tp && any) {
    std::vector<int> ins;
    std::vector<int> widths;
    for (const auto& p : parts) {
      ins.push_back(tp->node_of(p));
      widths.push_back(p.cols());
    }
    int on = tp->add_node(out, ins);
    tp->set_backward(on, [ins, widths, on, r, total](TapeT<S>& t) {
      const auto& g = t.grad_buffer(on);
      int off2 = 0;
      for (std::size_t pi = 0; pi < ins.size(); ++pi) {
        int pc = widths[pi];
        if (t.has_grad(ins[pi])) {
          auto& gp = t.grad_buffer(ins[pi]);
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j)
              gp[static_cast<std::size_t>(i) * pc + j] += g[static_cast<std::size_t>(i) * total + off2 + j];
        }
        off2 += pc;
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> slice_rows(const TensorT<S>& a, int r0, int r1) {
  int r = a.rows(), c = a.cols();
  if (r0 < 0 || r1 > r || r0 > r1) throw ShapeError("slice_rows: bad range");
  TensorT<S> out = TensorT<S>::zeros({r1 - r0, c});
  std::copy(a.data->begin() + static_cast<std::size_t>(r0) * c,
            a.data->begin() + static_cast<std::size_t>(r1) * c, out.data->begin());
  if (TapeT<S>* tp = detail::recording_tape<S>({&a})) {
    int an = tp->node_of(a);
    int on = tp->add_node(out, {an});
    tp->set_backward(on, [an, on, r0, c](TapeT<S>& t) {
      if (!t.has_grad(an)) return;
      const auto& g = t.grad_buffer(on);
      auto& ga = t.grad_buffer(an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[static_cast<std::size_t>(r0) * c + i] += g[i];
    });
  }
  return out;
}

// Row r as a 1-D tensor.
template <class S>
TensorT<S> take_row(const TensorT<S>& a, int r) {
  int rows = a.rows(), c = a.cols();
  if (r < 0 || r >= rows) throw ShapeError("take_row: row out of range");
  TensorT<S> out = TensorT<S>::zeros({c});
  std::copy(a.data->begin() + static_cast<std::size_t>(r) * c,
            a.data->begin() + static_cast<std::size_t>(r + 1) * c, out.data->begin());
  if (TapeT<S>* tp = detail::recording_tape<S>({&a})) {
    int an = tp->node_of(a);
    int on = tp->add_node(out, {an});
    tp->set_backward(on, [an, on, r, c](TapeT<S>& t) {
      if (!t.has_grad(an)) return;
      const auto& g = t.grad_buffer(on);
      auto& ga = t.grad_buffer(an);
      for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(r) * c + j] += g[static_cast<std::size_t>(j)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// nonlinearities

// Row-wise softmax. `mask`, when non-empty, is an m*n boolean buffer; masked
// entries come out exactly 0 and a fully masked row is an error.
template <class S>
TensorT<S> softmax_rows(const TensorT<S>& x, const std::vector<std::uint8_t>& mask = {}) {
  int m = x.rows(), n = x.cols();
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(m) * n)
    throw ShapeError("softmax_rows: mask size mismatch");
  TensorT<S> out = TensorT<S>::zeros(x.shape);
  for (int i = 0; i < m; ++i) {
    const S* row = x.data->data() + static_cast<std::size_t>(i) * n;
    const std::uint8_t* mrow = mask.empty() ? nullptr : mask.data() + static_cast<std::size_t>(i) * n;
    S mx = S(0);
    bool seen = false;
    for (int j = 0; j < n; ++j) {
      if (mrow && !mrow[j]) continue;
      if (!seen || row[j] > mx) mx = row[j];
      seen = true;
    }
    if (!seen) throw NumericError("softmax_rows: fully masked row");
    S denom = S(0);
    S* orow = out.data->data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      if (mrow && !mrow[j]) {
        orow[j] = S(0);
        continue;
      }
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= denom;
  }
  detail::check_finite(out, "softmax_rows");
  if (TapeT<S>* tp = detail::recording_tape<S>({&x})) {
    int xn = tp->node_of(x);
    auto od = out.data;
    int on = tp->add_node(out, {xn});
    tp->set_backward(on, [xn, on, od, m, n](TapeT<S>& t) {
      if (!t.has_grad(xn)) return;
      const auto& g = t.grad_buffer(on);
      auto& gx = t.grad_buffer(xn);
      for (int i = 0; i < m; ++i) {
        const S* s = od->data() + static_cast<std::size_t>(i) * n;
        const S* gr = g.data() + static_cast<std::size_t>(i) * n;
        S dotv = S(0);
        for (int j = 0; j < n; ++j) dotv += gr[j] * s[j];
        S* gxr = gx.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) gxr[j] += s[j] * (gr[j] - dotv);
      }
    });
  }
  return out;
}

// Per-row normalization over the last dimension, then gamma * xhat + beta.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps = S(1e-5)) {
  int m = x.rows(), n = x.cols();
  if (gamma.size() != static_cast<std::size_t>(n) || beta.size() != static_cast<std::size_t>(n))
    throw ShapeError("layer_norm: gamma/beta width mismatch");
  TensorT<S> out = TensorT<S>::zeros(x.shape);
  auto xhat = std::make_shared<std::vector<S>>(x.size());
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const S* row = x.data->data() + static_cast<std::size_t>(i) * n;
    S mean = S(0);
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= S(n);
    S var = S(0);
    for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= S(n);
    S istd = S(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(i)] = istd;
    for (int j = 0; j < n; ++j) {
      S xh = (row[j] - mean) * istd;
      (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
      (*out.data)[static_cast<std::size_t>(i) * n + j] = (*gamma.data)[static_cast<std::size_t>(j)] * xh + (*beta.data)[static_cast<std::size_t>(j)];
    }
  }
  detail::check_finite(out, "layer_norm");
  if (TapeT<S>* tp = detail::recording_tape<S>({&x, &gamma, &beta})) {
    int xn = tp->node_of(x), gn = tp->node_of(gamma), bn = tp->node_of(beta);
    auto gd = gamma.data;
    int on = tp->add_node(out, {xn, gn, bn});
    tp->set_backward(on, [xn, gn, bn, on, xhat, inv_std, gd, m, n](TapeT<S>& t) {
      const auto& g = t.grad_buffer(on);
      for (int i = 0; i < m; ++i) {
        const S* gr = g.data() + static_cast<std::size_t>(i) * n;
        const S* xh = xhat->data() + static_cast<std::size_t>(i) * n;
        if (t.has_grad(bn)) {
          auto& gb = t.grad_buffer(bn);
          for (int j = 0; j < n; ++j) gb[static_cast<std::size_t>(j)] += gr[j];
        }
        if (t.has_grad(gn)) {
          auto& gg = t.grad_buffer(gn);
          for (int j = 0; j < n; ++j) gg[static_cast<std::size_t>(j)] += gr[j] * xh[j];
        }
        if (t.has_grad(xn)) {
          // h = gamma .* g; dx = (h - mean(h) - xhat * mean(h .* xhat)) * inv_std
          S mean_h = S(0), mean_hx = S(0);
          for (int j = 0; j < n; ++j) {
            S h = (*gd)[static_cast<std::size_t>(j)] * gr[j];
            mean_h += h;
            mean_hx += h * xh[j];
          }
          mean_h /= S(n);
          mean_hx /= S(n);
          S istd = (*inv_std)[static_cast<std::size_t>(i)];
          auto& gx = t.grad_buffer(xn);
          for (int j = 0; j < n; ++j) {
            S h = (*gd)[static_cast<std::size_t>(j)] * gr[j];
            gx[static_cast<std::size_t>(i) * n + j] += (h - mean_h - xh[j] * mean_hx) * istd;
          }
        }
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> gelu(const TensorT<S>& x) {
  TensorT<S> out = TensorT<S>::zeros(x.shape);
  const S inv_sqrt2 = S(0.70710678118654752440);
  for (std::size_t i = 0; i < x.size(); ++i) {
    S v = (*x.data)[i];
    (*out.data)[i] = S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2));
  }
  detail::check_finite(out, "gelu");
  if (TapeT<S>* tp = detail::recording_tape<S>({&x})) {
    int xn = tp->node_of(x);
    auto xd = x.data;
    int on = tp->add_node(out, {xn});
    tp->set_backward(on, [xn, on, xd](TapeT<S>& t) {
      if (!t.has_grad(xn)) return;
      const auto& g = t.grad_buffer(on);
      auto& gx = t.grad_buffer(xn);
      const S inv_sqrt2 = S(0.70710678118654752440);
      const S inv_sqrt2pi = S(0.39894228040143267794);
      for (std::size_t i = 0; i < xd->size(); ++i) {
        S v = (*xd)[i];
        S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
        S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

// Inverted dropout; keep-mask is saved for the backward pass.
template <class S>
TensorT<S> dropout(const TensorT<S>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout: rate must be < 1");
  TensorT<S> out = TensorT<S>::zeros(x.shape);
  auto keep = std::make_shared<std::vector<S>>(x.size());
  S inv = S(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < x.size(); ++i) {
    S k = rng.uniform() < p ? S(0) : inv;
    (*keep)[i] = k;
    (*out.data)[i] = (*x.data)[i] * k;
  }
  if (TapeT<S>* tp = detail::recording_tape<S>({&x})) {
    int xn = tp->node_of(x);
    int on = tp->add_node(out, {xn});
    tp->set_backward(on, [xn, on, keep](TapeT<S>& t) {
      if (!t.has_grad(xn)) return;
      const auto& g = t.grad_buffer(on);
      auto& gx = t.grad_buffer(xn);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*keep)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// gathers and reductions

// Rows of `table` selected by id; gradient scatter-adds back into the table.
template <class S>
TensorT<S> gather_rows(const TensorT<S>& table, const std::vector<int>& ids) {
  int rows = table.rows(), c = table.cols();
  TensorT<S> out = TensorT<S>::zeros({static_cast<int>(ids.size()), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int id = ids[i];
    if (id < 0 || id >= rows) throw ShapeError("gather_rows: id out of range");
    std::copy(table.data->begin() + static_cast<std::size_t>(id) * c,
              table.data->begin() + static_cast<std::size_t>(id + 1) * c,
              out.data->begin() + i * static_cast<std::size_t>(c));
  }
  if (TapeT<S>* tp = detail::recording_tape<S>({&table})) {
    int tn = tp->node_of(table);
    int on = tp->add_node(out, {tn});
    tp->set_backward(on, [tn, on, ids, c](TapeT<S>& t) {
      if (!t.has_grad(tn)) return;
      const auto& g = t.grad_buffer(on);
      auto& gt = t.grad_buffer(tn);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < c; ++j)
          gt[static_cast<std::size_t>(ids[i]) * c + j] += g[i * static_cast<std::size_t>(c) + j];
    });
  }
  return out;
}

template <class S>
TensorT<S> dot(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
  S s = S(0);
  for (std::size_t i = 0; i < a.size(); ++i) s += (*a.data)[i] * (*b.data)[i];
  TensorT<S> out = TensorT<S>::from({1}, {s});
  detail::check_finite(out, "dot");
  if (TapeT<S>* tp = detail::recording_tape<S>({&a, &b})) {
    int an = tp->node_of(a), bn = tp->node_of(b);
    auto ad = a.data, bd = b.data;
    int on = tp->add_node(out, {an, bn});
    tp->set_backward(on, [an, bn, on, ad, bd](TapeT<S>& t) {
      S g = t.grad_buffer(on)[0];
      if (t.has_grad(an)) detail::axpy(t.grad_buffer(an), *bd, g);
      if (t.has_grad(bn)) detail::axpy(t.grad_buffer(bn), *ad, g);
    });
  }
  return out;
}

// Scalars stacked into a 1-D tensor (for loss pooling and score softmaxes).
template <class S>
TensorT<S> stack_scalars(const std::vector<TensorT<S>>& xs) {
  if (xs.empty()) throw ShapeError("stack_scalars: no inputs");
  TensorT<S> out = TensorT<S>::zeros({static_cast<int>(xs.size())});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!xs[i].is_scalar()) throw ShapeError("stack_scalars: non-scalar input");
    (*out.data)[i] = (*xs[i].data)[0];
  }
  TapeT<S>* tp = detail::active_tape<S>();
  bool any = false;
  if (tp)
    for (const auto& x : xs)
      if (tp->node_of(x) >= 0) any = true;
  if (tp && any) {
    std::vector<int> ins;
    for (const auto& x : xs) ins.push_back(tp->node_of(x));
    int on = tp->add_node(out, ins);
    tp->set_backward(on, [ins, on](TapeT<S>& t) {
      const auto& g = t.grad_buffer(on);
      for (std::size_t i = 0; i < ins.size(); ++i)
        if (t.has_grad(ins[i])) t.grad_buffer(ins[i])[0] += g[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> mean_all(const TensorT<S>& x) {
  if (x.size() == 0) throw ShapeError("mean_all: empty tensor");
  S s = S(0);
  for (S v : *x.data) s += v;
  const S invn = S(1) / S(x.size());
  TensorT<S> out = TensorT<S>::from({1}, {s * invn});
  detail::check_finite(out, "mean_all");
  if (TapeT<S>* tp = detail::recording_tape<S>({&x})) {
    int xn = tp->node_of(x);
    int on = tp->add_node(out, {xn});
    tp->set_backward(on, [xn, on, invn](TapeT<S>& t) {
      if (!t.has_grad(xn)) return;
      S g = t.grad_buffer(on)[0] * invn;
      for (S& v : t.grad_buffer(xn)) v += g;
    });
  }
  return out;
}

// Mean over rows of -log softmax(logits)[target]. Fused op with the
// closed-form gradient (softmax - one_hot) / n_rows.
template <class S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int>& targets) {
  int m = logits.rows(), n = logits.cols();
  if (static_cast<int>(targets.size()) != m) throw ShapeError("cross_entropy: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= n) throw DataError("cross_entropy: target id out of range");
  auto probs = std::make_shared<std::vector<S>>(logits.size());
  S loss = S(0);
  for (int i = 0; i < m; ++i) {
    const S* row = logits.data->data() + static_cast<std::size_t>(i) * n;
    S mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    S denom = S(0);
    S* prow = probs->data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    for (int j = 0; j < n; ++j) prow[j] /= denom;
    loss -= std::log(prow[targets[static_cast<std::size_t>(i)]]);
  }
  loss /= S(m);
  TensorT<S> out = TensorT<S>::from({1}, {loss});
  detail::check_finite(out, "cross_entropy");
  if (TapeT<S>* tp = detail::recording_tape<S>({&logits})) {
    int ln = tp->node_of(logits);
    int on = tp->add_node(out, {ln});
    tp->set_backward(on, [ln, on, probs, targets, m, n](TapeT<S>& t) {
      if (!t.has_grad(ln)) return;
      S g = t.grad_buffer(on)[0] / S(m);
      auto& gl = t.grad_buffer(ln);
      for (int i = 0; i < m; ++i) {
        const S* prow = probs->data() + static_cast<std::size_t>(i) * n;
        S* grow = gl.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) grow[j] += g * prow[j];
        grow[targets[static_cast<std::size_t>(i)]] -= g;
      }
    });
  }
  return out;
}

// -log softmax(scores)[0] over a 1-D score vector, computed with
// max-subtraction. Entry 0 is the positive.
template <class S>
TensorT<S> nll_first(const TensorT<S>& scores) {
  if (scores.shape.size() != 1 || scores.size() < 2)
    throw ShapeError("nll_first: need a 1-D vector with at least two scores");
  int n = static_cast<int>(scores.size());
  const S* s = scores.data->data();
  S mx = s[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, s[j]);
  S denom = S(0);
  std::vector<S> p(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    p[static_cast<std::size_t>(j)] = std::exp(s[j] - mx);
    denom += p[static_cast<std::size_t>(j)];
  }
  for (int j = 0; j < n; ++j) p[static_cast<std::size_t>(j)] /= denom;
  TensorT<S> out = TensorT<S>::from({1}, {std::log(denom) + mx - s[0]});
  detail::check_finite(out, "nll_first");
  if (TapeT<S>* tp = detail::recording_tape<S>({&scores})) {
    int sn = tp->node_of(scores);
    auto probs = std::make_shared<std::vector<S>>(std::move(p));
    int on = tp->add_node(out, {sn});
    tp->set_backward(on, [sn, on, probs](TapeT<S>& t) {
      if (!t.has_grad(sn)) return;
      S g = t.grad_buffer(on)[0];
      auto& gs = t.grad_buffer(sn);
      for (std::size_t j = 0; j < probs->size(); ++j) gs[j] += g * (*probs)[j];
      gs[0] -= g;
    });
  }
  return out;
}

}  // namespace i3
