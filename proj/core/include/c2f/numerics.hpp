#pragma once

// Dense row-major tensors with reverse-mode differentiation, sized for a
// small transformer. Ops build a node graph when grad mode is on; backward()
// walks it in reverse topological order and accumulates into leaf grads.
// Double precision is the test/verification mode, float the training mode.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "c2f/common.hpp"

namespace c2f::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Grad mode toggle. Ops skip graph construction while disabled; used by the
// finite-difference oracle and by export paths that only need values.

namespace detail {
inline int& no_grad_depth() {
  thread_local int depth = 0;
  return depth;
}
}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth() == 0; }

class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth(); }
  ~NoGradGuard() { --detail::no_grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---------------------------------------------------------------------------

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // sized lazily; empty means "no grad yet"
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward_fn;  // null for leaves

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->values.assign(shape_size(t.node_->shape), value);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (data.size() != shape_size(shape))
      throw ContractError("tensor: data size " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->values.size(); }

  std::span<const T> values() const { return node_->values; }
  // Leaf mutation (parameter updates between graph builds).
  std::span<T> values_mut() { return node_->values; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }

  void zero_grad() {
    if (node_) node_->grad.assign(node_->values.size(), T(0));
  }

  T item() const {
    if (!node_ || node_->values.size() != 1)
      throw ContractError("tensor: item() requires a scalar, got shape " +
                          (node_ ? shape_str(node_->shape) : std::string("<undefined>")));
    return node_->values[0];
  }

  std::shared_ptr<TensorNode<T>>& node() { return node_; }
  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values) {
  return Tensor<T>::from_data(std::move(shape), std::move(values));
}

// Attach parents and a backward function if grad mode is on and any parent
// needs gradients.
template <typename T>
void attach(Tensor<T>& out, std::initializer_list<Tensor<T>> parents,
            std::function<void(TensorNode<T>&)> backward_fn) {
  if (!grad_enabled()) return;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto& p : parents) n.parents.push_back(p.node());
  n.backward_fn = std::move(backward_fn);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Backward pass.

// Accumulates d(loss)/d(leaf) into every reachable requires_grad leaf.
// Repeated calls accumulate additively; callers reset leaf grads explicitly.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));

  // Iterative post-order topological sort over the parent DAG.
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> seen;
  struct Frame {
    TensorNode<T>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  if (loss.node()->requires_grad) stack.push_back({loss.node().get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent == 0) {
      if (seen.count(f.node)) {
        stack.pop_back();
        continue;
      }
      seen.insert(f.node);
    }
    if (f.next_parent < f.node->parents.size()) {
      TensorNode<T>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  // Interior grads are scratch per backward call; leaf grads persist.
  for (TensorNode<T>* n : order) {
    if (n->backward_fn) n->grad.assign(n->values.size(), T(0));
    else n->ensure_grad();
  }
  if (!loss.node()->requires_grad) return;
  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (n->backward_fn) {
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ContractError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  std::vector<T> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor<T> r = detail::make_result(a.shape(), std::move(out));
  detail::attach<T>(r, {a, b}, [an = a.node(), bn = b.node()](TensorNode<T>& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
  });
  return r;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ContractError("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  std::vector<T> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Tensor<T> r = detail::make_result(a.shape(), std::move(out));
  detail::attach<T>(r, {a, b}, [an = a.node(), bn = b.node()](TensorNode<T>& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
  });
  return r;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ContractError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  std::vector<T> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor<T> r = detail::make_result(a.shape(), std::move(out));
  detail::attach<T>(r, {a, b}, [an = a.node(), bn = b.node()](TensorNode<T>& self) {
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += self.grad[i] * bn->values[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        bn->grad[i] += self.grad[i] * an->values[i];
  });
  return r;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  Tensor<T> r = detail::make_result(a.shape(), std::move(out));
  detail::attach<T>(r, {a}, [an = a.node(), s](TensorNode<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
  });
  return r;
}

// x[..., d] + bias[d], bias broadcast over leading dims.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || x.shape().back() != bias.dim(0))
    throw ContractError("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
                        shape_str(bias.shape()));
  const std::size_t d = bias.dim(0);
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size());
  const auto xv = x.values();
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] + bv[j];
  Tensor<T> r = detail::make_result(x.shape(), std::move(out));
  detail::attach<T>(r, {x, bias}, [xn = x.node(), bn = bias.node(), rows, d](TensorNode<T>& self) {
    if (xn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    if (bn->requires_grad)
      for (std::size_t r2 = 0; r2 < rows; ++r2)
        for (std::size_t j = 0; j < d; ++j) bn->grad[j] += self.grad[r2 * d + j];
  });
  return r;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw ContractError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                        shape_str(shape));
  std::vector<T> out(a.values().begin(), a.values().end());
  Tensor<T> r = detail::make_result(std::move(shape), std::move(out));
  detail::attach<T>(r, {a}, [an = a.node()](TensorNode<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
  return r;
}

// ---------------------------------------------------------------------------
// Matrix ops. 2-D [m,k]x[k,n] or batched 3-D [b,m,k]x[b,k,n].

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3)))
    throw ContractError("matmul: ranks must both be 2 or both 3, got " +
                        shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(batched ? 1 : 0);
  const std::size_t k = a.dim(batched ? 2 : 1);
  const std::size_t kb = b.dim(batched ? 1 : 0);
  const std::size_t n = b.dim(batched ? 2 : 1);
  if (k != kb || (batched && b.dim(0) != batch))
    throw ContractError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));

  std::vector<T> out(batch * m * n, T(0));
  const T* av = a.values().data();
  const T* bv = b.values().data();
  for (std::size_t bt = 0; bt < batch; ++bt) {
    const T* A = av + bt * m * k;
    const T* B = bv + bt * k * n;
    T* C = out.data() + bt * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T aik = A[i * k + kk];
        const T* Brow = B + kk * n;
        T* Crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += aik * Brow[j];
      }
    }
  }

  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor<T> r = detail::make_result(std::move(out_shape), std::move(out));
  detail::attach<T>(r, {a, b},
                 [an = a.node(), bn = b.node(), batch, m, k, n](TensorNode<T>& self) {
    const T* g = self.grad.data();
    for (std::size_t bt = 0; bt < batch; ++bt) {
      const T* G = g + bt * m * n;
      const T* A = an->values.data() + bt * m * k;
      const T* B = bn->values.data() + bt * k * n;
      if (an->requires_grad) {
        T* dA = an->grad.data() + bt * m * k;
        // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            const T* Grow = G + i * n;
            const T* Brow = B + kk * n;
            T acc = T(0);
            for (std::size_t j = 0; j < n; ++j) acc += Grow[j] * Brow[j];
            dA[i * k + kk] += acc;
          }
      }
      if (bn->requires_grad) {
        T* dB = bn->grad.data() + bt * k * n;
        // dB = A^T * G
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = A[i * k + kk];
            const T* Grow = G + i * n;
            T* dBrow = dB + kk * n;
            for (std::size_t j = 0; j < n; ++j) dBrow[j] += aik * Grow[j];
          }
      }
    }
  });
  return r;
}

// Swap the last two dims of a 2-D or 3-D tensor.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  if (a.rank() != 2 && a.rank() != 3)
    throw ContractError("transpose_last2: rank must be 2 or 3, got " + shape_str(a.shape()));
  const bool batched = a.rank() == 3;
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(batched ? 1 : 0);
  const std::size_t n = a.dim(batched ? 2 : 1);
  std::vector<T> out(a.size());
  const T* av = a.values().data();
  for (std::size_t bt = 0; bt < batch; ++bt)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out[bt * m * n + j * m + i] = av[bt * m * n + i * n + j];
  Shape out_shape = batched ? Shape{batch, n, m} : Shape{n, m};
  Tensor<T> r = detail::make_result(std::move(out_shape), std::move(out));
  detail::attach<T>(r, {a}, [an = a.node(), batch, m, n](TensorNode<T>& self) {
    for (std::size_t bt = 0; bt < batch; ++bt)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          an->grad[bt * m * n + i * n + j] += self.grad[bt * m * n + j * m + i];
  });
  return r;
}

// [a,b,c] -> [b,a,c]; used to split attention heads.
template <typename T>
Tensor<T> swap01(const Tensor<T>& x) {
  if (x.rank() != 3)
    throw ContractError("swap01: rank must be 3, got " + shape_str(x.shape()));
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2);
  std::vector<T> out(x.size());
  const T* xv = x.values().data();
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(xv + (i * b + j) * c, c, out.data() + (j * a + i) * c);
  Tensor<T> r = detail::make_result(Shape{b, a, c}, std::move(out));
  detail::attach<T>(r, {x}, [xn = x.node(), a, b, c](TensorNode<T>& self) {
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        const T* g = self.grad.data() + (j * a + i) * c;
        T* dst = xn->grad.data() + (i * b + j) * c;
        for (std::size_t t = 0; t < c; ++t) dst[t] += g[t];
      }
  });
  return r;
}

// ---------------------------------------------------------------------------
// Row selection / placement (first dimension).

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  if (a.rank() < 1 || begin > end || end > a.dim(0))
    throw ContractError("slice_rows: range [" + std::to_string(begin) + "," +
                        std::to_string(end) + ") out of bounds for " + shape_str(a.shape()));
  const std::size_t row = a.size() / std::max<std::size_t>(a.dim(0), 1);
  std::vector<T> out((end - begin) * row);
  std::copy_n(a.values().data() + begin * row, out.size(), out.data());
  Shape shape = a.shape();
  shape[0] = end - begin;
  Tensor<T> r = detail::make_result(std::move(shape), std::move(out));
  detail::attach<T>(r, {a}, [an = a.node(), begin, row](TensorNode<T>& self) {
    T* dst = an->grad.data() + begin * row;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
  return r;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Shape tail = parts[0].shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != tail.size() ||
        !std::equal(tail.begin() + 1, tail.end(), p.shape().begin() + 1))
      throw ContractError("concat_rows: trailing dims disagree, " + shape_str(tail) +
                          " vs " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  const std::size_t row = parts[0].size() / std::max<std::size_t>(parts[0].dim(0), 1);
  std::vector<T> out(rows * row);
  std::size_t at = 0;
  for (const auto& p : parts) {
    std::copy_n(p.values().data(), p.size(), out.data() + at);
    at += p.size();
  }
  Shape shape = tail;
  shape[0] = rows;
  Tensor<T> r = detail::make_result(std::move(shape), std::move(out));

  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (grad_enabled() && any) {
    auto& n = *r.node();
    n.requires_grad = true;
    std::vector<std::pair<std::shared_ptr<TensorNode<T>>, std::size_t>> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
      n.parents.push_back(p.node());
      offsets.emplace_back(p.node(), off);
      off += p.size();
    }
    n.backward_fn = [offsets = std::move(offsets)](TensorNode<T>& self) {
      for (const auto& [pn, o] : offsets) {
        if (!pn->requires_grad) continue;
        for (std::size_t i = 0; i < pn->values.size(); ++i)
          pn->grad[i] += self.grad[o + i];
      }
    };
  }
  return r;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::size_t> index) {
  if (a.rank() < 1) throw ContractError("gather_rows: rank must be >= 1");
  for (std::size_t i : index)
    if (i >= a.dim(0))
      throw ContractError("gather_rows: index " + std::to_string(i) + " out of range for " +
                          shape_str(a.shape()));
  const std::size_t row = a.size() / std::max<std::size_t>(a.dim(0), 1);
  std::vector<T> out(index.size() * row);
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(a.values().data() + index[i] * row, row, out.data() + i * row);
  Shape shape = a.shape();
  shape[0] = index.size();
  Tensor<T> r = detail::make_result(std::move(shape), std::move(out));
  detail::attach<T>(r, {a}, [an = a.node(), idx = std::move(index), row](TensorNode<T>& self) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* g = self.grad.data() + i * row;
      T* dst = an->grad.data() + idx[i] * row;
      for (std::size_t j = 0; j < row; ++j) dst[j] += g[j];
    }
  });
  return r;
}

// Place rows[l] at positions[l] of a [total, d] output; every other row is
// fill_row. Positions must be strictly increasing (duplicates are a bug in
// the caller).
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& rows, const std::vector<std::size_t>& positions,
                       std::size_t total, const Tensor<T>& fill_row) {
  if (rows.rank() != 2 || fill_row.rank() != 1 || rows.dim(1) != fill_row.dim(0))
    throw ContractError("scatter_rows: rows " + shape_str(rows.shape()) +
                        " vs fill " + shape_str(fill_row.shape()));
  if (positions.size() != rows.dim(0))
    throw ContractError("scatter_rows: " + std::to_string(positions.size()) +
                        " positions for " + std::to_string(rows.dim(0)) + " rows");
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= total)
      throw ContractError("scatter_rows: position " + std::to_string(positions[i]) +
                          " out of range [0," + std::to_string(total) + ")");
    if (i > 0 && positions[i] <= positions[i - 1])
      throw ContractError("scatter_rows: positions must be strictly increasing");
  }
  const std::size_t d = fill_row.dim(0);
  std::vector<T> out(total * d);
  const T* fv = fill_row.values().data();
  for (std::size_t r2 = 0; r2 < total; ++r2) std::copy_n(fv, d, out.data() + r2 * d);
  for (std::size_t i = 0; i < positions.size(); ++i)
    std::copy_n(rows.values().data() + i * d, d, out.data() + positions[i] * d);
  Tensor<T> r = detail::make_result(Shape{total, d}, std::move(out));
  detail::attach<T>(r, {rows, fill_row},
                 [rn = rows.node(), fn = fill_row.node(), positions, total, d](TensorNode<T>& self) {
    if (rn->requires_grad)
      for (std::size_t i = 0; i < positions.size(); ++i) {
        const T* g = self.grad.data() + positions[i] * d;
        T* dst = rn->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    if (fn->requires_grad) {
      std::size_t pi = 0;
      for (std::size_t r2 = 0; r2 < total; ++r2) {
        if (pi < positions.size() && positions[pi] == r2) {
          ++pi;
          continue;
        }
        const T* g = self.grad.data() + r2 * d;
        for (std::size_t j = 0; j < d; ++j) fn->grad[j] += g[j];
      }
    }
  });
  return r;
}

// base with rows[l] substituted at positions[l]; untouched rows are
// bit-identical to base. Positions must be strictly increasing.
template <typename T>
Tensor<T> scatter_rows_into(const Tensor<T>& rows, const std::vector<std::size_t>& positions,
                            const Tensor<T>& base) {
  if (rows.rank() != 2 || base.rank() != 2 || rows.dim(1) != base.dim(1))
    throw ContractError("scatter_rows_into: rows " + shape_str(rows.shape()) +
                        " vs base " + shape_str(base.shape()));
  if (positions.size() != rows.dim(0))
    throw ContractError("scatter_rows_into: " + std::to_string(positions.size()) +
                        " positions for " + std::to_string(rows.dim(0)) + " rows");
  const std::size_t total = base.dim(0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= total)
      throw ContractError("scatter_rows_into: position " + std::to_string(positions[i]) +
                          " out of range [0," + std::to_string(total) + ")");
    if (i > 0 && positions[i] <= positions[i - 1])
      throw ContractError("scatter_rows_into: positions must be strictly increasing");
  }
  const std::size_t d = base.dim(1);
  std::vector<T> out(base.values().begin(), base.values().end());
  for (std::size_t i = 0; i < positions.size(); ++i)
    std::copy_n(rows.values().data() + i * d, d, out.data() + positions[i] * d);
  Tensor<T> r = detail::make_result(base.shape(), std::move(out));
  detail::attach<T>(r, {rows, base},
                    [rn = rows.node(), bn = base.node(), positions, total, d](TensorNode<T>& self) {
    if (rn->requires_grad)
      for (std::size_t i = 0; i < positions.size(); ++i) {
        const T* g = self.grad.data() + positions[i] * d;
        T* dst = rn->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    if (bn->requires_grad) {
      std::size_t pi = 0;
      for (std::size_t r2 = 0; r2 < total; ++r2) {
        if (pi < positions.size() && positions[pi] == r2) {
          ++pi;
          continue;
        }
        const T* g = self.grad.data() + r2 * d;
        T* dst = bn->grad.data() + r2 * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    }
  });
  return r;
}

// base[offset .. offset+n) += delta, rows outside the span byte-identical.
template <typename T>
Tensor<T> add_rows_span(const Tensor<T>& base, const Tensor<T>& delta, std::size_t offset) {
  if (base.rank() != 2 || delta.rank() != 2 || base.dim(1) != delta.dim(1))
    throw ContractError("add_rows_span: " + shape_str(base.shape()) + " vs " +
                        shape_str(delta.shape()));
  const std::size_t n = delta.dim(0);
  if (offset + n > base.dim(0))
    throw ContractError("add_rows_span: span [" + std::to_string(offset) + "," +
                        std::to_string(offset + n) + ") exceeds " + shape_str(base.shape()));
  const std::size_t d = base.dim(1);
  std::vector<T> out(base.values().begin(), base.values().end());
  const T* dv = delta.values().data();
  T* o = out.data() + offset * d;
  for (std::size_t i = 0; i < n * d; ++i) o[i] += dv[i];
  Tensor<T> r = detail::make_result(base.shape(), std::move(out));
  detail::attach<T>(r, {base, delta},
                 [bn = base.node(), dn = delta.node(), offset, n, d](TensorNode<T>& self) {
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    if (dn->requires_grad) {
      const T* g = self.grad.data() + offset * d;
      for (std::size_t i = 0; i < n * d; ++i) dn->grad[i] += g[i];
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// Nonlinearities and reductions.

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() < 1 || x.shape().back() < 1)
    throw ContractError("softmax_lastdim: needs a non-empty last dim, got " +
                        shape_str(x.shape()));
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  std::vector<T> out(x.size());
  const T* xv = x.values().data();
  for (std::size_t r2 = 0; r2 < rows; ++r2) {
    const T* in = xv + r2 * n;
    T* o = out.data() + r2 * n;
    T mx = in[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  Tensor<T> r = detail::make_result(x.shape(), std::move(out));
  detail::attach<T>(r, {x}, [xn = x.node(), rows, n](TensorNode<T>& self) {
    for (std::size_t r2 = 0; r2 < rows; ++r2) {
      const T* s = self.values.data() + r2 * n;
      const T* g = self.grad.data() + r2 * n;
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += s[j] * g[j];
      T* dst = xn->grad.data() + r2 * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += s[j] * (g[j] - dot);
    }
  });
  return r;
}

// Per-slice normalization over the last dim to zero mean / unit variance
// (eps 1e-6), then the affine gain/bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  if (x.rank() < 1 || gain.rank() != 1 || bias.rank() != 1 ||
      gain.dim(0) != x.shape().back() || bias.dim(0) != x.shape().back())
    throw ContractError("layer_norm: shapes " + shape_str(x.shape()) + ", " +
                        shape_str(gain.shape()) + ", " + shape_str(bias.shape()));
  constexpr T kEps = T(1e-6);
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size());
  std::vector<T> norm(x.size());  // saved normalized values for backward
  std::vector<T> inv_sigma(rows);
  const T* xv = x.values().data();
  const T* gv = gain.values().data();
  const T* bv = bias.values().data();
  for (std::size_t r2 = 0; r2 < rows; ++r2) {
    const T* in = xv + r2 * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = in[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + kEps);
    inv_sigma[r2] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T y = (in[j] - mean) * inv;
      norm[r2 * d + j] = y;
      out[r2 * d + j] = gv[j] * y + bv[j];
    }
  }
  Tensor<T> r = detail::make_result(x.shape(), std::move(out));
  detail::attach<T>(r, {x, gain, bias},
                 [xn = x.node(), gn = gain.node(), bn = bias.node(), norm = std::move(norm),
                  inv_sigma = std::move(inv_sigma), rows, d](TensorNode<T>& self) {
    for (std::size_t r2 = 0; r2 < rows; ++r2) {
      const T* g = self.grad.data() + r2 * d;
      const T* y = norm.data() + r2 * d;
      if (xn->requires_grad) {
        // dx = (gy' - mean(gy') - y * mean(gy' . y)) * inv_sigma, gy' = gain*g
        T m1 = T(0), m2 = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          const T gy = gn->values[j] * g[j];
          m1 += gy;
          m2 += gy * y[j];
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        T* dst = xn->grad.data() + r2 * d;
        for (std::size_t j = 0; j < d; ++j) {
          const T gy = gn->values[j] * g[j];
          dst[j] += (gy - m1 - y[j] * m2) * inv_sigma[r2];
        }
      }
      if (gn->requires_grad)
        for (std::size_t j = 0; j < d; ++j) gn->grad[j] += g[j] * y[j];
      if (bn->requires_grad)
        for (std::size_t j = 0; j < d; ++j) bn->grad[j] += g[j];
    }
  });
  return r;
}

// Tanh-approximation GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  std::vector<T> out(x.size());
  const T* xv = x.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  Tensor<T> r = detail::make_result(x.shape(), std::move(out));
  detail::attach<T>(r, {x}, [xn = x.node()](TensorNode<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = xn->values[i];
      const T u = kC * (v + kA * v * v * v);
      const T t = std::tanh(u);
      const T du = kC * (T(1) + T(3) * kA * v * v);
      const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
      xn->grad[i] += self.grad[i] * d;
    }
  });
  return r;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.values()) total += v;
  Tensor<T> r = detail::make_result(Shape{1}, std::vector<T>{total});
  detail::attach<T>(r, {a}, [an = a.node()](TensorNode<T>& self) {
    const T g = self.grad[0];
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
  return r;
}

// Mean squared error over all elements of (pred - target).
template <typename T>
Tensor<T> mse_mean(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw ContractError("mse_mean: shape mismatch " + shape_str(pred.shape()) + " vs " +
                        shape_str(target.shape()));
  if (pred.size() == 0)
    return Tensor<T>::from_data(Shape{1}, std::vector<T>{T(0)});
  const T inv = T(1) / static_cast<T>(pred.size());
  T total = T(0);
  const auto pv = pred.values();
  const auto tv = target.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const T d = pv[i] - tv[i];
    total += d * d;
  }
  Tensor<T> r = detail::make_result(Shape{1}, std::vector<T>{total * inv});
  detail::attach<T>(r, {pred, target},
                 [pn = pred.node(), tn = target.node(), inv](TensorNode<T>& self) {
    const T g = self.grad[0] * T(2) * inv;
    for (std::size_t i = 0; i < pn->values.size(); ++i) {
      const T d = pn->values[i] - tn->values[i];
      if (pn->requires_grad) pn->grad[i] += g * d;
      if (tn->requires_grad) tn->grad[i] -= g * d;
    }
  });
  return r;
}

// Mean cross-entropy of row-wise class logits [rows, classes] against
// integer targets, via stable log-softmax.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2)
    throw ContractError("cross_entropy_mean: logits must be 2-D, got " +
                        shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (targets.size() != rows)
    throw ContractError("cross_entropy_mean: " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(rows) + " rows");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= classes)
      throw ContractError("cross_entropy_mean: target id " + std::to_string(t) +
                          " outside [0," + std::to_string(classes) + ")");
  if (rows == 0) return Tensor<T>::from_data(Shape{1}, std::vector<T>{T(0)});

  const T* lv = logits.values().data();
  T total = T(0);
  for (std::size_t r2 = 0; r2 < rows; ++r2) {
    const T* in = lv + r2 * classes;
    T mx = in[0];
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, in[j]);
    T lse = T(0);
    for (std::size_t j = 0; j < classes; ++j) lse += std::exp(in[j] - mx);
    lse = std::log(lse) + mx;
    total += lse - in[targets[r2]];
  }
  const T inv = T(1) / static_cast<T>(rows);
  Tensor<T> r = detail::make_result(Shape{1}, std::vector<T>{total * inv});
  detail::attach<T>(r, {logits}, [ln = logits.node(), targets, rows, classes, inv](TensorNode<T>& self) {
    const T g = self.grad[0] * inv;
    for (std::size_t r2 = 0; r2 < rows; ++r2) {
      const T* in = ln->values.data() + r2 * classes;
      T* dst = ln->grad.data() + r2 * classes;
      T mx = in[0];
      for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, in[j]);
      T sum = T(0);
      for (std::size_t j = 0; j < classes; ++j) sum += std::exp(in[j] - mx);
      const T inv_sum = T(1) / sum;
      for (std::size_t j = 0; j < classes; ++j)
        dst[j] += g * std::exp(in[j] - mx) * inv_sum;
      dst[targets[r2]] -= g;
    }
  });
  return r;
}

// x[m,in] * w[in,out] + b[out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_bias(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Finite-difference oracle.

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct GradCheckReport {
  T max_rel_err = T(0);
  std::string worst_param;
  std::size_t worst_index = 0;
  T analytic = T(0);
  T numeric = T(0);
};

// Central-difference check of d f / d params against the analytic backward.
// f() must rebuild the loss from the current parameter values and be
// deterministic. Relative error uses max(|analytic|, |numeric|, 1e-12).
template <typename T>
GradCheckReport<T> finite_diff_check(const std::function<Tensor<T>()>& f,
                                     std::span<const ParamRef<T>> params, T h) {
  for (const auto& p : params)
    if (!p.tensor.requires_grad())
      throw ContractError("finite_diff_check: parameter '" + p.name +
                          "' does not require grad");

  std::vector<std::vector<T>> analytic;
  {
    for (const auto& p : params) const_cast<Tensor<T>&>(p.tensor).zero_grad();
    Tensor<T> loss = f();
    backward(loss);
    for (const auto& p : params)
      analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
  }

  GradCheckReport<T> report;
  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& t = const_cast<Tensor<T>&>(params[pi].tensor);
    auto vals = t.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const T orig = vals[i];
      vals[i] = orig + h;
      const T up = f().item();
      vals[i] = orig - h;
      const T down = f().item();
      vals[i] = orig;
      const T numeric = (up - down) / (T(2) * h);
      const T a = analytic[pi][i];
      const T denom = std::max({std::abs(a), std::abs(numeric), T(1e-12)});
      const T err = std::abs(a - numeric) / denom;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = params[pi].name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace c2f::num
