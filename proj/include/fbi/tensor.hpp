// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with tape-free reverse-mode autodiff. Each op
// result keeps shared references to its inputs plus a backward closure;
// backward() topologically sorts the reachable subgraph and runs the
// closures once each in reverse order.
//
// The engine is instantiated for float (training) and double (used by tests
// as a 64-bit reference forward for finite-difference checks).

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fbi {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// sign(w) = +1 for w > 0, -1 otherwise (zero, -0.0 and NaN all map to -1).
template <typename T>
constexpr T binary_sign(T w) {
  return w > T(0) ? T(1) : T(-1);
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into parents. Empty for leaves.
  std::function<void(TensorNode&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from(Shape shape, std::vector<T> data, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::size_t flat) const { return node_->data.at(flat); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad();
  void zero_grad() { node_->grad.clear(); }

  // A new leaf holding a copy of the values, cut from the graph.
  BasicTensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// While alive, ops on this thread produce leaves without recording history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Runs reverse-mode accumulation from a scalar. Leaf gradients accumulate
// across calls; intermediate gradients are reset at the start of each call.
template <typename T>
void backward(const BasicTensor<T>& loss);

// --- ops -------------------------------------------------------------------

// a: [..., m] (leading extents flattened into rows), b: [m, n] -> [..., n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
// 2-D transpose.
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

// Softmax along the trailing axis with max subtraction.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);

// x: [..., d], weight: [d]. y = x / sqrt(mean(x^2) + eps) * weight.
template <typename T>
BasicTensor<T> rmsnorm(const BasicTensor<T>& x, const BasicTensor<T>& weight, T eps);

// table: [vocab, d]; ids index rows; result shape = lead + [d].
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids,
                         const Shape& lead);

// Rotary position embedding over x: [batch, seq, heads*head_dim]; adjacent
// pairs (2i, 2i+1) of each head are rotated by pos * base^(-2i/head_dim).
template <typename T>
BasicTensor<T> rope(const BasicTensor<T>& x, std::size_t n_heads, T base = T(10000));

// Multi-head causal scaled-dot-product attention on [batch, seq, heads*head_dim].
template <typename T>
BasicTensor<T> causal_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                const BasicTensor<T>& v, std::size_t n_heads);

// Forward: binary_sign elementwise. Backward: the upstream gradient is copied
// to the input unchanged (straight-through).
template <typename T>
BasicTensor<T> ste_sign(const BasicTensor<T>& w);

// w: [m, n], alpha/beta: [n]. out[i, j] = alpha[j] * w[i, j] + beta[j].
template <typename T>
BasicTensor<T> scale_shift_columns(const BasicTensor<T>& w, const BasicTensor<T>& alpha,
                                   const BasicTensor<T>& beta);

// Mean over unmasked rows of -sum_v target[r, v] * log_softmax(logits)[r, v].
// `target` never receives gradient. mask: one byte per row, nonzero = counted;
// an empty mask counts every row.
template <typename T>
BasicTensor<T> soft_cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& target,
                                  std::span<const std::uint8_t> mask);

// Mean negative log-likelihood of `targets` over unmasked rows.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets,
                             std::span<const std::uint8_t> mask);

}  // namespace fbi
