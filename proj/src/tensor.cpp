// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "fbi/errors.hpp"

namespace fbi {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutStridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::vector<NodePtr<T>> parents,
                           std::function<void(TensorNode<T>&)> fn) {
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs_grad = needs_grad || p->requires_grad;
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return BasicTensor<T>(std::move(node));
}

// Zero-initialised gradient buffer of `n`.
template <typename T>
T* grad_buffer(TensorNode<T>& n) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
  return n.grad.data();
}

// Adds g into n.grad; the first contribution is copied so a single upstream
// gradient arrives bit-for-bit.
template <typename T>
void accumulate(TensorNode<T>& n, std::span<const T> g) {
  if (n.grad.empty()) {
    n.grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_defined(const BasicTensor<T>& a, const char* op) {
  if (!a.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

std::size_t trailing(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

// --- BasicTensor -------------------------------------------------------------

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  return {grad_buffer(*node_), node_->data.size()};
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from(shape(), node_->data, false);
}

// --- backward ----------------------------------------------------------------

template <typename T>
void backward(const BasicTensor<T>& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  TensorNode<T>* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<TensorNode<T>*> order;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.clear();
  }
  T one(1);
  accumulate(*root, std::span<const T>(&one, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<T>* n = *it;
    if (!n->is_leaf() && !n->grad.empty()) n->backward_fn(*n);
  }
}

// --- linear algebra ------------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() < 2 || b.rank() != 2) {
    throw DimensionError("matmul: expected a rank>=2 and b rank 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape().back();
  if (m != b.dim(0)) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()));
  }
  const std::size_t rows = a.numel() / m;
  const std::size_t n = b.dim(1);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> out(rows * n);
  MutMap<T>(out.data(), rows, n).noalias() =
      ConstMap<T>(a.data().data(), rows, m) * ConstMap<T>(b.data().data(), m, n);
  return make_result<T>(std::move(out_shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                        [rows, m, n](TensorNode<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          ConstMap<T> dc(self.grad.data(), rows, n);
                          if (pa.requires_grad) {
                            MutMap<T>(grad_buffer(pa), rows, m).noalias() +=
                                dc * ConstMap<T>(pb.data.data(), m, n).transpose();
                          }
                          if (pb.requires_grad) {
                            MutMap<T>(grad_buffer(pb), m, n).noalias() +=
                                ConstMap<T>(pa.data.data(), rows, m).transpose() * dc;
                          }
                        });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_defined(a, "transpose");
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> out(r * c);
  MutMap<T>(out.data(), c, r) = ConstMap<T>(a.data().data(), r, c).transpose();
  return make_result<T>(Shape{c, r}, std::move(out), {a.node_ptr()}, [r, c](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    MutMap<T>(grad_buffer(p), r, c) += ConstMap<T>(self.grad.data(), c, r).transpose();
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), {a.node_ptr()}, [](TensorNode<T>& self) {
    accumulate(*self.parents[0], std::span<const T>(self.grad));
  });
}

// --- elementwise -------------------------------------------------------------

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result<T>(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                        [](TensorNode<T>& self) {
                          for (auto& p : self.parents) {
                            if (p->requires_grad) accumulate(*p, std::span<const T>(self.grad));
                          }
                        });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result<T>(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                        [](TensorNode<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad) accumulate(pa, std::span<const T>(self.grad));
                          if (pb.requires_grad) {
                            T* g = grad_buffer(pb);
                            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result<T>(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                        [](TensorNode<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          const auto& g = self.grad;
                          if (pa.requires_grad) {
                            T* ga = grad_buffer(pa);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb.data[i];
                          }
                          if (pb.requires_grad) {
                            T* gb = grad_buffer(pb);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa.data[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  require_defined(a, "scale");
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), {a.node_ptr()}, [factor](TensorNode<T>& self) {
    T* g = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& a) {
  require_defined(a, "silu");
  auto x = a.data();
  std::vector<T> out(x.size());
  std::vector<T> sig(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    sig[i] = T(1) / (T(1) + std::exp(-x[i]));
    out[i] = x[i] * sig[i];
  }
  return make_result<T>(a.shape(), std::move(out), {a.node_ptr()},
                        [sig = std::move(sig)](TensorNode<T>& self) {
                          auto& p = *self.parents[0];
                          T* g = grad_buffer(p);
                          for (std::size_t i = 0; i < sig.size(); ++i) {
                            const T s = sig[i];
                            g[i] += self.grad[i] * s * (T(1) + p.data[i] * (T(1) - s));
                          }
                        });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
  require_defined(a, "tanh");
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return make_result<T>(a.shape(), out, {a.node_ptr()}, [out](TensorNode<T>& self) {
    T* g = grad_buffer(*self.parents[0]);
    for (std::size_t i = 0; i < out.size(); ++i) g[i] += self.grad[i] * (T(1) - out[i] * out[i]);
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  require_defined(a, "sum");
  double acc = 0.0;
  for (T v : a.data()) acc += static_cast<double>(v);
  return make_result<T>(Shape{}, std::vector<T>{static_cast<T>(acc)}, {a.node_ptr()},
                        [](TensorNode<T>& self) {
                          auto& p = *self.parents[0];
                          T* g = grad_buffer(p);
                          for (std::size_t i = 0; i < p.data.size(); ++i) g[i] += self.grad[0];
                        });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// --- normalisation / softmax ---------------------------------------------------

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  require_defined(x, "softmax_rows");
  const std::size_t v = trailing(x.shape());
  const std::size_t rows = v ? x.numel() / v : 0;
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * v;
    T* o = out.data() + r * v;
    const T mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      o[j] = std::exp(row[j] - mx);
      z += static_cast<double>(o[j]);
    }
    const T inv = static_cast<T>(1.0 / z);
    for (std::size_t j = 0; j < v; ++j) o[j] *= inv;
  }
  return make_result<T>(x.shape(), out, {x.node_ptr()}, [out, rows, v](TensorNode<T>& self) {
    T* g = grad_buffer(*self.parents[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = out.data() + r * v;
      const T* dy = self.grad.data() + r * v;
      T dot = 0;
      for (std::size_t j = 0; j < v; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < v; ++j) g[r * v + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
BasicTensor<T> rmsnorm(const BasicTensor<T>& x, const BasicTensor<T>& weight, T eps) {
  require_defined(x, "rmsnorm");
  require_defined(weight, "rmsnorm");
  const std::size_t d = trailing(x.shape());
  if (weight.rank() != 1 || weight.dim(0) != d) {
    throw DimensionError("rmsnorm: weight " + shape_str(weight.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> inv_rms(rows);
  auto in = x.data();
  auto w = weight.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * d;
    T ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += row[j] * row[j];
    const T inv = T(1) / std::sqrt(ss / static_cast<T>(d) + eps);
    inv_rms[r] = inv;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = row[j] * inv * w[j];
  }
  return make_result<T>(
      x.shape(), std::move(out), {x.node_ptr(), weight.node_ptr()},
      [inv_rms = std::move(inv_rms), rows, d](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const T* xs = px.data.data();
        const T* ws = pw.data.data();
        const T* dy = self.grad.data();
        if (pw.requires_grad) {
          T* gw = grad_buffer(pw);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) gw[j] += dy[r * d + j] * xs[r * d + j] * inv_rms[r];
          }
        }
        if (px.requires_grad) {
          T* gx = grad_buffer(px);
          for (std::size_t r = 0; r < rows; ++r) {
            const T inv = inv_rms[r];
            T dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += dy[r * d + j] * ws[j] * xs[r * d + j];
            const T c = dot * inv * inv / static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[r * d + j] += inv * (dy[r * d + j] * ws[j] - xs[r * d + j] * c);
            }
          }
        }
      });
}

// --- embedding / positional ----------------------------------------------------

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids,
                         const Shape& lead) {
  require_defined(table, "embedding");
  if (table.rank() != 2) throw DimensionError("embedding: table must be rank 2");
  if (shape_numel(lead) != ids.size()) {
    throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids for shape " +
                         shape_str(lead));
  }
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<T> out(idx.size() * d);
  auto tab = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw InputError("embedding: token id " + std::to_string(idx[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(tab.data() + idx[i] * d, d, out.data() + i * d);
  }
  Shape shape = lead;
  shape.push_back(d);
  return make_result<T>(std::move(shape), std::move(out), {table.node_ptr()},
                        [idx = std::move(idx), d](TensorNode<T>& self) {
                          T* g = grad_buffer(*self.parents[0]);
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            T* row = g + static_cast<std::size_t>(idx[i]) * d;
                            const T* src = self.grad.data() + i * d;
                            for (std::size_t j = 0; j < d; ++j) row[j] += src[j];
                          }
                        });
}

template <typename T>
BasicTensor<T> rope(const BasicTensor<T>& x, std::size_t n_heads, T base) {
  require_defined(x, "rope");
  if (x.rank() != 3) throw DimensionError("rope: expected [batch, seq, channels]");
  const std::size_t batch = x.dim(0), seq = x.dim(1), ch = x.dim(2);
  if (n_heads == 0 || ch % n_heads != 0 || (ch / n_heads) % 2 != 0) {
    throw DimensionError("rope: channels " + std::to_string(ch) + " not divisible into " +
                         std::to_string(n_heads) + " even-sized heads");
  }
  const std::size_t hd = ch / n_heads, half = hd / 2;
  std::vector<T> cosv(seq * half), sinv(seq * half);
  for (std::size_t t = 0; t < seq; ++t) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / hd);
      const double ang = static_cast<double>(t) * freq;
      cosv[t * half + i] = static_cast<T>(std::cos(ang));
      sinv[t * half + i] = static_cast<T>(std::sin(ang));
    }
  }
  auto rotate = [=](const T* src, T* dst, const std::vector<T>& c, const std::vector<T>& s,
                    T direction) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < seq; ++t) {
        const std::size_t base_off = (b * seq + t) * ch;
        for (std::size_t h = 0; h < n_heads; ++h) {
          for (std::size_t i = 0; i < half; ++i) {
            const std::size_t o = base_off + h * hd + 2 * i;
            const T cs = c[t * half + i], sn = direction * s[t * half + i];
            const T a0 = src[o], a1 = src[o + 1];
            dst[o] += a0 * cs - a1 * sn;
            dst[o + 1] += a0 * sn + a1 * cs;
          }
        }
      }
    }
  };
  std::vector<T> out(x.numel(), T(0));
  rotate(x.data().data(), out.data(), cosv, sinv, T(1));
  return make_result<T>(x.shape(), std::move(out), {x.node_ptr()},
                        [rotate, cosv = std::move(cosv), sinv = std::move(sinv)](TensorNode<T>& self) {
                          rotate(self.grad.data(), grad_buffer(*self.parents[0]), cosv, sinv, T(-1));
                        });
}

template <typename T>
BasicTensor<T> causal_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                const BasicTensor<T>& v, std::size_t n_heads) {
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  if (q.rank() != 3) throw DimensionError("causal_attention: expected [batch, seq, channels]");
  const std::size_t batch = q.dim(0), seq = q.dim(1), ch = q.dim(2);
  if (n_heads == 0 || ch % n_heads != 0) {
    throw DimensionError("causal_attention: channels not divisible by heads");
  }
  const std::size_t hd = ch / n_heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(ch));
  const auto T_ = static_cast<Eigen::Index>(seq);
  const auto D_ = static_cast<Eigen::Index>(hd);

  std::vector<T> probs(batch * n_heads * seq * seq, T(0));
  std::vector<T> out(q.numel());
  RowMat<T> scores(T_, T_);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = b * seq * ch + h * hd;
      ConstStridedMap<T> Q(q.data().data() + off, T_, D_, stride);
      ConstStridedMap<T> K(k.data().data() + off, T_, D_, stride);
      ConstStridedMap<T> V(v.data().data() + off, T_, D_, stride);
      scores.noalias() = Q * K.transpose();
      MutMap<T> P(probs.data() + (b * n_heads + h) * seq * seq, T_, T_);
      for (Eigen::Index t = 0; t < T_; ++t) {
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index j = 0; j <= t; ++j) mx = std::max(mx, scores(t, j) * inv_sqrt);
        T z = 0;
        for (Eigen::Index j = 0; j <= t; ++j) {
          const T e = std::exp(scores(t, j) * inv_sqrt - mx);
          P(t, j) = e;
          z += e;
        }
        for (Eigen::Index j = 0; j <= t; ++j) P(t, j) /= z;
      }
      MutStridedMap<T>(out.data() + off, T_, D_, stride).noalias() = P * V;
    }
  }
  return make_result<T>(
      q.shape(), std::move(out), {q.node_ptr(), k.node_ptr(), v.node_ptr()},
      [probs = std::move(probs), batch, seq, ch, n_heads, hd, inv_sqrt](TensorNode<T>& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(ch));
        const auto T_ = static_cast<Eigen::Index>(seq);
        const auto D_ = static_cast<Eigen::Index>(hd);
        T* gq = pq.requires_grad ? grad_buffer(pq) : nullptr;
        T* gk = pk.requires_grad ? grad_buffer(pk) : nullptr;
        T* gv = pv.requires_grad ? grad_buffer(pv) : nullptr;
        RowMat<T> dP(T_, T_);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t off = b * seq * ch + h * hd;
            ConstMap<T> P(probs.data() + (b * n_heads + h) * seq * seq, T_, T_);
            ConstStridedMap<T> dO(self.grad.data() + off, T_, D_, stride);
            ConstStridedMap<T> Q(pq.data.data() + off, T_, D_, stride);
            ConstStridedMap<T> K(pk.data.data() + off, T_, D_, stride);
            ConstStridedMap<T> V(pv.data.data() + off, T_, D_, stride);
            if (gv) MutStridedMap<T>(gv + off, T_, D_, stride).noalias() += P.transpose() * dO;
            dP.noalias() = dO * V.transpose();
            for (Eigen::Index t = 0; t < T_; ++t) {
              T dot = 0;
              for (Eigen::Index j = 0; j <= t; ++j) dot += dP(t, j) * P(t, j);
              for (Eigen::Index j = 0; j <= t; ++j) dP(t, j) = P(t, j) * (dP(t, j) - dot) * inv_sqrt;
              for (Eigen::Index j = t + 1; j < T_; ++j) dP(t, j) = 0;
            }
            if (gq) MutStridedMap<T>(gq + off, T_, D_, stride).noalias() += dP * K;
            if (gk) MutStridedMap<T>(gk + off, T_, D_, stride).noalias() += dP.transpose() * Q;
          }
        }
      });
}

// --- binarisation ----------------------------------------------------------------

template <typename T>
BasicTensor<T> ste_sign(const BasicTensor<T>& w) {
  require_defined(w, "ste_sign");
  std::vector<T> out(w.numel());
  auto in = w.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = binary_sign(in[i]);
  return make_result<T>(w.shape(), std::move(out), {w.node_ptr()}, [](TensorNode<T>& self) {
    accumulate(*self.parents[0], std::span<const T>(self.grad));
  });
}

template <typename T>
BasicTensor<T> scale_shift_columns(const BasicTensor<T>& w, const BasicTensor<T>& alpha,
                                   const BasicTensor<T>& beta) {
  require_defined(w, "scale_shift_columns");
  if (w.rank() != 2) throw DimensionError("scale_shift_columns: weight must be rank 2");
  const std::size_t m = w.dim(0), n = w.dim(1);
  if (alpha.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("scale_shift_columns: alpha/beta must have length " + std::to_string(n));
  }
  std::vector<T> out(m * n);
  auto ws = w.data();
  auto a = alpha.data();
  auto b = beta.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[j] * ws[i * n + j] + b[j];
  }
  return make_result<T>(w.shape(), std::move(out), {w.node_ptr(), alpha.node_ptr(), beta.node_ptr()},
                        [m, n](TensorNode<T>& self) {
                          auto& pw = *self.parents[0];
                          auto& pa = *self.parents[1];
                          auto& pb = *self.parents[2];
                          const T* g = self.grad.data();
                          if (pw.requires_grad) {
                            T* gw = grad_buffer(pw);
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += g[i * n + j] * pa.data[j];
                            }
                          }
                          if (pa.requires_grad) {
                            T* ga = grad_buffer(pa);
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t j = 0; j < n; ++j) ga[j] += g[i * n + j] * pw.data[i * n + j];
                            }
                          }
                          if (pb.requires_grad) {
                            T* gb = grad_buffer(pb);
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                            }
                          }
                        });
}

// --- losses --------------------------------------------------------------------

namespace {

std::size_t count_rows(std::span<const std::uint8_t> mask, std::size_t rows, const char* op) {
  if (!mask.empty() && mask.size() != rows) {
    throw DimensionError(std::string(op) + ": mask has " + std::to_string(mask.size()) +
                         " entries for " + std::to_string(rows) + " rows");
  }
  std::size_t n = mask.empty() ? rows : static_cast<std::size_t>(std::count_if(
                                             mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  if (n == 0) throw ContractError(std::string(op) + ": every position is masked");
  return n;
}

// Writes softmax(row) into probs and returns log-sum-exp.
template <typename T>
double softmax_row(const T* row, std::size_t v, T* probs) {
  const T mx = *std::max_element(row, row + v);
  double z = 0.0;
  for (std::size_t j = 0; j < v; ++j) {
    const double e = std::exp(static_cast<double>(row[j]) - static_cast<double>(mx));
    probs[j] = static_cast<T>(e);
    z += e;
  }
  for (std::size_t j = 0; j < v; ++j) probs[j] = static_cast<T>(static_cast<double>(probs[j]) / z);
  return static_cast<double>(mx) + std::log(z);
}

}  // namespace

template <typename T>
BasicTensor<T> soft_cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& target,
                                  std::span<const std::uint8_t> mask) {
  require_same_shape(logits, target, "soft_cross_entropy");
  const std::size_t v = trailing(logits.shape());
  const std::size_t rows = logits.numel() / v;
  const std::size_t n = count_rows(mask, rows, "soft_cross_entropy");
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  if (keep.empty()) keep.assign(rows, 1);

  std::vector<T> probs(logits.numel(), T(0));
  std::vector<T> target_mass(rows, T(0));
  auto x = logits.data();
  auto p = target.data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!keep[r]) continue;
    const T* row = x.data() + r * v;
    const double lse = softmax_row(row, v, probs.data() + r * v);
    double acc = 0.0, mass = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double pj = static_cast<double>(p[r * v + j]);
      if (pj != 0.0) acc -= pj * (static_cast<double>(row[j]) - lse);
      mass += pj;
    }
    target_mass[r] = static_cast<T>(mass);
    total += acc;
  }
  const T inv_n = T(1) / static_cast<T>(n);
  // Only the logits participate in the graph; the target distribution is a constant.
  return make_result<T>(Shape{}, std::vector<T>{static_cast<T>(total / static_cast<double>(n))},
                        {logits.node_ptr()},
                        [probs = std::move(probs), target_mass = std::move(target_mass),
                         keep = std::move(keep), target = target.node_ptr(), rows, v,
                         inv_n](TensorNode<T>& self) {
                          T* g = grad_buffer(*self.parents[0]);
                          const T up = self.grad[0] * inv_n;
                          const T* p = target->data.data();
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (!keep[r]) continue;
                            for (std::size_t j = 0; j < v; ++j) {
                              const std::size_t o = r * v + j;
                              g[o] += up * (probs[o] * target_mass[r] - p[o]);
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets,
                             std::span<const std::uint8_t> mask) {
  require_defined(logits, "cross_entropy");
  const std::size_t v = trailing(logits.shape());
  const std::size_t rows = logits.numel() / v;
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  const std::size_t n = count_rows(mask, rows, "cross_entropy");
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  if (keep.empty()) keep.assign(rows, 1);
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());

  std::vector<T> probs(logits.numel(), T(0));
  auto x = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!keep[r]) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= v) {
      throw InputError("cross_entropy: target id " + std::to_string(tgt[r]) + " outside vocabulary");
    }
    const T* row = x.data() + r * v;
    const double lse = softmax_row(row, v, probs.data() + r * v);
    total -= static_cast<double>(row[tgt[r]]) - lse;
  }
  const T inv_n = T(1) / static_cast<T>(n);
  return make_result<T>(Shape{}, std::vector<T>{static_cast<T>(total / static_cast<double>(n))},
                        {logits.node_ptr()},
                        [probs = std::move(probs), keep = std::move(keep), tgt = std::move(tgt), rows,
                         v, inv_n](TensorNode<T>& self) {
                          T* g = grad_buffer(*self.parents[0]);
                          const T up = self.grad[0] * inv_n;
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (!keep[r]) continue;
                            for (std::size_t j = 0; j < v; ++j) g[r * v + j] += up * probs[r * v + j];
                            g[r * v + static_cast<std::size_t>(tgt[r])] -= up;
                          }
                        });
}

// --- instantiations ----------------------------------------------------------------

#define FBI_INSTANTIATE(T)                                                                         \
  template class BasicTensor<T>;                                                                   \
  template void backward<T>(const BasicTensor<T>&);                                                \
  template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> sub<T>(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                                      \
  template BasicTensor<T> silu<T>(const BasicTensor<T>&);                                          \
  template BasicTensor<T> tanh<T>(const BasicTensor<T>&);                                          \
  template BasicTensor<T> sum<T>(const BasicTensor<T>&);                                           \
  template BasicTensor<T> mean<T>(const BasicTensor<T>&);                                          \
  template BasicTensor<T> reshape<T>(const BasicTensor<T>&, Shape);                                \
  template BasicTensor<T> transpose<T>(const BasicTensor<T>&);                                     \
  template BasicTensor<T> softmax_rows<T>(const BasicTensor<T>&);                                  \
  template BasicTensor<T> rmsnorm<T>(const BasicTensor<T>&, const BasicTensor<T>&, T);             \
  template BasicTensor<T> embedding<T>(const BasicTensor<T>&, std::span<const std::int32_t>,       \
                                       const Shape&);                                              \
  template BasicTensor<T> rope<T>(const BasicTensor<T>&, std::size_t, T);                          \
  template BasicTensor<T> causal_attention<T>(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                              const BasicTensor<T>&, std::size_t);                 \
  template BasicTensor<T> ste_sign<T>(const BasicTensor<T>&);                                      \
  template BasicTensor<T> scale_shift_columns<T>(const BasicTensor<T>&, const BasicTensor<T>&,     \
                                                 const BasicTensor<T>&);                           \
  template BasicTensor<T> soft_cross_entropy<T>(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                                std::span<const std::uint8_t>);                    \
  template BasicTensor<T> cross_entropy<T>(const BasicTensor<T>&, std::span<const std::int32_t>,   \
                                           std::span<const std::uint8_t>);

FBI_INSTANTIATE(float)
FBI_INSTANTIATE(double)

#undef FBI_INSTANTIATE

}  // namespace fbi
