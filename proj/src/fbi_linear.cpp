// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "fbi/fbi_linear.hpp"

#include <cmath>
#include <vector>

#include "fbi/errors.hpp"

namespace fbi {

template <typename T>
ColumnScales<T> init_scales(const BasicTensor<T>& w_f) {
  if (!w_f.defined() || w_f.rank() != 2) throw ContractError("init_scales: expected a matrix");
  const std::size_t m = w_f.dim(0), n = w_f.dim(1);
  if (m == 0 || n == 0) throw ContractError("init_scales: empty matrix");
  auto w = w_f.data();
  std::vector<T> alpha(n), beta(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += static_cast<double>(w[i * n + j]);
    const double a = s / static_cast<double>(m);
    double dev = 0.0;
    for (std::size_t i = 0; i < m; ++i) dev += std::abs(static_cast<double>(w[i * n + j]) - a);
    alpha[j] = static_cast<T>(a);
    beta[j] = static_cast<T>(dev / static_cast<double>(m));
  }
  return {BasicTensor<T>::from({n}, std::move(alpha), w_f.requires_grad()),
          BasicTensor<T>::from({n}, std::move(beta), w_f.requires_grad())};
}

template <typename T>
BasicTensor<T> effective_weight(const BasicFbiLinearParams<T>& p) {
  return scale_shift_columns(ste_sign(p.w_f), p.alpha, p.beta);
}

template <typename T>
FbiLinearTrace<T> fbi_linear_forward_traced(const BasicFbiLinearParams<T>& p,
                                            const BasicTensor<T>& x) {
  FbiLinearTrace<T> tr;
  tr.binary = ste_sign(p.w_f);
  tr.effective = scale_shift_columns(tr.binary, p.alpha, p.beta);
  tr.output = matmul(x, tr.effective);
  return tr;
}

template <typename T>
FbiLinearGrads<T> grads_consistency(const BasicFbiLinearParams<T>& p,
                                    const BasicTensor<T>& effective) {
  if (!effective.defined() || !effective.has_grad()) {
    throw ContractError("grads_consistency: backward has not run through this layer");
  }
  const std::size_t m = p.in_features(), n = p.out_features();
  if (effective.shape() != Shape{m, n}) {
    throw DimensionError("grads_consistency: effective weight shape does not match parameters");
  }
  auto g = effective.grad();
  auto w = p.w_f.data();
  auto a = p.alpha.data();
  std::vector<T> gw(m * n), ga(n, T(0)), gb(n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T gij = g[i * n + j];
      ga[j] += gij * binary_sign(w[i * n + j]);
      gb[j] += gij;
      gw[i * n + j] = a[j] * gij;
    }
  }
  return {BasicTensor<T>::from({m, n}, std::move(gw)), BasicTensor<T>::from({n}, std::move(ga)),
          BasicTensor<T>::from({n}, std::move(gb))};
}

FbiLinearParams make_fbi_linear(std::size_t in, std::size_t out, Rng& rng, float init_std) {
  std::vector<float> w(in * out);
  for (auto& v : w) v = static_cast<float>(rng.normal() * init_std);
  FbiLinearParams p;
  p.w_f = Tensor::from({in, out}, std::move(w), true);
  auto scales = init_scales(p.w_f);
  p.alpha = scales.alpha;
  p.beta = scales.beta;
  return p;
}

template ColumnScales<float> init_scales(const Tensor&);
template ColumnScales<double> init_scales(const Tensor64&);
template Tensor effective_weight(const BasicFbiLinearParams<float>&);
template Tensor64 effective_weight(const BasicFbiLinearParams<double>&);
template FbiLinearTrace<float> fbi_linear_forward_traced(const BasicFbiLinearParams<float>&,
                                                         const Tensor&);
template FbiLinearTrace<double> fbi_linear_forward_traced(const BasicFbiLinearParams<double>&,
                                                          const Tensor64&);
template FbiLinearGrads<float> grads_consistency(const BasicFbiLinearParams<float>&, const Tensor&);
template FbiLinearGrads<double> grads_consistency(const BasicFbiLinearParams<double>&,
                                                  const Tensor64&);

}  // namespace fbi
