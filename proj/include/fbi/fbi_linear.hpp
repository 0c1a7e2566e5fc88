// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0
//
// FBI-Linear: a weight matrix whose forward pass only sees the signs of its
// latent full-precision weights, rescaled and shifted per output column by
// learnable vectors alpha and beta.
//
//   W_b      = sign(W_f)                  (sign(0) = -1)
//   W_eff    = alpha_j * W_b[:, j] + beta_j
//   y        = x . W_eff
//
// W_f is [in, out], so "column" means output channel.

#pragma once

#include <cstddef>

#include "fbi/rng.hpp"
#include "fbi/tensor.hpp"

namespace fbi {

template <typename T>
struct BasicFbiLinearParams {
  BasicTensor<T> w_f;    // [in, out] latent weights
  BasicTensor<T> alpha;  // [out]
  BasicTensor<T> beta;   // [out]

  std::size_t in_features() const { return w_f.dim(0); }
  std::size_t out_features() const { return w_f.dim(1); }
};

using FbiLinearParams = BasicFbiLinearParams<float>;

template <typename T>
struct ColumnScales {
  BasicTensor<T> alpha;
  BasicTensor<T> beta;
};

// alpha_j = mean of column j; beta_j = mean absolute deviation of column j
// around that mean. Throws ContractError on an empty matrix.
template <typename T>
ColumnScales<T> init_scales(const BasicTensor<T>& w_f);

// Graph-recording W_eff built from the current latent weights.
template <typename T>
BasicTensor<T> effective_weight(const BasicFbiLinearParams<T>& p);

template <typename T>
struct FbiLinearTrace {
  BasicTensor<T> binary;     // sign(W_f), output of the STE node
  BasicTensor<T> effective;  // W_eff
  BasicTensor<T> output;
};

// x: [..., in] -> [..., out]. The trace exposes the intermediate nodes so
// their gradients can be inspected after backward().
template <typename T>
FbiLinearTrace<T> fbi_linear_forward_traced(const BasicFbiLinearParams<T>& p,
                                            const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> fbi_linear_forward(const BasicFbiLinearParams<T>& p, const BasicTensor<T>& x) {
  return fbi_linear_forward_traced(p, x).output;
}

template <typename T>
struct FbiLinearGrads {
  BasicTensor<T> w_f;
  BasicTensor<T> alpha;
  BasicTensor<T> beta;
};

// Closed-form parameter gradients given dL/dW_eff (the gradient held by
// `effective` after backward):
//   g_alpha[j] = sum_i G[i,j] * sign(W_f)[i,j]
//   g_beta[j]  = sum_i G[i,j]
//   g_wf[i,j]  = alpha_j * G[i,j]
// Throws ContractError if backward has not populated `effective`.
template <typename T>
FbiLinearGrads<T> grads_consistency(const BasicFbiLinearParams<T>& p,
                                    const BasicTensor<T>& effective);

// Latent weights ~ N(0, init_std^2), scales from init_scales. All three
// tensors require grad.
FbiLinearParams make_fbi_linear(std::size_t in, std::size_t out, Rng& rng, float init_std);

}  // namespace fbi
