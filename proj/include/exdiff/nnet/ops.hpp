#pragma once

#include <vector>

#include "exdiff/nnet/autograd.hpp"

namespace exdiff::nnet {

// Elementwise and reductions. Binary elementwise ops require identical shapes.
template <typename Real> Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <typename Real> Var<Real> sub(const Var<Real>& a, const Var<Real>& b);
template <typename Real> Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
template <typename Real> Var<Real> scale(const Var<Real>& a, double s);
/// Multiplies batch item i (leading dimension) by factors[i].
template <typename Real> Var<Real> scale_per_item(const Var<Real>& a, const std::vector<double>& factors);
template <typename Real> Var<Real> silu(const Var<Real>& a);
template <typename Real> Var<Real> sum(const Var<Real>& a);
template <typename Real> Var<Real> mean_square(const Var<Real>& a);
template <typename Real> Var<Real> reshape(const Var<Real>& a, Shape shape);

/// Same-padded stride-1 convolution. x (B, Cin, H, W), w (Cout, Cin, k, k), b (Cout) or undefined.
template <typename Real> Var<Real> conv2d(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b);

/// x (..., in) times w (out, in)^T plus b (out) or undefined.
template <typename Real> Var<Real> linear(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b);

/// Normalises each (item, group) over channels-in-group x spatial extent, then
/// applies the per-channel affine. x is (B, C, ...).
template <typename Real>
Var<Real> group_normalize(const Var<Real>& x, std::size_t groups, const Var<Real>& gamma,
                          const Var<Real>& beta, double eps = 1e-5);

/// Normalises over the last dimension then applies the affine.
template <typename Real>
Var<Real> layer_normalize(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta,
                          double eps = 1e-5);

/// Softmax along the last dimension.
template <typename Real> Var<Real> softmax(const Var<Real>& a);

/// Batched product: a (B, M, K) times b (B, K, N), or b (B, N, K) transposed.
template <typename Real> Var<Real> matmul(const Var<Real>& a, const Var<Real>& b, bool transpose_b = false);

/// softmax(Q K^T / sqrt(d)) V with Q (B, Nq, d), K (B, Nk, d), V (B, Nk, dv).
template <typename Real> Var<Real> attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v);

/// Concatenation along dimension 1.
template <typename Real> Var<Real> concat_channels(const Var<Real>& a, const Var<Real>& b);

/// 2x2 average pooling / nearest-neighbour 2x upsampling of (B, C, H, W).
template <typename Real> Var<Real> downsample2x(const Var<Real>& x);
template <typename Real> Var<Real> upsample2x(const Var<Real>& x);

/// x (B, C, H, W) + v (B, C) broadcast over space.
template <typename Real> Var<Real> add_channel_bias(const Var<Real>& x, const Var<Real>& v);

/// (B, C, H, W) <-> (B, H*W, C).
template <typename Real> Var<Real> to_tokens(const Var<Real>& x);
template <typename Real> Var<Real> from_tokens(const Var<Real>& t, std::size_t height, std::size_t width);

/// v (B, P) -> (B, P, H, W).
template <typename Real> Var<Real> broadcast_spatial(const Var<Real>& v, std::size_t height, std::size_t width);

}  // namespace exdiff::nnet
