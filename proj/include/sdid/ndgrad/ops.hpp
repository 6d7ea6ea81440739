#pragma once

#include <cstddef>
#include <memory>
#include <type_traits>
#include <vector>

#include "sdid/ndgrad/tensor.hpp"

namespace sdid::nd {

/// Optional operand (bias, mask). Non-deduced so `nullptr` can be passed.
template <typename T>
using OptTensor = std::type_identity_t<const Tensor<T>*>;

// Every op accepts Tensor<float> or Tensor<double>; explicit instantiations
// live in ops.cpp. Shape violations raise DimensionError.

/// [m,k] x [k,n] -> [m,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product over all leading dims: [...,m,k] x [...,k,n] -> [...,m,n],
/// or [...,m,k] x [...,n,k]^T when transpose_b is set.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

/// x[...,k] * w[k,n] (+ bias[n]). Leading dims are flattened.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, OptTensor<T> bias = nullptr);

/// Cross-correlation (no kernel flip) with zero padding.
/// x[B,C,H,W], w[O,C,k,k], bias[O] -> [B,O,(H+2p-k)/s+1,(W+2p-k)/s+1], floor division.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, OptTensor<T> bias, std::size_t stride,
                 std::size_t pad);

/// Normalizes the last axis, then applies gamma/beta of length d.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

// Binary ops broadcast right-aligned shapes where each dim matches or is 1.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// a*x + b elementwise; scale(x, c) is affine_scalar(x, c, 0).
template <typename T>
Tensor<T> affine_scalar(const Tensor<T>& x, T a, T b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return affine_scalar(x, c, T(0));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> abs(const Tensor<T>& x);

/// Full reductions to a [1] tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Mean absolute error over all elements.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b);

/// 2x2 mean pooling, [B,C,H,W] -> [B,C,H/2,W/2]; H and W must be even.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x);

/// Nearest-neighbour 2x upsampling; backward sums each 2x2 block.
template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x);

/// [B,C,H,W] -> [B,C] spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// out.flat[i] = x.flat[index[i]]; backward scatter-adds, so repeated
/// indices accumulate. Used for permutes, window partitioning, cyclic
/// shifts, slicing and relative-position bias lookup.
using IndexMap = std::shared_ptr<const std::vector<std::size_t>>;
template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, IndexMap index);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// [B,C,H,W] <-> [B,H,W,C].
template <typename T>
Tensor<T> nchw_to_nhwc(const Tensor<T>& x);
template <typename T>
Tensor<T> nhwc_to_nchw(const Tensor<T>& x);

/// Slice [lo, hi) of the last axis.
template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t lo, std::size_t hi);

/// Adaptive instance normalization over the spatial dims of e[B,C,h,w]:
/// scale * (e - mu) / sqrt(var + eps) + shift, with population variance.
/// scale and shift are [C] (shared across the batch) or [B,C].
template <typename T>
Tensor<T> adain(const Tensor<T>& e, const Tensor<T>& scale, const Tensor<T>& shift, T eps = T(1e-5));

}  // namespace sdid::nd
