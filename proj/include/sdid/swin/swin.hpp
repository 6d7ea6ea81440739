#pragma once

#include <cstddef>
#include <string>

#include "sdid/ndgrad/ops.hpp"
#include "sdid/ndgrad/params.hpp"

namespace sdid::swin {

using nd::IndexMap;
using nd::Tensor;

/// Window attention block parameters. Projections act on row vectors
/// (token * P), so every weight is stored [in, out].
template <typename T>
struct SwinBlockParams {
  std::size_t dim = 0, heads = 1, window = 1, mlp_hidden = 0;
  bool shifted = false;
  Tensor<T> p_q, p_k, p_v;        // [d,d]
  Tensor<T> proj_w, proj_b;       // [d,d], [d]
  Tensor<T> bias_table;           // [(2M-1)^2, heads]
  Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;  // d -> r*d -> d
  IndexMap bias_index;            // [M^2 * M^2] entries in [0, (2M-1)^2)

  std::size_t head_dim() const { return dim / heads; }
  std::size_t shift() const { return shifted ? window / 2 : 0; }
};

template <typename T>
SwinBlockParams<T> make_swin_block(nd::ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                                   std::size_t heads, std::size_t window, std::size_t mlp_ratio, bool shifted);

/// Pixel-to-window gather map for x[B,H,W,d] -> [B*(H/M)*(W/M), M*M, d],
/// after a cyclic shift of (-shift, -shift). Windows are ordered row-major
/// inside each image.
IndexMap window_partition_map(std::size_t batch, std::size_t h, std::size_t w, std::size_t d, std::size_t window,
                              std::size_t shift);
/// Inverse permutation of window_partition_map.
IndexMap window_reverse_map(std::size_t batch, std::size_t h, std::size_t w, std::size_t d, std::size_t window,
                            std::size_t shift);

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t window, std::size_t shift = 0);
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t batch, std::size_t h, std::size_t w,
                         std::size_t window, std::size_t shift = 0);

/// idx(t1,t2) = (r1-r2+M-1)*(2M-1) + (c1-c2+M-1) for tokens t=(r,c).
IndexMap relative_position_index(std::size_t window);

/// Additive mask [nW, M^2, M^2] for one image after the cyclic shift:
/// 0 where both tokens come from the same pre-shift region, -1e9 elsewhere.
template <typename T>
Tensor<T> shifted_attention_mask(std::size_t h, std::size_t w, std::size_t window);

/// Windowed multi-head self-attention on I[N, M^2, d]:
/// out_proj(softmax(Q K^T / sqrt(head_dim) + bias + mask) V) per head.
/// `mask` is [nW, M^2, M^2] with N a multiple of nW, or null.
template <typename T>
Tensor<T> wmsa(const Tensor<T>& windows, const SwinBlockParams<T>& p, nd::OptTensor<T> mask);

/// z <- z + WMSA(LN(z)); z <- z + MLP(LN(z)) on z[B,H,W,d].
template <typename T>
Tensor<T> swin_block(const Tensor<T>& z, const SwinBlockParams<T>& p);

/// Two-branch stage: 1x1 channel conv, a regular-window and a
/// shifted-window block summed elementwise, then the resolution change.
template <typename T>
struct DownSwinBlockParams {
  Tensor<T> channel_w, channel_b;  // C -> 2C, 1x1
  SwinBlockParams<T> regular, shifted;
};

template <typename T>
struct UpSwinBlockParams {
  Tensor<T> channel_w, channel_b;  // 2C -> C, 1x1
  SwinBlockParams<T> regular, shifted;
  Tensor<T> conv_w, conv_b;        // 3x3 after nearest upsampling
};

template <typename T>
DownSwinBlockParams<T> make_down_swin_block(nd::ParamStore<T>& store, const std::string& prefix,
                                            std::size_t in_channels, std::size_t heads, std::size_t window,
                                            std::size_t mlp_ratio);
template <typename T>
UpSwinBlockParams<T> make_up_swin_block(nd::ParamStore<T>& store, const std::string& prefix, std::size_t in_channels,
                                        std::size_t heads, std::size_t window, std::size_t mlp_ratio);

/// [B,C,H,W] -> [B,2C,H/2,W/2].
template <typename T>
Tensor<T> down_swin_block(const Tensor<T>& f, const DownSwinBlockParams<T>& p);
/// [B,2C,H,W] -> [B,C,2H,2W].
template <typename T>
Tensor<T> up_swin_block(const Tensor<T>& f, const UpSwinBlockParams<T>& p);

}  // namespace sdid::swin
