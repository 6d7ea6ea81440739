#include "sdid/swin/swin.hpp"

#include <array>
#include <cmath>
#include <map>

namespace sdid::swin {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

using MapKey = std::array<std::size_t, 7>;

IndexMap cached(MapKey key, const std::function<std::vector<std::size_t>()>& build) {
  thread_local std::map<MapKey, IndexMap> cache;
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto map = std::make_shared<const std::vector<std::size_t>>(build());
  cache.emplace(key, map);
  return map;
}

enum MapKind : std::size_t { kPartition, kReverse, kSplitHeads, kMergeHeads, kBiasGather, kRelIndex };

// [N,T,d] -> [N,heads,T,hd]
IndexMap split_heads_map(std::size_t n, std::size_t t, std::size_t d, std::size_t heads) {
  return cached({kSplitHeads, n, t, d, heads, 0, 0}, [=] {
    const std::size_t hd = d / heads;
    std::vector<std::size_t> m(n * t * d);
    std::size_t o = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t k = 0; k < t; ++k)
          for (std::size_t j = 0; j < hd; ++j) m[o++] = (i * t + k) * d + h * hd + j;
    return m;
  });
}

// [N,heads,T,hd] -> [N,T,d]
IndexMap merge_heads_map(std::size_t n, std::size_t t, std::size_t d, std::size_t heads) {
  return cached({kMergeHeads, n, t, d, heads, 0, 0}, [=] {
    const std::size_t hd = d / heads;
    std::vector<std::size_t> m(n * t * d);
    std::size_t o = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < t; ++k)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t j = 0; j < hd; ++j) m[o++] = ((i * heads + h) * t + k) * hd + j;
    return m;
  });
}

// table[(2M-1)^2, heads] -> [heads, T, T]
IndexMap bias_gather_map(std::size_t window, std::size_t heads) {
  return cached({kBiasGather, window, heads, 0, 0, 0, 0}, [=] {
    const auto rel = relative_position_index(window);
    const std::size_t t = window * window;
    std::vector<std::size_t> m(heads * t * t);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t * t; ++i) m[h * t * t + i] = (*rel)[i] * heads + h;
    return m;
  });
}

}  // namespace

IndexMap window_partition_map(std::size_t batch, std::size_t h, std::size_t w, std::size_t d, std::size_t window,
                              std::size_t shift) {
  require(window > 0 && h % window == 0 && w % window == 0,
          "window partition: " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by window " +
              std::to_string(window));
  return cached({kPartition, batch, h, w, d, window, shift}, [=] {
    const std::size_t nh = h / window, nw = w / window;
    std::vector<std::size_t> m(batch * h * w * d);
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t wy = 0; wy < nh; ++wy)
        for (std::size_t wx = 0; wx < nw; ++wx)
          for (std::size_t ty = 0; ty < window; ++ty)
            for (std::size_t tx = 0; tx < window; ++tx) {
              const std::size_t i = (wy * window + ty + shift) % h;
              const std::size_t j = (wx * window + tx + shift) % w;
              for (std::size_t c = 0; c < d; ++c) m[o++] = ((b * h + i) * w + j) * d + c;
            }
    return m;
  });
}

IndexMap window_reverse_map(std::size_t batch, std::size_t h, std::size_t w, std::size_t d, std::size_t window,
                            std::size_t shift) {
  require(window > 0 && h % window == 0 && w % window == 0,
          "window reverse: " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by window " +
              std::to_string(window));
  return cached({kReverse, batch, h, w, d, window, shift}, [=] {
    const auto fwd = window_partition_map(batch, h, w, d, window, shift);
    std::vector<std::size_t> m(fwd->size());
    for (std::size_t o = 0; o < fwd->size(); ++o) m[(*fwd)[o]] = o;
    return m;
  });
}

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t window, std::size_t shift) {
  require(x.ndim() == 4, "window_partition expects [B,H,W,d], got " + nd::shape_str(x.shape()));
  const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  auto map = window_partition_map(b, h, w, d, window, shift);
  return nd::gather(x, {b * (h / window) * (w / window), window * window, d}, map);
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, std::size_t batch, std::size_t h, std::size_t w,
                         std::size_t window, std::size_t shift) {
  require(windows.ndim() == 3 && windows.dim(1) == window * window &&
              windows.dim(0) == batch * (h / window) * (w / window),
          "window_reverse: windows " + nd::shape_str(windows.shape()) + " do not tile the requested image");
  const std::size_t d = windows.dim(2);
  auto map = window_reverse_map(batch, h, w, d, window, shift);
  return nd::gather(windows, {batch, h, w, d}, map);
}

IndexMap relative_position_index(std::size_t window) {
  return cached({kRelIndex, window, 0, 0, 0, 0, 0}, [=] {
    const std::size_t t = window * window, span = 2 * window - 1;
    std::vector<std::size_t> m(t * t);
    for (std::size_t a = 0; a < t; ++a)
      for (std::size_t b = 0; b < t; ++b) {
        const std::size_t dr = a / window + window - 1 - b / window;
        const std::size_t dc = a % window + window - 1 - b % window;
        m[a * t + b] = dr * span + dc;
      }
    return m;
  });
}

template <typename T>
Tensor<T> shifted_attention_mask(std::size_t h, std::size_t w, std::size_t window) {
  require(window > 0 && h % window == 0 && w % window == 0, "shifted_attention_mask: size not divisible by window");
  const std::size_t shift = window / 2, t = window * window;
  const std::size_t nh = h / window, nw = w / window;
  auto region = [&](std::size_t pos, std::size_t extent) -> std::size_t {
    if (pos < extent - window) return 0;
    return pos < extent - shift ? 1 : 2;
  };
  nd::Buffer<T> mask(nh * nw * t * t, T(0));
  std::vector<std::size_t> label(t);
  for (std::size_t wy = 0; wy < nh; ++wy)
    for (std::size_t wx = 0; wx < nw; ++wx) {
      for (std::size_t k = 0; k < t; ++k)
        label[k] = region(wy * window + k / window, h) * 3 + region(wx * window + k % window, w);
      T* m = mask.data() + (wy * nw + wx) * t * t;
      for (std::size_t a = 0; a < t; ++a)
        for (std::size_t b = 0; b < t; ++b) m[a * t + b] = label[a] == label[b] ? T(0) : T(-1e9);
    }
  return Tensor<T>::from({nh * nw, t, t}, std::move(mask));
}

template <typename T>
Tensor<T> wmsa(const Tensor<T>& windows, const SwinBlockParams<T>& p, nd::OptTensor<T> mask) {
  require(windows.ndim() == 3 && windows.dim(1) == p.window * p.window && windows.dim(2) == p.dim,
          "wmsa expects [N," + std::to_string(p.window * p.window) + "," + std::to_string(p.dim) + "], got " +
              nd::shape_str(windows.shape()));
  const std::size_t n = windows.dim(0), t = windows.dim(1), d = p.dim, heads = p.heads, hd = p.head_dim();
  const std::size_t groups = mask ? mask->dim(0) : 1;
  require(n % groups == 0, "wmsa: window count not a multiple of the mask's window count");
  const nd::Shape head_shape{n / groups, groups, heads, t, hd};

  const auto split = split_heads_map(n, t, d, heads);
  auto q = nd::gather(nd::linear(windows, p.p_q), head_shape, split);
  auto k = nd::gather(nd::linear(windows, p.p_k), head_shape, split);
  auto v = nd::gather(nd::linear(windows, p.p_v), head_shape, split);

  auto scores = nd::scale(nd::bmm(q, k, true), T(1) / std::sqrt(T(hd)));
  scores = nd::add(scores, nd::gather(p.bias_table, {heads, t, t}, bias_gather_map(p.window, heads)));
  if (mask) scores = nd::add(scores, nd::reshape(*mask, {groups, 1, t, t}));
  auto attn = nd::softmax_lastdim(scores);
  auto out = nd::gather(nd::bmm(attn, v), {n, t, d}, merge_heads_map(n, t, d, heads));
  return nd::linear(out, p.proj_w, &p.proj_b);
}

template <typename T>
Tensor<T> swin_block(const Tensor<T>& z, const SwinBlockParams<T>& p) {
  require(z.ndim() == 4 && z.dim(3) == p.dim,
          "swin_block expects [B,H,W," + std::to_string(p.dim) + "], got " + nd::shape_str(z.shape()));
  const std::size_t b = z.dim(0), h = z.dim(1), w = z.dim(2);
  const std::size_t shift = p.shift();

  auto normed = nd::layer_norm(z, p.ln1_g, p.ln1_b);
  auto win = window_partition(normed, p.window, shift);
  Tensor<T> attn;
  if (p.shifted) {
    thread_local std::map<std::array<std::size_t, 3>, Tensor<T>> masks;
    auto key = std::array<std::size_t, 3>{h, w, p.window};
    auto it = masks.find(key);
    if (it == masks.end()) it = masks.emplace(key, shifted_attention_mask<T>(h, w, p.window)).first;
    attn = wmsa(win, p, &it->second);
  } else {
    attn = wmsa(win, p, nullptr);
  }
  auto z1 = nd::add(z, window_reverse(attn, b, h, w, p.window, shift));
  auto hidden = nd::gelu(nd::linear(nd::layer_norm(z1, p.ln2_g, p.ln2_b), p.fc1_w, &p.fc1_b));
  return nd::add(z1, nd::linear(hidden, p.fc2_w, &p.fc2_b));
}

template <typename T>
SwinBlockParams<T> make_swin_block(nd::ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                                   std::size_t heads, std::size_t window, std::size_t mlp_ratio, bool shifted) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("swin block: dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  SwinBlockParams<T> p;
  p.dim = dim;
  p.heads = heads;
  p.window = window;
  p.mlp_hidden = dim * mlp_ratio;
  p.shifted = shifted;
  const std::size_t span = 2 * window - 1;
  p.p_q = store.uniform(prefix + ".p_q", {dim, dim}, dim);
  p.p_k = store.uniform(prefix + ".p_k", {dim, dim}, dim);
  p.p_v = store.uniform(prefix + ".p_v", {dim, dim}, dim);
  p.proj_w = store.uniform(prefix + ".proj_w", {dim, dim}, dim);
  p.proj_b = store.constant(prefix + ".proj_b", {dim}, T(0));
  p.bias_table = store.constant(prefix + ".bias_table", {span * span, heads}, T(0));
  p.ln1_g = store.constant(prefix + ".ln1_g", {dim}, T(1));
  p.ln1_b = store.constant(prefix + ".ln1_b", {dim}, T(0));
  p.ln2_g = store.constant(prefix + ".ln2_g", {dim}, T(1));
  p.ln2_b = store.constant(prefix + ".ln2_b", {dim}, T(0));
  p.fc1_w = store.uniform(prefix + ".fc1_w", {dim, p.mlp_hidden}, dim);
  p.fc1_b = store.constant(prefix + ".fc1_b", {p.mlp_hidden}, T(0));
  p.fc2_w = store.uniform(prefix + ".fc2_w", {p.mlp_hidden, dim}, p.mlp_hidden);
  p.fc2_b = store.constant(prefix + ".fc2_b", {dim}, T(0));
  p.bias_index = relative_position_index(window);
  return p;
}

template <typename T>
DownSwinBlockParams<T> make_down_swin_block(nd::ParamStore<T>& store, const std::string& prefix,
                                            std::size_t in_channels, std::size_t heads, std::size_t window,
                                            std::size_t mlp_ratio) {
  DownSwinBlockParams<T> p;
  const std::size_t out = 2 * in_channels;
  p.channel_w = store.uniform(prefix + ".channel_w", {out, in_channels, 1, 1}, in_channels);
  p.channel_b = store.constant(prefix + ".channel_b", {out}, T(0));
  p.regular = make_swin_block(store, prefix + ".regular", out, heads, window, mlp_ratio, false);
  p.shifted = make_swin_block(store, prefix + ".shifted", out, heads, window, mlp_ratio, true);
  return p;
}

template <typename T>
UpSwinBlockParams<T> make_up_swin_block(nd::ParamStore<T>& store, const std::string& prefix, std::size_t in_channels,
                                        std::size_t heads, std::size_t window, std::size_t mlp_ratio) {
  if (in_channels % 2 != 0) throw ConfigError("up swin block needs an even channel count");
  UpSwinBlockParams<T> p;
  const std::size_t out = in_channels / 2;
  p.channel_w = store.uniform(prefix + ".channel_w", {out, in_channels, 1, 1}, in_channels);
  p.channel_b = store.constant(prefix + ".channel_b", {out}, T(0));
  p.regular = make_swin_block(store, prefix + ".regular", out, heads, window, mlp_ratio, false);
  p.shifted = make_swin_block(store, prefix + ".shifted", out, heads, window, mlp_ratio, true);
  p.conv_w = store.uniform(prefix + ".conv_w", {out, out, 3, 3}, out * 9);
  p.conv_b = store.constant(prefix + ".conv_b", {out}, T(0));
  return p;
}

template <typename T>
Tensor<T> down_swin_block(const Tensor<T>& f, const DownSwinBlockParams<T>& p) {
  auto z = nd::nchw_to_nhwc(nd::conv2d(f, p.channel_w, &p.channel_b, 1, 0));
  auto merged = nd::add(swin_block(z, p.regular), swin_block(z, p.shifted));
  return nd::avg_pool2(nd::nhwc_to_nchw(merged));
}

template <typename T>
Tensor<T> up_swin_block(const Tensor<T>& f, const UpSwinBlockParams<T>& p) {
  auto z = nd::nchw_to_nhwc(nd::conv2d(f, p.channel_w, &p.channel_b, 1, 0));
  auto merged = nd::add(swin_block(z, p.regular), swin_block(z, p.shifted));
  auto up = nd::upsample_nearest2(nd::nhwc_to_nchw(merged));
  return nd::conv2d(up, p.conv_w, &p.conv_b, 1, 1);
}

#define SDID_INSTANTIATE_SWIN(T)                                                                                   \
  template SwinBlockParams<T> make_swin_block(nd::ParamStore<T>&, const std::string&, std::size_t, std::size_t,   \
                                              std::size_t, std::size_t, bool);                                     \
  template DownSwinBlockParams<T> make_down_swin_block(nd::ParamStore<T>&, const std::string&, std::size_t,        \
                                                       std::size_t, std::size_t, std::size_t);                     \
  template UpSwinBlockParams<T> make_up_swin_block(nd::ParamStore<T>&, const std::string&, std::size_t,            \
                                                   std::size_t, std::size_t, std::size_t);                         \
  template Tensor<T> window_partition(const Tensor<T>&, std::size_t, std::size_t);                                 \
  template Tensor<T> window_reverse(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t,          \
                                    std::size_t);                                                                  \
  template Tensor<T> shifted_attention_mask(std::size_t, std::size_t, std::size_t);                                \
  template Tensor<T> wmsa(const Tensor<T>&, const SwinBlockParams<T>&, const Tensor<T>*);                          \
  template Tensor<T> swin_block(const Tensor<T>&, const SwinBlockParams<T>&);                                      \
  template Tensor<T> down_swin_block(const Tensor<T>&, const DownSwinBlockParams<T>&);                             \
  template Tensor<T> up_swin_block(const Tensor<T>&, const UpSwinBlockParams<T>&);

SDID_INSTANTIATE_SWIN(float)
SDID_INSTANTIATE_SWIN(double)
SDID_INSTANTIATE_SWIN(long double)

}  // namespace sdid::swin
