#include "sdid/net/model.hpp"

namespace sdid::net {

const char* style_kind_name(StyleKind kind) {
  switch (kind) {
    case StyleKind::noise: return "noise";
    case StyleKind::noise_free: return "noise_free";
    case StyleKind::sampled: return "sampled";
    case StyleKind::mixed: return "mixed";
  }
  return "unknown";
}

std::vector<std::size_t> extractor_channels(const ModelConfig& config) { return {32, 64, 128, config.gap_dim}; }

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t init_seed) : config_(config), store_(init_seed) {
  config_.validate();
  const std::size_t c = config_.base_channels, in = config_.in_channels, m = config_.window;
  const std::size_t ce = config_.encoded_channels(), cr = ce / config_.sc_reduce_factor, sd = config_.style_dim;

  shallow_w_ = store_.uniform("enc.shallow_w", {c, in, 3, 3}, in * 9);
  shallow_b_ = store_.constant("enc.shallow_b", {c}, T(0));
  for (std::size_t s = 0, width = c; s < config_.num_scales; ++s, width *= 2)
    down_.push_back(swin::make_down_swin_block(store_, "enc.down" + std::to_string(s), width, config_.heads, m,
                                               config_.mlp_ratio));

  for (std::size_t s = 0, width = ce; s < config_.num_scales; ++s, width /= 2)
    up_.push_back(
        swin::make_up_swin_block(store_, "dec.up" + std::to_string(s), width, config_.heads, m, config_.mlp_ratio));
  out_w_ = store_.uniform("dec.out_w", {in, c, 3, 3}, c * 9);
  out_b_ = store_.constant("dec.out_b", {in}, T(0));

  std::size_t prev = in;
  const auto widths = extractor_channels(config_);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    ext_w_.push_back(store_.uniform("ext.conv" + std::to_string(i) + "_w", {widths[i], prev, 3, 3}, prev * 9));
    ext_b_.push_back(store_.constant("ext.conv" + std::to_string(i) + "_b", {widths[i]}, T(0)));
    prev = widths[i];
  }
  ext_proj_w_ = store_.uniform("ext.proj_w", {config_.gap_dim, sd}, config_.gap_dim);
  ext_proj_b_ = store_.constant("ext.proj_b", {sd}, T(0));

  for (std::size_t i = 0; i < kGeneratorLayers; ++i) {
    const std::size_t fan_in = i == 0 ? config_.gen_input_dim : sd;
    gen_w_.push_back(store_.uniform("gen.fc" + std::to_string(i) + "_w", {fan_in, sd}, fan_in));
    gen_b_.push_back(store_.constant("gen.fc" + std::to_string(i) + "_b", {sd}, T(0)));
  }

  sc_in_w_ = store_.uniform("sc.in_w", {cr, ce, 1, 1}, ce);
  sc_in_b_ = store_.constant("sc.in_b", {cr}, T(0));
  for (std::size_t k = 0; k < config_.sc_blocks; ++k) {
    const std::string prefix = "sc.block" + std::to_string(k);
    AdainBlock b;
    b.affine_w = store_.uniform(prefix + ".affine_w", {sd, 2 * cr}, sd);
    // scale half starts at 1, shift half at 0
    nd::Buffer<T> bias(2 * cr, T(0));
    std::fill(bias.begin(), bias.begin() + static_cast<std::ptrdiff_t>(cr), T(1));
    b.affine_b = store_.add(prefix + ".affine_b", Tensor<T>::from({2 * cr}, std::move(bias)));
    b.conv_w = store_.uniform(prefix + ".conv_w", {cr, cr, 3, 3}, cr * 9);
    b.conv_b = store_.constant(prefix + ".conv_b", {cr}, T(0));
    blocks_.push_back(std::move(b));
  }
  sc_out_w_ = store_.uniform("sc.out_w", {ce, cr, 1, 1}, cr);
  sc_out_b_ = store_.constant("sc.out_b", {ce}, T(0));
  mask_w_ = store_.uniform("sc.mask_w", {ce, ce, 1, 1}, ce);
  mask_b_ = store_.constant("sc.mask_b", {ce}, T(0));
}

template <typename T>
Tensor<T> Model<T>::encode(const Tensor<T>& x) const {
  if (x.ndim() != 4 || x.dim(1) != config_.in_channels)
    throw DimensionError("encode expects [B," + std::to_string(config_.in_channels) + ",H,W], got " +
                         nd::shape_str(x.shape()));
  const std::size_t k = config_.size_multiple();
  if (x.dim(2) % k != 0 || x.dim(3) % k != 0)
    throw DimensionError("image size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                         " is not a multiple of " + std::to_string(k));
  auto f = nd::conv2d(x, shallow_w_, &shallow_b_, 1, 1);
  for (const auto& d : down_) f = swin::down_swin_block(f, d);
  return f;
}

template <typename T>
Tensor<T> Model<T>::decode(const Tensor<T>& f) const {
  if (f.ndim() != 4 || f.dim(1) != config_.encoded_channels())
    throw DimensionError("decode expects [B," + std::to_string(config_.encoded_channels()) + ",h,w], got " +
                         nd::shape_str(f.shape()));
  auto g = f;
  for (const auto& u : up_) g = swin::up_swin_block(g, u);
  return nd::conv2d(g, out_w_, &out_b_, 1, 1);
}

template <typename T>
StyleVector<T> Model<T>::extract_style(const Tensor<T>& img, StyleKind kind) const {
  if (img.ndim() != 4 || img.dim(1) != config_.in_channels)
    throw DimensionError("extract_style expects [B," + std::to_string(config_.in_channels) + ",H,W], got " +
                         nd::shape_str(img.shape()));
  auto h = img;
  for (std::size_t i = 0; i < ext_w_.size(); ++i) h = nd::relu(nd::conv2d(h, ext_w_[i], &ext_b_[i], 2, 1));
  return {nd::linear(nd::global_avg_pool(h), ext_proj_w_, &ext_proj_b_), kind};
}

template <typename T>
StyleVector<T> Model<T>::generate_style(const Tensor<T>& z) const {
  if (z.ndim() != 2 || z.dim(1) != config_.gen_input_dim)
    throw DimensionError("generate_style expects [B," + std::to_string(config_.gen_input_dim) + "], got " +
                         nd::shape_str(z.shape()));
  auto h = z;
  for (std::size_t i = 0; i < gen_w_.size(); ++i) {
    h = nd::linear(h, gen_w_[i], &gen_b_[i]);
    if (i + 1 < gen_w_.size()) h = nd::relu(h);
  }
  return {h, StyleKind::sampled};
}

template <typename T>
StyleVector<T> Model<T>::sample_style(std::size_t batch, nd::Rng& rng) const {
  nd::Buffer<T> z(batch * config_.gen_input_dim);
  for (auto& v : z) v = static_cast<T>(rng.normal());
  return generate_style(Tensor<T>::from({batch, config_.gen_input_dim}, std::move(z)));
}

template <typename T>
Tensor<T> Model<T>::style_convert(const Tensor<T>& f_e, const StyleVector<T>& style, ScTrace<T>* trace) const {
  const std::size_t ce = config_.encoded_channels(), cr = ce / config_.sc_reduce_factor;
  if (f_e.ndim() != 4 || f_e.dim(1) != ce)
    throw DimensionError("style_convert expects [B," + std::to_string(ce) + ",h,w], got " +
                         nd::shape_str(f_e.shape()));
  const auto& s = style.values;
  if (s.ndim() != 2 || s.dim(1) != config_.style_dim || (s.dim(0) != 1 && s.dim(0) != f_e.dim(0)))
    throw DimensionError("style batch " + nd::shape_str(s.shape()) + " does not match features " +
                         nd::shape_str(f_e.shape()));
  const bool shared = s.dim(0) != f_e.dim(0);

  auto e = nd::conv2d(f_e, sc_in_w_, &sc_in_b_, 1, 0);
  for (const auto& b : blocks_) {
    auto params = nd::linear(s, b.affine_w, &b.affine_b);
    auto scale = nd::slice_lastdim(params, 0, cr);
    auto shift = nd::slice_lastdim(params, cr, 2 * cr);
    if (shared) {
      scale = nd::reshape(scale, {cr});
      shift = nd::reshape(shift, {cr});
    }
    e = nd::adain(e, scale, shift, static_cast<T>(config_.eps));
    e = nd::gelu(nd::conv2d(e, b.conv_w, &b.conv_b, 1, 1));
  }
  auto f_adain = nd::conv2d(e, sc_out_w_, &sc_out_b_, 1, 0);
  auto mask = nd::sigmoid(nd::conv2d(f_adain, mask_w_, &mask_b_, 1, 0));
  if (trace) *trace = {mask, f_adain};
  return mask_fuse(mask, f_e, f_adain);
}

template <typename T>
Tensor<T> Model<T>::denoise(const Tensor<T>& x, const StyleVector<T>& style) const {
  return decode(style_convert(encode(x), style));
}

template <typename T>
bool Model<T>::is_generator_param(const std::string& name) const {
  return name.rfind("gen.", 0) == 0;
}

namespace {

std::size_t swin_block_count(std::size_t d, std::size_t m, std::size_t heads, std::size_t ratio) {
  const std::size_t span = 2 * m - 1;
  return 4 * d * d + d + span * span * heads + 4 * d + 2 * d * ratio * d + ratio * d + d;
}

}  // namespace

std::size_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.base_channels, in = cfg.in_channels, m = cfg.window, h = cfg.heads, r = cfg.mlp_ratio;
  const std::size_t ce = cfg.encoded_channels(), cr = ce / cfg.sc_reduce_factor, sd = cfg.style_dim;
  std::size_t n = in * c * 9 + c;
  for (std::size_t s = 0, w = c; s < cfg.num_scales; ++s, w *= 2)
    n += 2 * w * w + 2 * w + 2 * swin_block_count(2 * w, m, h, r);
  for (std::size_t s = 0, w = ce; s < cfg.num_scales; ++s, w /= 2) {
    const std::size_t o = w / 2;
    n += o * w + o + 2 * swin_block_count(o, m, h, r) + o * o * 9 + o;
  }
  n += c * in * 9 + in;
  std::size_t prev = in;
  for (std::size_t w : extractor_channels(cfg)) {
    n += w * prev * 9 + w;
    prev = w;
  }
  n += cfg.gap_dim * sd + sd;
  n += cfg.gen_input_dim * sd + sd + (kGeneratorLayers - 1) * (sd * sd + sd);
  n += ce * cr + cr + cfg.sc_blocks * (sd * 2 * cr + 2 * cr + cr * cr * 9 + cr) + cr * ce + ce + ce * ce + ce;
  return n;
}

template <typename T>
Tensor<T> mask_fuse(const Tensor<T>& mask, const Tensor<T>& f_e, const Tensor<T>& f_adain) {
  return nd::add(nd::mul(mask, f_e), nd::mul(nd::affine_scalar(mask, T(-1), T(1)), f_adain));
}

template Tensor<float> mask_fuse(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> mask_fuse(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template Tensor<long double> mask_fuse(const Tensor<long double>&, const Tensor<long double>&,
                                       const Tensor<long double>&);
template class Model<float>;
template class Model<double>;
template class Model<long double>;

}  // namespace sdid::net
