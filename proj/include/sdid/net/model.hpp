#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdid/config.hpp"
#include "sdid/ndgrad/ops.hpp"
#include "sdid/ndgrad/params.hpp"
#include "sdid/ndgrad/rng.hpp"
#include "sdid/swin/swin.hpp"

namespace sdid::net {

using nd::Tensor;

enum class StyleKind { noise, noise_free, sampled, mixed };

const char* style_kind_name(StyleKind kind);

/// A batch of style vectors, values[B, style_dim]. The kind is a label only.
template <typename T>
struct StyleVector {
  Tensor<T> values;
  StyleKind kind = StyleKind::sampled;
};

/// Intermediate tensors of one style conversion, for inspection.
template <typename T>
struct ScTrace {
  Tensor<T> mask;
  Tensor<T> f_adain;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  nd::ParamStore<T>& params() { return store_; }
  const nd::ParamStore<T>& params() const { return store_; }

  /// x[B,in,H,W] -> F_e[B,C_e,H/2^s,W/2^s].
  Tensor<T> encode(const Tensor<T>& x) const;
  /// F[B,C_e,h,w] -> [B,in,h*2^s,w*2^s].
  Tensor<T> decode(const Tensor<T>& f) const;
  StyleVector<T> extract_style(const Tensor<T>& img, StyleKind kind) const;
  /// z[B,gen_input_dim] -> sampled style.
  StyleVector<T> generate_style(const Tensor<T>& z) const;
  /// Draws z ~ N(0,1) from `rng` and runs the generator.
  StyleVector<T> sample_style(std::size_t batch, nd::Rng& rng) const;
  /// Mask * F_e + (1 - Mask) * F_adain.
  Tensor<T> style_convert(const Tensor<T>& f_e, const StyleVector<T>& style, ScTrace<T>* trace = nullptr) const;
  /// decode(style_convert(encode(x), s)).
  Tensor<T> denoise(const Tensor<T>& x, const StyleVector<T>& style) const;

  /// Parameters updated by the generator optimizer.
  bool is_generator_param(const std::string& name) const;

  /// Copies values from another model with the same config (precision may differ).
  template <typename U>
  void copy_values_from(const Model<U>& other);

 private:
  struct AdainBlock {
    Tensor<T> affine_w, affine_b;  // style -> [s_s, s_b]
    Tensor<T> conv_w, conv_b;
  };

  ModelConfig config_;
  nd::ParamStore<T> store_;

  Tensor<T> shallow_w_, shallow_b_;
  std::vector<swin::DownSwinBlockParams<T>> down_;
  std::vector<swin::UpSwinBlockParams<T>> up_;
  Tensor<T> out_w_, out_b_;

  std::vector<Tensor<T>> ext_w_, ext_b_;
  Tensor<T> ext_proj_w_, ext_proj_b_;

  std::vector<Tensor<T>> gen_w_, gen_b_;

  Tensor<T> sc_in_w_, sc_in_b_;
  std::vector<AdainBlock> blocks_;
  Tensor<T> sc_out_w_, sc_out_b_;
  Tensor<T> mask_w_, mask_b_;
};

/// Mask * F_e + (1 - Mask) * F_adain.
template <typename T>
Tensor<T> mask_fuse(const Tensor<T>& mask, const Tensor<T>& f_e, const Tensor<T>& f_adain);

/// Trainable scalar count for a config, from per-layer formulas.
std::size_t count_params(const ModelConfig& config);

/// Extractor conv widths before global pooling.
std::vector<std::size_t> extractor_channels(const ModelConfig& config);
inline constexpr std::size_t kGeneratorLayers = 6;

template <typename T>
template <typename U>
void Model<T>::copy_values_from(const Model<U>& other) {
  const auto& src = other.params().entries();
  auto& dst = store_.entries();
  if (src.size() != dst.size()) throw ConfigError("copy_values_from: parameter lists differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape())
      throw ConfigError("copy_values_from: parameter '" + dst[i].name + "' does not match");
    const auto s = src[i].tensor.data();
    auto& d = dst[i].tensor.values();
    for (std::size_t j = 0; j < s.size(); ++j) d[j] = static_cast<T>(s[j]);
  }
}

}  // namespace sdid::net
