#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sdid/analysis/analysis.hpp"

namespace sdid::analysis {

struct DenoiseEval {
  std::size_t count = 0;
  double psnr_noisy = 0, psnr_out = 0;  // means against the clean image
  double ssim_noisy = 0, ssim_out = 0;
};

/// Sampled-style denoising of every sample, styles drawn with eval_noise.
DenoiseEval evaluate_denoising(const Model<float>& model, const RunConfig& cfg,
                               const std::vector<data::TrainSample>& samples);

struct BypassEval {
  std::size_t count = 0;
  double psnr_input = 0;  // mean PSNR(dec(enc(x)), x)
  double psnr_clean = 0;  // mean PSNR(dec(enc(x)), y)
  double psnr_noisy = 0;  // mean PSNR(x, y)
};

/// Style conversion removed: the plain encoder-decoder path.
BypassEval evaluate_bypass(const Model<float>& model, const std::vector<data::TrainSample>& samples);

/// noise (extractor on noisy), noise_free (extractor on clean) and sampled
/// (generator on eval_noise) styles, one per sample each.
std::vector<StyleClass> style_classes(const Model<float>& model, const RunConfig& cfg,
                                      const std::vector<data::TrainSample>& samples);

struct AnalysisReport {
  StyleProjection projection;
  std::vector<ChannelDiffStats> features;
  double fit_threshold = 0.05;
  std::size_t gaussian_channels = 0;  // residual <= fit_threshold
  std::string text;
};

/// Style-space projection over cfg.analysis.style_images validation samples
/// and feature-difference statistics over cfg.analysis.feature_images noisy
/// validation images with sampled styles. `archive` supplies the leading
/// samples; the rest are regenerated from their seeds.
AnalysisReport analyze(const Model<float>& model, const RunConfig& cfg, const std::vector<data::TrainSample>& archive);

/// Writes style_proj.csv, feat_stats.csv and report.txt into `dir`.
void write_analysis(const std::string& dir, const AnalysisReport& report);

/// Reflect-pads bottom and right edges up to multiples of `multiple`.
data::Image reflect_pad(const data::Image& img, std::size_t multiple);
data::Image crop(const data::Image& img, std::size_t height, std::size_t width);

/// Denoises one image. Without `style_ref` the style is sampled from
/// `seed`; with it, the noise-free style is extracted from the reference.
/// Sizes must be multiples of the model's size_multiple unless `pad` is set.
data::Image denoise_image(const Model<float>& model, const data::Image& noisy, const data::Image* style_ref,
                          std::uint64_t seed, bool pad);

}  // namespace sdid::analysis
