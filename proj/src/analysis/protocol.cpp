#include "sdid/analysis/protocol.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdid/data/batch.hpp"
#include "sdid/train/trainer.hpp"

namespace sdid::analysis {

namespace {

constexpr std::size_t kChunk = 8;

std::vector<double> row(const nd::Tensor<float>& t, std::size_t i) {
  const std::size_t d = t.dim(1);
  const auto s = t.data().subspan(i * d, d);
  return {s.begin(), s.end()};
}

// Calls f(lo, n, noisy, clean) over chunks of the samples.
template <typename F>
void chunked(const std::vector<data::TrainSample>& samples, F f) {
  for (std::size_t lo = 0; lo < samples.size(); lo += kChunk) {
    const std::size_t n = std::min(kChunk, samples.size() - lo);
    std::vector<const data::Image*> xs, ys;
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(&samples[lo + i].noisy);
      ys.push_back(&samples[lo + i].clean);
    }
    f(lo, n, data::stack_images<float>(xs), data::stack_images<float>(ys));
  }
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = std::ptrdiff_t(2 * n - 2);
  i %= period;
  if (i < 0) i += period;
  return std::size_t(i < std::ptrdiff_t(n) ? i : period - i);
}

}  // namespace

DenoiseEval evaluate_denoising(const Model<float>& model, const RunConfig& cfg,
                               const std::vector<data::TrainSample>& samples) {
  if (samples.empty()) throw ConfigError("evaluation needs at least one sample");
  nd::NoGradGuard guard;
  DenoiseEval e;
  chunked(samples, [&](std::size_t lo, std::size_t n, const nd::Tensor<float>& x, const nd::Tensor<float>&) {
    const auto style = model.generate_style(train::eval_noise<float>(cfg, n, lo / kChunk));
    const auto out = model.denoise(x, style);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = samples[lo + i];
      const auto img = data::image_at(out, i);
      e.psnr_noisy += psnr(s.noisy, s.clean);
      e.psnr_out += psnr(img, s.clean);
      e.ssim_noisy += ssim(s.noisy, s.clean);
      e.ssim_out += ssim(img, s.clean);
    }
  });
  e.count = samples.size();
  const double n = double(e.count);
  e.psnr_noisy /= n;
  e.psnr_out /= n;
  e.ssim_noisy /= n;
  e.ssim_out /= n;
  return e;
}

BypassEval evaluate_bypass(const Model<float>& model, const std::vector<data::TrainSample>& samples) {
  if (samples.empty()) throw ConfigError("evaluation needs at least one sample");
  nd::NoGradGuard guard;
  BypassEval e;
  chunked(samples, [&](std::size_t lo, std::size_t n, const nd::Tensor<float>& x, const nd::Tensor<float>&) {
    const auto rec = model.decode(model.encode(x));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = samples[lo + i];
      const auto img = data::image_at(rec, i);
      e.psnr_input += psnr(img, s.noisy);
      e.psnr_clean += psnr(img, s.clean);
      e.psnr_noisy += psnr(s.noisy, s.clean);
    }
  });
  e.count = samples.size();
  const double n = double(e.count);
  e.psnr_input /= n;
  e.psnr_clean /= n;
  e.psnr_noisy /= n;
  return e;
}

std::vector<StyleClass> style_classes(const Model<float>& model, const RunConfig& cfg,
                                      const std::vector<data::TrainSample>& samples) {
  nd::NoGradGuard guard;
  std::vector<StyleClass> classes{{"noise", {}}, {"noise_free", {}}, {"sampled", {}}};
  chunked(samples, [&](std::size_t lo, std::size_t n, const nd::Tensor<float>& x, const nd::Tensor<float>& y) {
    const auto s_n = model.extract_style(x, net::StyleKind::noise);
    const auto s_nf = model.extract_style(y, net::StyleKind::noise_free);
    const auto s_s = model.generate_style(train::eval_noise<float>(cfg, n, lo / kChunk));
    for (std::size_t i = 0; i < n; ++i) {
      classes[0].styles.push_back(row(s_n.values, i));
      classes[1].styles.push_back(row(s_nf.values, i));
      classes[2].styles.push_back(row(s_s.values, i));
    }
  });
  return classes;
}

AnalysisReport analyze(const Model<float>& model, const RunConfig& cfg, const std::vector<data::TrainSample>& archive) {
  const auto& ac = cfg.analysis;
  AnalysisReport r;
  r.projection = pca_project_styles(style_classes(model, cfg, validation_samples(cfg, archive, ac.style_images)));

  const auto samples = validation_samples(cfg, archive, ac.feature_images);
  std::vector<data::Image> images;
  std::vector<std::vector<float>> styles;
  {
    nd::NoGradGuard guard;
    for (std::size_t lo = 0; lo < samples.size(); lo += kChunk) {
      const std::size_t n = std::min(kChunk, samples.size() - lo);
      const auto s = model.generate_style(train::eval_noise<float>(cfg, n, lo / kChunk));
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = s.values.data().subspan(i * s.values.dim(1), s.values.dim(1));
        styles.emplace_back(v.begin(), v.end());
      }
    }
  }
  for (const auto& s : samples) images.push_back(s.noisy);
  r.features = feature_diff_stats(model, images, styles, ac.bins);
  for (const auto& f : r.features) r.gaussian_channels += f.residual <= r.fit_threshold;

  std::ostringstream os;
  os.precision(6);
  os << "style space: " << r.projection.coords.size() << " points\n" << r.projection.report();
  os << "feature differences: " << images.size() << " images, " << r.features.size() << " channels, "
     << r.gaussian_channels << " with residual <= " << r.fit_threshold << "\n";
  r.text = os.str();
  return r;
}

void write_analysis(const std::string& dir, const AnalysisReport& report) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  write_projection_csv(dir + "/style_proj.csv", report.projection);
  write_feature_csv(dir + "/feat_stats.csv", report.features);
  std::ofstream f(dir + "/report.txt", std::ios::trunc);
  if (!(f << report.text)) throw IoError("cannot write '" + dir + "/report.txt'");
}

data::Image reflect_pad(const data::Image& img, std::size_t multiple) {
  if (multiple == 0) throw ConfigError("padding multiple must be positive");
  const auto up = [&](std::size_t n) { return (n + multiple - 1) / multiple * multiple; };
  const std::size_t h = up(img.height), w = up(img.width);
  if (h > 2 * img.height - 1 || w > 2 * img.width - 1)
    throw DimensionError("image is too small to reflect-pad to a multiple of " + std::to_string(multiple));
  data::Image out(img.channels, h, w);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.at(c, y, x) = img.at(c, reflect(std::ptrdiff_t(y), img.height), reflect(std::ptrdiff_t(x), img.width));
  return out;
}

data::Image crop(const data::Image& img, std::size_t height, std::size_t width) {
  if (height > img.height || width > img.width) throw DimensionError("crop larger than the image");
  data::Image out(img.channels, height, width);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = img.at(c, y, x);
  return out;
}

data::Image denoise_image(const Model<float>& model, const data::Image& noisy, const data::Image* style_ref,
                          std::uint64_t seed, bool pad) {
  const auto& mc = model.config();
  if (noisy.channels != mc.in_channels)
    throw DimensionError("image has " + std::to_string(noisy.channels) + " channels, model expects " +
                         std::to_string(mc.in_channels));
  const std::size_t m = mc.size_multiple();
  const bool fits = noisy.height % m == 0 && noisy.width % m == 0;
  if (!fits && !pad)
    throw DimensionError("image size " + std::to_string(noisy.height) + "x" + std::to_string(noisy.width) +
                         " is not a multiple of " + std::to_string(m) + "; rerun with --pad reflect");
  nd::NoGradGuard guard;
  const auto x = data::stack_images<float>({fits ? noisy : reflect_pad(noisy, m)});
  net::StyleVector<float> style;
  if (style_ref) {
    if (style_ref->channels != mc.in_channels) throw DimensionError("style reference has the wrong channel count");
    const bool ref_fits = style_ref->height % m == 0 && style_ref->width % m == 0;
    if (!ref_fits && !pad) throw DimensionError("style reference size is not a multiple of " + std::to_string(m));
    style = model.extract_style(data::stack_images<float>({ref_fits ? *style_ref : reflect_pad(*style_ref, m)}),
                                net::StyleKind::noise_free);
  } else {
    nd::Rng rng(seed);
    style = model.sample_style(1, rng);
  }
  const auto out = data::image_at(model.denoise(x, style), 0);
  return fits ? out : crop(out, noisy.height, noisy.width);
}

}  // namespace sdid::analysis
