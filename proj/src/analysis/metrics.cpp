#include "sdid/analysis/metrics.hpp"

#include <array>
#include <cmath>

#include "sdid/errors.hpp"

namespace sdid::analysis {

namespace {

constexpr int kWin = 11;

std::array<double, kWin> gaussian_taps() {
  std::array<double, kWin> w{};
  double s = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    w[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

template <typename T>
double psnr_impl(std::span<const T> a, std::span<const T> b, double peak) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("psnr needs two non-empty buffers of equal size");
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    se += d * d;
  }
  const double mse = se / double(a.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

}  // namespace

double psnr(std::span<const float> a, std::span<const float> b, double peak) { return psnr_impl(a, b, peak); }

double psnr(std::span<const double> a, std::span<const double> b, double peak) { return psnr_impl(a, b, peak); }

double psnr(const data::Image& a, const data::Image& b, double peak) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width)
    throw DimensionError("psnr: image shapes differ");
  return psnr(a.pixels, b.pixels, peak);
}

double ssim(const data::Image& a, const data::Image& b, double peak) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width)
    throw DimensionError("ssim: image shapes differ");
  if (a.height < kWin || a.width < kWin) throw DimensionError("ssim needs images of at least 11x11");
  static const auto w = gaussian_taps();
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < a.channels; ++c)
    for (std::size_t y = 0; y + kWin <= a.height; ++y)
      for (std::size_t x = 0; x + kWin <= a.width; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            const double k = w[i] * w[j];
            const double va = a.at(c, y + i, x + j), vb = b.at(c, y + i, x + j);
            ma += k * va;
            mb += k * vb;
            saa += k * va * va;
            sbb += k * vb * vb;
            sab += k * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / double(count);
}

}  // namespace sdid::analysis
