#pragma once

#include <span>

#include "sdid/data/synth.hpp"

namespace sdid::analysis {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE) in dB, capped at kPsnrCap.
double psnr(std::span<const float> a, std::span<const float> b, double peak = 1.0);
double psnr(std::span<const double> a, std::span<const double> b, double peak = 1.0);
double psnr(const data::Image& a, const data::Image& b, double peak = 1.0);

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// averaged over valid window positions and channels.
double ssim(const data::Image& a, const data::Image& b, double peak = 1.0);

}  // namespace sdid::analysis
