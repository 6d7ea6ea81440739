#include "sdid/ndgrad/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "sdid/errors.hpp"
#include "sdid/ndgrad/rng.hpp"

namespace sdid::nd {

namespace {

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({1e-8, std::abs(a), std::abs(n)}); }

struct Extended {
  const ExtendedObjective& ext;

  long double at(long double& v, long double x) {
    const long double saved = v;
    v = x;
    const long double r = ext.objective().item();
    v = saved;
    return r;
  }

  // Central and second-order one-sided differences at one coordinate.
  struct Estimates {
    double central, left, right;
    long double scale;
  };

  // Fourth-order central difference at a wide step.
  double richardson(long double& v, long double h) {
    const long double x = v;
    const long double fp = at(v, x + h), fm = at(v, x - h), fp2 = at(v, x + 2 * h), fm2 = at(v, x - 2 * h);
    return double((8 * (fp - fm) - (fp2 - fm2)) / (12 * h));
  }

  Estimates run(long double& v) {
    const long double h = ext.step, x = v;
    const long double f0 = at(v, x), fp = at(v, x + h), fm = at(v, x - h), fp2 = at(v, x + 2 * h),
                      fm2 = at(v, x - 2 * h);
    const long double scale = std::max({std::abs(f0), std::abs(fp), std::abs(fm), std::abs(fp2), std::abs(fm2)});
    return {double((fp - fm) / (2 * h)), double((3 * f0 - 4 * fm + fm2) / (2 * h)),
            double((-3 * f0 + 4 * fp - fp2) / (2 * h)), scale};
  }
};

}  // namespace

GradCheckReport grad_check(const std::function<Tensor<double>()>& objective, std::vector<Tensor<double>> params,
                           const GradCheckOptions& options, const ExtendedObjective* extended) {
  std::vector<Tensor<long double>> wide;
  if (extended) {
    wide = extended->params;
    if (extended->params.size() != params.size()) throw GraphError("extended objective has a different parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (extended->params[i].shape() != params[i].shape())
        throw GraphError("extended parameter " + std::to_string(i) + " has a different shape");
      const auto src = params[i].data();
      auto& dst = wide[i].values();
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j];
    }
  }
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  backward(objective());

  std::size_t total = 0;
  for (const auto& p : params) total += p.numel();

  Rng rng(options.seed);
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::size_t n = p.numel();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (total > options.max_coords) {
      const std::size_t share =
          std::max<std::size_t>(2, (options.max_coords * n + total - 1) / std::max<std::size_t>(total, 1));
      const std::size_t k = std::min(n, share);
      for (std::size_t i = 0; i < k; ++i) std::swap(coords[i], coords[i + rng.below(n - i)]);
      coords.resize(k);
    }
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    if (analytic.empty()) analytic.assign(n, 0.0);

    NoGradGuard no_grad;
    for (std::size_t c : coords) {
      double& v = p.values()[c];
      const double saved = v;
      double scale = 0.0;
      auto central = [&](double h) {
        v = saved + h;
        const double up = objective().item();
        v = saved - h;
        const double down = objective().item();
        v = saved;
        scale = std::max({scale, std::abs(up), std::abs(down)});
        return (up - down) / (2.0 * h);
      };
      double numeric = central(options.step);
      if (options.coarse_step > options.step) {
        const double coarse = central(options.coarse_step);
        // agreement within the fine step's rounding noise means no kink
        // inside the coarse interval, and the coarse value is less noisy
        const double noise = 64.0 * std::numeric_limits<double>::epsilon() * scale / options.step;
        if (std::abs(coarse - numeric) <= noise) numeric = coarse;
      }
      const double a = analytic[c];
      double rel = rel_err(a, numeric);
      // once the check has failed, further fallbacks cannot change the verdict
      if (rel > options.tol && extended && report.max_rel_err <= options.tol) {
        ++report.extended_coords;
        Extended ext{*extended};
        const auto e = ext.run(wide[pi].values()[c]);
        numeric = e.central;
        const double fine_noise = 64.0 * std::numeric_limits<long double>::epsilon() * double(e.scale) / extended->step;
        if (extended->wide_step > extended->step) {
          const double r = ext.richardson(wide[pi].values()[c], extended->wide_step);
          if (std::abs(r - numeric) <= fine_noise) numeric = r;
        }
        rel = rel_err(a, numeric);
        // one-sided slopes that differ by more than their rounding noise
        const double noise = 1024.0 * std::numeric_limits<long double>::epsilon() * double(e.scale) / extended->step;
        const bool kink = std::abs(e.left - e.right) > std::max(noise, 1e-7 * std::max(std::abs(e.left), std::abs(e.right)));
        if (rel > options.tol && kink) {
          ++report.kink_coords;
          numeric = rel_err(a, e.left) <= rel_err(a, e.right) ? e.left : e.right;
          rel = rel_err(a, numeric);
        }
      }
      ++report.coords_checked;
      if (rel > report.max_rel_err || report.worst.empty()) {
        report.max_rel_err = std::max(rel, report.max_rel_err);
        report.worst = "param" + std::to_string(pi) + "[" + std::to_string(c) + "] analytic " + sci(a) +
                       " numeric " + sci(numeric);
      }
    }
  }
  report.pass = report.max_rel_err <= options.tol;
  for (auto& p : params) p.zero_grad();
  return report;
}

Tensor<double> scaled_backward_identity(const Tensor<double>& x, double factor) {
  Node<double>* px = x.node().get();
  return make_result<double>(x.shape(), x.values(), {&x}, "scaled_backward_identity",
                             [px, factor](Node<double>& self) {
                               auto& g = px->ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
                             });
}

}  // namespace sdid::nd
