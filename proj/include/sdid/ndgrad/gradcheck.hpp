#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sdid/ndgrad/tensor.hpp"

namespace sdid::nd {

struct GradCheckOptions {
  double step = 1e-5;
  // When larger than `step`, each coordinate is also differenced at this
  // step, and that value is used if the two agree to within rounding noise.
  double coarse_step = 0.0;
  double tol = 1e-5;
  // Coordinates probed across all params; smaller param sets are checked in full.
  std::size_t max_coords = 256;
  std::uint64_t seed = 0x5eed;
};

/// Mirror of the objective in extended precision. `params` must match the
/// double parameters in order and shape; grad_check copies their values in.
struct ExtendedObjective {
  std::function<Tensor<long double>()> objective;
  std::vector<Tensor<long double>> params;
  double step = 1e-6;
  // Used when its fourth-order estimate agrees with the fine one within rounding.
  double wide_step = 1e-3;
};

struct GradCheckReport {
  double max_rel_err = 0.0;  // for a failing check, later coordinates skip the extended fallback
  bool pass = false;
  std::size_t coords_checked = 0;
  std::size_t extended_coords = 0;  // coordinates re-differenced in extended precision
  std::size_t kink_coords = 0;      // of those, ones judged by a one-sided difference
  std::string worst;  // "param[index]" of the largest error, with both values
};

/// Compares reverse-mode gradients of a scalar objective against central
/// differences. Relative error is |a - n| / max(1e-8, |a|, |n|).
/// `objective` must rebuild the graph from the current parameter values on
/// every call.
///
/// With `extended`, a coordinate whose double-precision difference misses
/// the tolerance is differenced again in extended precision. If the left and
/// right one-sided differences there disagree, the point sits on a kink and
/// the analytic value is compared against the nearer one-sided slope.
GradCheckReport grad_check(const std::function<Tensor<double>()>& objective, std::vector<Tensor<double>> params,
                           const GradCheckOptions& options = {}, const ExtendedObjective* extended = nullptr);

/// Identity in the forward pass whose backward scales the incoming gradient.
/// A factor other than 1 is a deliberately wrong derivative, used as a
/// negative control for grad_check.
Tensor<double> scaled_backward_identity(const Tensor<double>& x, double factor);

}  // namespace sdid::nd
