#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sdid::verify {

struct CheckResult {
  std::string suite;  // "grad" or "props"
  std::string name;
  bool pass = false;
  double value = 0;  // max relative error for grad checks, max deviation for props
  double limit = 0;
  std::string detail;
};

struct Options {
  std::uint64_t seed = 0;
  // Seeds per primitive in the grad suite.
  std::size_t grad_seeds = 3;
  // Multiplies every backward pass by this factor; anything but 1 must fail.
  double corrupt_backward = 1.0;
  std::function<void(const CheckResult&)> on_check;
};

struct Report {
  std::vector<CheckResult> checks;
  double max_rel_err = 0;  // over grad checks
  double seconds = 0;

  bool pass() const;
};

inline constexpr double kGradTol = 1e-5;

/// Runs "grad", "props" or "all". Throws ConfigError for another name.
Report run(const std::string& suite, const Options& options = {});

}  // namespace sdid::verify
