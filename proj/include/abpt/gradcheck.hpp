#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Finite-difference suites behind `abpt grad-check <target>`.
namespace abpt {

// Relative error is |analytic - central difference| / max(1, |central difference|).
inline constexpr double kPrimitiveTolerance = 1e-6;
inline constexpr double kWindowTolerance = 1e-4;
inline constexpr double kIdentityTolerance = 1e-10;

struct CheckLine {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool ok() const { return max_rel_error < tolerance; }
};

struct GradCheckReport {
  std::string target;
  std::vector<CheckLine> lines;
  bool ok() const;
  double max_error() const;
};

const std::vector<std::string>& grad_check_targets();

// Throws std::invalid_argument for a target outside grad_check_targets().
GradCheckReport run_grad_check(std::string_view target, std::uint64_t seed = 1);

}  // namespace abpt
