// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace drat::verify {

/// Measured attention work of a windowed pass against the unwindowed oracle
/// over the same tokens.
struct ComplexityRow {
  std::string axis;  // "joints" or "time"
  std::size_t T = 0, R = 0, D_n = 0, wnd = 0, stride = 0;
  std::uint64_t stride_dot_products = 0;
  std::uint64_t oracle_dot_products = 0;
  double ratio = 0.0;  // stride / oracle
};

/// Joint stride attention over T x R pose tokens plus two modal tokens per frame.
ComplexityRow measure_joint_complexity(std::size_t T, std::size_t R, std::size_t wnd, std::size_t stride = 0);
/// Temporal stride attention with D_n = hw + R + 3 tokens per frame.
ComplexityRow measure_temporal_complexity(std::size_t T, std::size_t hw, std::size_t R, std::size_t wnd,
                                          std::size_t stride = 0);
std::string complexity_json(std::span<const ComplexityRow> rows);

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string config_json = "{}";  // sizes and settings of the check
  std::uint64_t seed = 0;
  std::string inputs_json;  // inputs of the worst case, kept only on failure
};

// Individual checks; `trials` independent random cases each.
CheckResult check_identity_sampling(std::uint64_t seed, std::size_t trials);
CheckResult check_joint_equivalence(std::uint64_t seed, std::size_t trials);
CheckResult check_temporal_equivalence(std::uint64_t seed, std::size_t trials);
CheckResult check_deformable_equivalence(std::uint64_t seed, std::size_t trials);
std::vector<CheckResult> gradcheck_battery(std::uint64_t seed);
CheckResult check_end_to_end_gradient(std::uint64_t seed);
std::vector<CheckResult> complexity_checks();

struct SuiteOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 100;
  /// Mutation test: run with the attention scaling deliberately removed.
  bool inject_scaling_fault = false;
};

struct SuiteReport {
  std::uint64_t seed = 0;
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool passed() const;
  /// {"seed", "passed", "seconds", "checks": [{check_name, status, max_error,
  ///  tolerance, config, seed[, inputs]}]}
  std::string to_json() const;
};

SuiteReport run_equivalence_suite(const SuiteOptions& options);

}  // namespace drat::verify
