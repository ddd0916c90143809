#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lf/optimizer.hpp"

namespace lf {

struct CheckResult {
  std::string name;
  bool pass = false;
  double metric = 0.0;  // suite-specific worst-case figure
  std::string detail;
};

// Worst relative deviation between analytic Jacobians and central finite
// differences (step 1e-6 on the tangent space) over random configurations.
double jacobian_max_rel_error(ResidualKind kind, int trials, uint64_t seed);

// Worst direction/moment angle error and scale-ratio error over random
// Plucker -> orthonormal -> Plucker round trips.
double orthonormal_roundtrip_max_error(int trials, uint64_t seed);

CheckResult check_jacobians(int trials_per_kind = 100, uint64_t seed = 7);
CheckResult check_orthonormal_roundtrip(int trials = 1000, uint64_t seed = 7);
CheckResult check_se3_roundtrip(int trials = 1000, uint64_t seed = 7);
CheckResult check_lm_convergence(uint64_t seed = 7);

// The `check` CLI subcommand suite.
std::vector<CheckResult> run_self_checks(uint64_t seed = 7);

}  // namespace lf
