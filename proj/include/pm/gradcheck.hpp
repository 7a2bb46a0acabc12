#pragma once

#include <string>
#include <vector>

namespace pm {

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0;
  double tolerance = 0;
  double seconds = 0;
  bool passed = false;
};

// Analytic gradients of every differentiable building block against a
// fourth-order central finite difference at double precision, on small
// random instances. Covers sampling, view synthesis, each loss, each
// attention sub-block, and a full decoder pass.
std::vector<GradCheckResult> run_gradient_suite(uint64_t seed, double tolerance = 1e-4);

std::string gradient_suite_table(const std::vector<GradCheckResult>& results);

}  // namespace pm
