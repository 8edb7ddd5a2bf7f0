#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "avvp/tape.hpp"

namespace avvp {

// A differentiable scalar function of one tensor, built on a fresh tape.
using ScalarFn = std::function<Val(Tape&, Val)>;

// Max over coordinates of |analytic - central difference| / (|central| + 1e-8)
// at step h. Throws UsageError if f is not scalar-valued or h <= 0.
double grad_check(const ScalarFn& f, const Tensor& x, double h);

struct CheckResult {
  std::string name;
  double max_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Finite-difference suite over every tape primitive (randomized instances,
// fixed seed), both full pipelines end-to-end w.r.t. every parameter, and the
// closed-form sigmoid(z)-Y logit-gradient identity.
std::vector<CheckResult> run_gradcheck_suite(double tolerance = 1e-3, double h = 1e-4,
                                             double identity_tolerance = 1e-10,
                                             std::size_t instances_per_primitive = 100,
                                             std::uint64_t seed = 20240811);

// Prints one line per check; returns true iff all passed.
bool report_checks(const std::vector<CheckResult>& checks, std::ostream& os);

}  // namespace avvp
