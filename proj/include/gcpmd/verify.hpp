#pragma once

// Self-check suites run by `gcpmd verify`.

#include "gcpmd/losses.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gcpmd {

struct CheckResult {
  std::string suite;
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct VerifyOptions {
  /// Derivative under test; tests swap in a broken one to see the gradient suite fail.
  DerivativeFn derivative = &loss_deriv;
  std::uint64_t seed = 1;
  std::size_t prox_trials = 200;
  std::size_t mse_trials = 50;
};

/// Suites: gradient (central differences, every loss kind), prox (closed form
/// against a bisection on the subproblem's first-order condition), estimator
/// (fiber mean, SGD and SAGA with every fiber against the full gradient),
/// khatri-rao (sampled rows against the materialized product), mse
/// (exhaustive against Hungarian matching).
std::vector<CheckResult> run_verification(const VerifyOptions& options = {});

/// Same as one of the suites above, by name.
std::vector<CheckResult> run_suite(const std::string& suite, const VerifyOptions& options = {});

std::vector<std::string> verification_suites();

/// Largest per-entry relative error between full_gradient and central
/// differences of the objective, over every mode.
double gradient_check(const LossSpec& loss, const ObservedTensor& tensor, const KruskalModel& model,
                      DerivativeFn derivative = &loss_deriv);

}  // namespace gcpmd
