#pragma once

#include "gcpmd/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace gcpmd {

enum class LossKind {
  gaussian,
  gamma,
  poisson_identity,
  poisson_log,
  bernoulli_odds,
  bernoulli_logit,
};

enum class ConstraintRegime { unconstrained, nonnegative };

/// An element-wise loss f(x, m) with its link and guard.
///
/// The four kinds with log(m) or 1/m terms (gamma, poisson-identity,
/// bernoulli-odds) evaluate them at m + epsilon. bernoulli-logit uses the
/// overflow-safe form of log(1 + e^m).
struct LossSpec {
  LossKind kind = LossKind::gaussian;
  double epsilon = 1e-9;

  ConstraintRegime constraint() const noexcept;
  bool guarded() const noexcept;
};

std::string_view to_string(LossKind kind) noexcept;
/// Accepts the exact names "gaussian", "gamma", "poisson-identity",
/// "poisson-log", "bernoulli-odds", "bernoulli-logit".
LossKind parse_loss_kind(std::string_view name);

/// Throws DomainError naming the kind and value when (x, m) is outside the domain.
void check_domain(const LossSpec& spec, double x, double m);
/// Datum-only check, used when validating observed tensors.
void check_datum(const LossSpec& spec, double x);
void check_data(const LossSpec& spec, const ObservedTensor& tensor);
/// Throws DomainError if the model violates the kind's constraint regime.
void check_feasible(const LossSpec& spec, const KruskalModel& model);

double loss_value(const LossSpec& spec, double x, double m);
/// d f / d m.
double loss_deriv(const LossSpec& spec, double x, double m);
/// Mean parameter of the distribution paired with the loss.
double link_inverse(const LossSpec& spec, double m);

/// Signature shared by loss_deriv and test doubles that replace it.
using DerivativeFn = double (*)(const LossSpec&, double, double);

struct ObjectiveOptions {
  /// Above this many elements the objective is estimated from samples.
  std::size_t max_exact_elements = std::size_t{1} << 26;
  std::size_t samples = 1 << 16;
  std::uint64_t seed = 0;
  /// Forces the sampled path, sampling every element exactly once when
  /// samples >= total (used to check the sampler against the exact path).
  bool force_sampled = false;
};

struct ObjectiveValue {
  double value = 0.0;
  bool exact = true;
  std::size_t samples = 0;
  /// Standard error of the estimate; 0 when exact.
  double std_error = 0.0;
};

/// Mean element-wise loss (1/prod I_n) sum_i f(X_i, M_i).
ObjectiveValue objective(const LossSpec& spec, const ObservedTensor& tensor, const KruskalModel& model,
                         const ObjectiveOptions& options = {});

}  // namespace gcpmd
