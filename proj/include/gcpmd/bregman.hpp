#pragma once

#include "gcpmd/tensor.hpp"

#include <string>
#include <string_view>

namespace gcpmd {

enum class GeneratorKind { squared_euclidean, negative_entropy };

/// Coordinate-wise Bregman generator: 1/2 a^2 or a log a.
struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::squared_euclidean;
  /// Lower bound applied to entropy iterates after every prox step.
  double entropy_floor = 1e-12;
};

enum class RegularizerKind { zero, nonnegative_indicator, squared_l2, l1 };

/// Block regularizer h_n. `nonnegative` adds the indicator of A >= 0 to the
/// weighted kinds; nonnegative_indicator always implies it.
struct RegularizerSpec {
  RegularizerKind kind = RegularizerKind::zero;
  double weight = 0.0;
  bool nonnegative = false;

  bool is_nonnegative() const noexcept { return nonnegative || kind == RegularizerKind::nonnegative_indicator; }
  void validate() const;
};

std::string_view to_string(GeneratorKind kind) noexcept;
std::string_view to_string(RegularizerKind kind) noexcept;
/// "squared-euclidean" | "negative-entropy"
GeneratorKind parse_generator_kind(std::string_view name);
/// "zero" | "nonnegative-indicator" | "squared-l2" | "l1"
RegularizerKind parse_regularizer_kind(std::string_view name);

double generator_value(const GeneratorSpec& spec, const Matrix& a);
Matrix generator_grad(const GeneratorSpec& spec, const Matrix& a);

/// sum over coordinates of psi(x) - psi(y) - psi'(y) (x - y).
double bregman_div(const GeneratorSpec& spec, const Matrix& x, const Matrix& y);

/// D(x,z) - D(x,y) - D(y,z) - <grad psi(y) - grad psi(z), x - y>; zero up to rounding.
double three_point_check(const GeneratorSpec& spec, const Matrix& x, const Matrix& y, const Matrix& z);

/// h(A); +inf when A violates a nonnegativity requirement.
double regularizer_value(const RegularizerSpec& reg, const Matrix& a);

/// Throws ConfigError unless (gen, reg) has a closed-form prox.
void check_prox_pair(const GeneratorSpec& gen, const RegularizerSpec& reg);

/// argmin_A h(A) + <g, A - anchor> + (1/eta) D_psi(A, anchor), in closed form.
Matrix mirror_prox_step(const GeneratorSpec& gen, const RegularizerSpec& reg, const Matrix& anchor,
                        const Matrix& grad, double eta);

/// Value of the prox subproblem at `a` (the quantity mirror_prox_step minimizes).
double prox_objective(const GeneratorSpec& gen, const RegularizerSpec& reg, const Matrix& anchor,
                      const Matrix& grad, double eta, const Matrix& a);

/// Largest first-order optimality violation of `a` for the prox subproblem,
/// measured coordinate-wise on the subdifferential (coordinates pinned at a
/// bound only need the one-sided condition).
double prox_optimality_residual(const GeneratorSpec& gen, const RegularizerSpec& reg, const Matrix& anchor,
                                const Matrix& grad, double eta, const Matrix& a);

}  // namespace gcpmd
