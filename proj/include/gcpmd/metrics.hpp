#pragma once

#include "gcpmd/bregman.hpp"
#include "gcpmd/losses.hpp"
#include "gcpmd/tensor.hpp"

#include <vector>

namespace gcpmd {

struct MseReport {
  double mse = 0.0;
  /// permutation[r] is the estimate column matched to truth column r.
  std::vector<std::size_t> permutation;
  /// Squared normalized residual of each truth column against its match.
  std::vector<double> column_residuals;
};

/// Optimal assignment for a square cost matrix by exhaustive search (R <= 10).
std::vector<std::size_t> match_exhaustive(const Matrix& cost);
/// Optimal assignment by the Hungarian algorithm, O(R^3).
std::vector<std::size_t> match_hungarian(const Matrix& cost);

/// Squared distances between unit-normalized columns: cost(r, s) = ||t_r - e_s||^2
/// with t = truth, e = estimate. Zero columns throw DomainError.
Matrix normalized_column_cost(const Matrix& estimate, const Matrix& truth);

/// Permutation-matched mean squared error between unit-normalized columns.
/// Exhaustive matching for R <= 8, Hungarian above.
MseReport mse(const Matrix& estimate, const Matrix& truth);

struct ModelMse {
  std::vector<MseReport> per_mode;
  double mean = 0.0;
  /// Variant with one permutation shared by every mode.
  double shared_permutation = 0.0;
};

ModelMse model_mse(const KruskalModel& estimate, const KruskalModel& truth);

/// Recorded cost value; same as the exact (or sampled) objective.
ObjectiveValue nre(const LossSpec& spec, const ObservedTensor& tensor, const KruskalModel& model,
                   const ObjectiveOptions& options = {});

/// Surrogate constants standing in for the unknown analysis constants.
struct LyapunovConstants {
  double eta = 0.1;             // constant stepsize
  double weak_convexity = 0.0;  // alpha of the regularizer
  double gamma_bar = 0.0;
  double tau = 1.0;
  double epsilon = 0.0;
  double m2 = 1.0;              // Lipschitz modulus of grad psi on the iterate box
  double v0 = 0.0;              // lower bound standing in for inf Phi
};

struct LyapunovRecord {
  double value = 0.0;
  double objective_term = 0.0;
  double forward_term = 0.0;   // weighted D(A^k, A^{k+1})
  double backward_term = 0.0;  // weighted D(A^{k-1}, A^k)
  double gamma_term = 0.0;
};

/// Three consecutive iterates, newest first. Missing entries raise StateError.
struct IterateHistory {
  const KruskalModel* next = nullptr;      // A^{k+1}
  const KruskalModel* current = nullptr;   // A^k
  const KruskalModel* previous = nullptr;  // A^{k-1}
};

/// Sum over blocks of D_psi(x_n, y_n).
double bregman_div_blocks(const GeneratorSpec& gen, const KruskalModel& x, const KruskalModel& y);

/// Coefficient 1 - eta*alpha - eta*gamma_bar - gamma_k - epsilon/3 of the forward term.
double lyapunov_forward_weight(const LyapunovConstants& c, double gamma_k);

/// Psi_{k+1} with gamma_k = |alpha_k - beta_k| * M2. `objective` is Phi^{k+1}.
LyapunovRecord lyapunov(const GeneratorSpec& gen, const IterateHistory& history, double objective,
                        double gamma_next, double alpha_k, double beta_k, const LyapunovConstants& constants);

/// Same, from precomputed Bregman movements.
LyapunovRecord lyapunov_from_movement(double forward_div, double backward_div, double objective, double gamma_next,
                                      double alpha_k, double beta_k, const LyapunovConstants& constants);

}  // namespace gcpmd
