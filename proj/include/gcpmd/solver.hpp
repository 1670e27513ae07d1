#pragma once

#include "gcpmd/bregman.hpp"
#include "gcpmd/errors.hpp"
#include "gcpmd/estimators.hpp"
#include "gcpmd/losses.hpp"
#include "gcpmd/metrics.hpp"
#include "gcpmd/random.hpp"
#include "gcpmd/tensor.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gcpmd {

enum class StepsizeRule { constant, adaptive };
enum class ExtrapolationCheck { off, backtrack };
enum class BlockSampling { uniform, cyclic };
/// smartcpd forces alpha_k = beta_k = 0.
enum class Algorithm { itablesmd, smartcpd };

struct SolverConfig {
  Algorithm algorithm = Algorithm::itablesmd;
  std::size_t rank = 3;
  LossSpec loss;
  GeneratorSpec generator;
  /// One per mode, or a single entry shared by all modes. Empty selects the
  /// nonnegative indicator for nonnegative losses and zero otherwise.
  std::vector<RegularizerSpec> regularizers;
  EstimatorKind estimator = EstimatorKind::saga;
  std::size_t batch = 0;  // 0 selects 2R
  double sarah_p = 0.0;   // 0 selects ceil(J_n / B)

  double eta = 0.1;
  StepsizeRule stepsize = StepsizeRule::constant;
  // User estimates for the adaptive rule and the Lyapunov diagnostic.
  double l_bar = 0.0;
  double m2 = 1.0;
  double gamma_bar = 0.0;
  double weak_convexity = 0.0;

  double c1 = 0.6;
  double c2 = 0.8;
  ExtrapolationCheck extrapolation = ExtrapolationCheck::off;
  double delta = 0.5;
  double epsilon = 0.25;
  /// Stand-in for the unknown lower curvature constant in the guard.
  double lower_curvature = 0.0;

  std::size_t max_iters = 5000;
  double tol = 1e-10;
  std::size_t eval_every = 0;  // 0 selects ceil(max_n J_n / B)
  BlockSampling blocks = BlockSampling::uniform;
  double init_max = 0.5;
  std::uint64_t seed = 0;

  /// Measure Gamma_k (one exact block gradient per step).
  bool record_gamma = false;
  /// Record Psi_k; implies record_gamma for stochastic estimators.
  bool lyapunov = false;
  double lyapunov_tau = 1.0;
  std::optional<double> lyapunov_v0;

  /// false writes zero seconds so traces replay byte-identically.
  bool timing = true;
  double divergence_factor = 1e6;
  std::size_t objective_samples = std::size_t{1} << 16;
  std::size_t max_exact_elements = std::size_t{1} << 26;

  std::size_t resolved_batch() const noexcept { return batch == 0 ? 2 * rank : batch; }
  std::size_t resolved_eval_every(const TensorShape& shape) const;
  RegularizerSpec regularizer(std::size_t mode) const;
  /// Schedules alpha_k, beta_k for the 1-based step index k.
  double alpha(std::size_t k) const noexcept;
  double beta(std::size_t k) const noexcept;
  /// Throws ConfigError on invalid or incompatible settings.
  void validate(const TensorShape& shape) const;
};

std::string_view to_string(StepsizeRule v) noexcept;
std::string_view to_string(ExtrapolationCheck v) noexcept;
std::string_view to_string(BlockSampling v) noexcept;
std::string_view to_string(Algorithm v) noexcept;

/// Every field as (key, text); doubles in shortest round-trip form.
std::vector<std::pair<std::string, std::string>> config_entries(const SolverConfig& config);
/// Applies one key=value pair; unknown keys and bad values throw ConfigError.
void apply_config_entry(SolverConfig& config, const std::string& key, const std::string& value);
/// FNV-1a over config_entries.
std::string config_hash(const SolverConfig& config);

struct SolverRunState {
  KruskalModel current;
  KruskalModel previous;
  KruskalModel before_previous;
  EstimatorState estimator;
  std::size_t iteration = 0;  // completed steps
  Rng rng;
  double eta = 0.0;           // stepsize of the latest step (eta_{k-1} for the next)
  double best_objective;

  // Latest step.
  std::size_t last_mode = 0;
  double last_alpha = 0.0;
  double last_beta = 0.0;
  double forward_div = 0.0;   // D(A^{k-1}, A^k) over all blocks
  double backward_div = 0.0;  // D(A^{k-2}, A^{k-1})
  std::vector<std::optional<double>> gamma;  // latest Gamma per mode
};

/// Uniform (0, init_max] factors unless `init` is given; sets A^{-1} = A^0 and
/// initializes the estimator.
SolverRunState initialize_state(const SolverConfig& config, const ObservedTensor& tensor,
                                const KruskalModel* init = nullptr, DerivativeFn derivative = &loss_deriv);

KruskalModel random_model(const TensorShape& shape, std::size_t rank, double max_entry, Rng& rng);

/// Halves beta until D(A_n^k, A_n^k + beta (A_n^k - A_n^{k-1})) <=
/// (delta - epsilon) / (1 + lower_curvature eta_{k-1}) D(A_n^{k-1}, A_n^k),
/// at most 30 times, then 0. Off mode returns beta unchanged.
double extrapolation_guard(const SolverRunState& state, const SolverConfig& config, std::size_t mode, double beta);

/// Stepsize eta_k for the rule schedule (constant schedule returns config.eta).
double next_stepsize(const SolverConfig& config, double previous_eta, double alpha, double beta);

/// One block update of the inertial method.
void itablesmd_step(SolverRunState& state, const SolverConfig& config, const ObservedTensor& tensor,
                    DerivativeFn derivative = &loss_deriv);
/// Same step with alpha_k = beta_k = 0.
void smartcpd_step(SolverRunState& state, const SolverConfig& config, const ObservedTensor& tensor,
                   DerivativeFn derivative = &loss_deriv);

struct IterationRecord {
  std::size_t iteration = 0;
  double seconds = 0.0;
  double nre = 0.0;
  bool nre_exact = true;
  double eta = 0.0;
  std::optional<double> mse_mean;
  std::vector<double> mse_modes;
  std::optional<double> mse_shared;
  std::optional<double> lyapunov;
  std::optional<LyapunovRecord> lyapunov_parts;
  std::optional<double> gamma_k;                 // Gamma of the latest step's mode
  std::vector<std::optional<double>> gamma_modes;
};

struct IterationTrace {
  std::size_t order = 0;
  std::vector<IterationRecord> records;
  std::map<std::string, std::string> metadata;
};

enum class StopReason { max_iterations, converged };

/// DivergenceError raised by run(); carries the trace recorded up to the
/// failure (metadata stop_reason = "diverged").
class RunDiverged : public DivergenceError {
 public:
  RunDiverged(const std::string& what, IterationTrace partial)
      : DivergenceError(what), trace_(std::move(partial)) {}
  const IterationTrace& trace() const noexcept { return trace_; }

 private:
  IterationTrace trace_;
};

struct RunResult {
  IterationTrace trace;
  KruskalModel model;
  StopReason reason = StopReason::max_iterations;
  std::size_t iterations = 0;
};

/// Runs to max_iters or until the relative NRE change is below tol at two
/// consecutive evaluations. Throws DivergenceError when the objective exceeds
/// divergence_factor times its initial magnitude or stops being finite, and
/// when a step produces non-finite factors; the thrown RunDiverged holds the
/// partial trace.
RunResult run(const SolverConfig& config, const ObservedTensor& tensor, const KruskalModel* truth = nullptr,
              const KruskalModel* init = nullptr, DerivativeFn derivative = &loss_deriv);

/// Largest eigenvalue of the gaussian-loss block Hessian for `mode`:
/// lambda_max(H_n^T H_n) / prod I.
double gaussian_block_curvature(const KruskalModel& model, std::size_t mode);

}  // namespace gcpmd
