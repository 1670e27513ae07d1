#pragma once

// Stochastic estimators of the block partial gradient grad_{A_n} f.
//
// Every estimator shares one scaling: the per-fiber gradient is
//   g_j = (1 / I_n) d_j h_j^T,
// where h_j = H_n(j, :) and d_j(i) = f'(X_(n)(j, i), M_(n)(j, i)). The exact
// block gradient is the mean of g_j over all J_n fibers and a fiber-sampled
// estimate is the mean over the batch, so full, SGD(B = J_n) and
// SAGA(B = J_n) coincide.

#include "gcpmd/losses.hpp"
#include "gcpmd/random.hpp"
#include "gcpmd/tensor.hpp"

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace gcpmd {

enum class EstimatorKind { full, sgd, saga, sarah };

std::string_view to_string(EstimatorKind kind) noexcept;
/// "full" | "sgd" | "saga" | "sarah"
EstimatorKind parse_estimator_kind(std::string_view name);

/// One gradient query: the model (active block already at the extrapolated
/// point), the active mode, and the sampled fibers.
struct GradientRequest {
  const ObservedTensor& tensor;
  const KruskalModel& model;
  std::size_t mode;
  std::span<const FiberIndex> fibers;
  const LossSpec& loss;
  DerivativeFn derivative = &loss_deriv;  // null falls back to loss_deriv
};

/// Exact block gradient (ignores the request's fibers).
Matrix full_gradient(const GradientRequest& request);

/// Mean of g_j over the batch. Fibers must be distinct, of the request's mode,
/// and non-empty; the sum runs in ascending fiber order.
Matrix sgd_gradient(const GradientRequest& request);

/// Per-fiber gradient g_j (I_n x R).
Matrix fiber_gradient(const GradientRequest& request, std::size_t row);

/// Draws B distinct fibers of `mode` uniformly, sorted by row.
std::vector<FiberIndex> sample_fibers(const TensorShape& shape, std::size_t mode, std::size_t batch, Rng& rng);

struct EstimatorOptions {
  EstimatorKind kind = EstimatorKind::saga;
  /// SARAH restart parameter p (restart w.p. 1/p). 0 selects ceil(J_n / B).
  double sarah_p = 0.0;
  /// Batch size used for the SARAH default p.
  std::size_t batch = 1;
  std::uint64_t seed = 0;
};

struct VrDiagnostics {
  double gamma = 0.0;    // mean-squared-error bound sequence
  double upsilon = 0.0;  // mean-error bound sequence
};

/// Persistent estimator state for one solver run.
class EstimatorState {
 public:
  explicit EstimatorState(EstimatorOptions options);

  /// SAGA: fills every table with the exact per-fiber gradients at `model`.
  /// SARAH: sets the running estimate to the exact gradient at `model`.
  void initialize(const ObservedTensor& tensor, const KruskalModel& model, const LossSpec& loss,
                  DerivativeFn derivative = &loss_deriv);

  EstimatorKind kind() const noexcept { return options_.kind; }
  const EstimatorOptions& options() const noexcept { return options_; }
  bool initialized() const noexcept { return initialized_; }

  /// Dispatches to the estimator selected by kind().
  Matrix estimate(const GradientRequest& request);

  /// SARAH restart parameter for a mode.
  double sarah_p(const TensorShape& shape, std::size_t mode) const;

  /// Most recent estimate for a mode (empty before the first call).
  const Matrix& last_estimate(std::size_t mode) const;
  /// Whether the most recent SARAH call for the mode restarted.
  bool last_restarted(std::size_t mode) const;

  /// SAGA running average for a mode, and the same average recomputed from the table.
  const Matrix& saga_average(std::size_t mode) const;
  Matrix saga_table_mean(std::size_t mode) const;
  /// Stored per-fiber gradient of a SAGA table entry.
  Matrix saga_stored(std::size_t mode, std::size_t row) const;

 private:
  struct SagaTable {
    Matrix d;        // I_n x J_n, column j = d_j / I_n
    Matrix h;        // R x J_n, column j = h_j
    Matrix average;  // I_n x R
    std::size_t replaced_since_sync = 0;
  };
  struct SarahMode {
    std::optional<KruskalModel> snapshot;
    Matrix estimate;
  };

  friend Matrix saga_gradient(EstimatorState&, const GradientRequest&);
  friend Matrix sarah_gradient(EstimatorState&, const GradientRequest&);
  friend VrDiagnostics vr_diagnostics(const EstimatorState&, const GradientRequest&, const Matrix&);

  void ensure_modes(std::size_t order);

  EstimatorOptions options_;
  Rng rng_;
  bool initialized_ = false;
  std::vector<SagaTable> saga_;
  std::vector<SarahMode> sarah_;
  std::vector<Matrix> last_;
  std::vector<bool> restarted_;
};

/// SAGA: mean_F(g_j(current) - g_j(stored)) + table average; replaces the
/// sampled table entries. Requires an initialized table of matching shape.
Matrix saga_gradient(EstimatorState& state, const GradientRequest& request);

/// SARAH: exact gradient w.p. 1/p (and restart), otherwise
/// mean_F(g_j(current) - g_j(previous)) + previous estimate.
Matrix sarah_gradient(EstimatorState& state, const GradientRequest& request);

/// Realized Gamma/Upsilon at the request point.
///   full:  (0, 0)
///   sgd, sarah: squared error and error norm of the last estimate
///   saga:  (1/(B J_n)) sum_i ||g_i(current) - g_i(stored)||^2 and
///          (1/sqrt(B J_n)) sum_i ||g_i(current) - g_i(stored)||, against the
///          table as it stands.
/// Norms are Frobenius. `exact` is the exact block gradient at the request point.
VrDiagnostics vr_diagnostics(const EstimatorState& state, const GradientRequest& request, const Matrix& exact);

}  // namespace gcpmd
