#include "gcpmd/estimators.hpp"

#include "gcpmd/errors.hpp"

#include <algorithm>
#include <cmath>

namespace gcpmd {

namespace {

// Per-fiber pieces: d = f'(x, m) / I_n and h = H_n(row, :).
struct FiberTerms {
  Vector d;
  RowVector h;
  Vector x;
};

void compute_terms(const GradientRequest& request, std::size_t row, FiberTerms& terms) {
  const Matrix& a = request.model.factor(request.mode);
  khatri_rao_row(request.model, request.mode, row, terms.h);
  read_fiber(request.tensor, request.mode, row, terms.x);
  terms.d.noalias() = a * terms.h.transpose();
  const double scale = 1.0 / static_cast<double>(a.rows());
  const DerivativeFn deriv = request.derivative ? request.derivative : &loss_deriv;
  for (Eigen::Index i = 0; i < terms.d.size(); ++i) {
    terms.d[i] = deriv(request.loss, terms.x[i], terms.d[i]) * scale;
  }
}

FiberTerms make_terms(const GradientRequest& request) {
  const Matrix& a = request.model.factor(request.mode);
  return {Vector(a.rows()), RowVector(a.cols()), Vector(a.rows())};
}

void check_request(const GradientRequest& request) {
  if (!(request.model.shape() == shape_of(request.tensor))) throw ContractError("model and tensor shapes differ");
  if (request.mode >= request.model.order()) throw IndexError("gradient mode out of range");
}

// Sorted batch rows; rejects empty, foreign-mode, duplicate, or oversized batches.
std::vector<std::size_t> batch_rows(const GradientRequest& request) {
  if (request.fibers.empty()) throw ContractError("fiber batch is empty");
  const std::size_t count = request.model.shape().fiber_count(request.mode);
  std::vector<std::size_t> rows;
  rows.reserve(request.fibers.size());
  for (const FiberIndex& f : request.fibers) {
    if (f.mode != request.mode) throw ContractError("fiber mode does not match the gradient mode");
    if (f.row >= count) throw IndexError("fiber row out of range");
    rows.push_back(f.row);
  }
  std::sort(rows.begin(), rows.end());
  if (std::adjacent_find(rows.begin(), rows.end()) != rows.end()) throw ContractError("fiber batch has duplicates");
  return rows;
}

}  // namespace

std::string_view to_string(EstimatorKind kind) noexcept {
  switch (kind) {
    case EstimatorKind::full: return "full";
    case EstimatorKind::sgd: return "sgd";
    case EstimatorKind::saga: return "saga";
    case EstimatorKind::sarah: return "sarah";
  }
  return "unknown";
}

EstimatorKind parse_estimator_kind(std::string_view name) {
  for (EstimatorKind kind : {EstimatorKind::full, EstimatorKind::sgd, EstimatorKind::saga, EstimatorKind::sarah}) {
    if (name == to_string(kind)) return kind;
  }
  throw ConfigError("unknown estimator '" + std::string(name) + "' (expected full, sgd, saga, sarah)");
}

Matrix full_gradient(const GradientRequest& request) {
  check_request(request);
  const Matrix& a = request.model.factor(request.mode);
  const std::size_t count = request.model.shape().fiber_count(request.mode);
  Matrix grad = Matrix::Zero(a.rows(), a.cols());
  FiberTerms terms = make_terms(request);
  for (std::size_t j = 0; j < count; ++j) {
    compute_terms(request, j, terms);
    grad.noalias() += terms.d * terms.h;
  }
  return grad / static_cast<double>(count);
}

Matrix sgd_gradient(const GradientRequest& request) {
  check_request(request);
  const std::vector<std::size_t> rows = batch_rows(request);
  const Matrix& a = request.model.factor(request.mode);
  Matrix grad = Matrix::Zero(a.rows(), a.cols());
  FiberTerms terms = make_terms(request);
  for (std::size_t j : rows) {
    compute_terms(request, j, terms);
    grad.noalias() += terms.d * terms.h;
  }
  return grad / static_cast<double>(rows.size());
}

Matrix fiber_gradient(const GradientRequest& request, std::size_t row) {
  check_request(request);
  if (row >= request.model.shape().fiber_count(request.mode)) throw IndexError("fiber row out of range");
  FiberTerms terms = make_terms(request);
  compute_terms(request, row, terms);
  return terms.d * terms.h;
}

std::vector<FiberIndex> sample_fibers(const TensorShape& shape, std::size_t mode, std::size_t batch, Rng& rng) {
  const std::size_t count = shape.fiber_count(mode);
  if (batch == 0) throw ContractError("fiber batch size must be >= 1");
  if (batch > count) throw ContractError("fiber batch size exceeds the fiber count of mode " + std::to_string(mode));
  const auto rows = sample_without_replacement(rng, count, batch);
  std::vector<FiberIndex> fibers(rows.size());
  for (std::size_t b = 0; b < rows.size(); ++b) fibers[b] = {mode, static_cast<std::size_t>(rows[b])};
  return fibers;
}

// ---------------------------------------------------------------------------
// EstimatorState

EstimatorState::EstimatorState(EstimatorOptions options) : options_(options), rng_(mix_seed(options.seed, 0xE5)) {
  if (options_.sarah_p != 0.0 && !(options_.sarah_p >= 1.0)) throw ConfigError("SARAH p must be >= 1");
  if (options_.batch == 0) throw ConfigError("batch size must be >= 1");
}

void EstimatorState::ensure_modes(std::size_t order) {
  if (last_.size() == order) return;
  if (!last_.empty()) throw StateError("estimator state was built for a different tensor order");
  saga_.resize(order);
  sarah_.resize(order);
  last_.resize(order);
  restarted_.assign(order, false);
}

void EstimatorState::initialize(const ObservedTensor& tensor, const KruskalModel& model, const LossSpec& loss,
                                DerivativeFn derivative) {
  last_.clear();
  saga_.clear();
  sarah_.clear();
  ensure_modes(model.order());
  const TensorShape shape = model.shape();
  for (std::size_t n = 0; n < model.order(); ++n) {
    const GradientRequest request{tensor, model, n, {}, loss, derivative};
    if (options_.kind == EstimatorKind::saga) {
      check_request(request);
      const std::size_t count = shape.fiber_count(n);
      SagaTable& table = saga_[n];
      const Matrix& a = model.factor(n);
      table.d.resize(a.rows(), static_cast<Eigen::Index>(count));
      table.h.resize(a.cols(), static_cast<Eigen::Index>(count));
      FiberTerms terms = make_terms(request);
      for (std::size_t j = 0; j < count; ++j) {
        compute_terms(request, j, terms);
        table.d.col(static_cast<Eigen::Index>(j)) = terms.d;
        table.h.col(static_cast<Eigen::Index>(j)) = terms.h.transpose();
      }
      table.average = saga_table_mean(n);
      table.replaced_since_sync = 0;
    } else if (options_.kind == EstimatorKind::sarah) {
      sarah_[n].estimate = full_gradient(request);
      sarah_[n].snapshot = model;
    }
  }
  initialized_ = true;
}

double EstimatorState::sarah_p(const TensorShape& shape, std::size_t mode) const {
  if (options_.sarah_p != 0.0) return options_.sarah_p;
  const std::size_t count = shape.fiber_count(mode);
  return static_cast<double>((count + options_.batch - 1) / options_.batch);
}

const Matrix& EstimatorState::last_estimate(std::size_t mode) const {
  if (mode >= last_.size()) throw StateError("no estimate recorded for this mode");
  return last_[mode];
}

bool EstimatorState::last_restarted(std::size_t mode) const {
  if (mode >= restarted_.size()) throw StateError("no estimate recorded for this mode");
  return restarted_[mode];
}

const Matrix& EstimatorState::saga_average(std::size_t mode) const {
  if (mode >= saga_.size() || saga_[mode].d.size() == 0) throw StateError("SAGA table not initialized");
  return saga_[mode].average;
}

Matrix EstimatorState::saga_table_mean(std::size_t mode) const {
  if (mode >= saga_.size() || saga_[mode].d.size() == 0) throw StateError("SAGA table not initialized");
  const SagaTable& table = saga_[mode];
  return table.d * table.h.transpose() / static_cast<double>(table.d.cols());
}

Matrix EstimatorState::saga_stored(std::size_t mode, std::size_t row) const {
  if (mode >= saga_.size() || saga_[mode].d.size() == 0) throw StateError("SAGA table not initialized");
  const SagaTable& table = saga_[mode];
  if (row >= static_cast<std::size_t>(table.d.cols())) throw IndexError("SAGA table row out of range");
  const auto j = static_cast<Eigen::Index>(row);
  return table.d.col(j) * table.h.col(j).transpose();
}

Matrix EstimatorState::estimate(const GradientRequest& request) {
  ensure_modes(request.model.order());
  Matrix result;
  switch (options_.kind) {
    case EstimatorKind::full: result = full_gradient(request); break;
    case EstimatorKind::sgd: result = sgd_gradient(request); break;
    case EstimatorKind::saga: return saga_gradient(*this, request);
    case EstimatorKind::sarah: return sarah_gradient(*this, request);
  }
  last_[request.mode] = result;
  return result;
}

Matrix saga_gradient(EstimatorState& state, const GradientRequest& request) {
  check_request(request);
  state.ensure_modes(request.model.order());
  EstimatorState::SagaTable& table = state.saga_[request.mode];
  const Matrix& a = request.model.factor(request.mode);
  const std::size_t count = request.model.shape().fiber_count(request.mode);
  if (table.d.size() == 0) throw StateError("SAGA table not initialized");
  if (table.d.rows() != a.rows() || table.h.rows() != a.cols() || static_cast<std::size_t>(table.d.cols()) != count) {
    throw StateError("SAGA table shape does not match the model (rank or dimensions changed)");
  }
  const std::vector<std::size_t> rows = batch_rows(request);

  Matrix correction = Matrix::Zero(a.rows(), a.cols());
  FiberTerms terms = make_terms(request);
  for (std::size_t j : rows) {
    const auto col = static_cast<Eigen::Index>(j);
    compute_terms(request, j, terms);
    correction.noalias() += terms.d * terms.h;
    correction.noalias() -= table.d.col(col) * table.h.col(col).transpose();
    table.d.col(col) = terms.d;
    table.h.col(col) = terms.h.transpose();
  }
  Matrix result = correction / static_cast<double>(rows.size()) + table.average;

  table.average += correction / static_cast<double>(count);
  table.replaced_since_sync += rows.size();
  if (table.replaced_since_sync >= count) {
    table.average = state.saga_table_mean(request.mode);
    table.replaced_since_sync = 0;
  }
  state.last_[request.mode] = result;
  return result;
}

Matrix sarah_gradient(EstimatorState& state, const GradientRequest& request) {
  check_request(request);
  state.ensure_modes(request.model.order());
  EstimatorState::SarahMode& slot = state.sarah_[request.mode];
  const double p = state.sarah_p(request.model.shape(), request.mode);
  const bool restart = uniform01(state.rng_) < 1.0 / p;

  Matrix result;
  if (restart) {
    result = full_gradient(request);
  } else {
    if (!slot.snapshot || slot.estimate.size() == 0) {
      throw StateError("SARAH recursive step needs a previous snapshot; initialize the estimator first");
    }
    if (!(slot.snapshot->shape() == request.model.shape()) || slot.snapshot->rank() != request.model.rank()) {
      throw StateError("SARAH snapshot does not match the model");
    }
    const std::vector<std::size_t> rows = batch_rows(request);
    const GradientRequest previous{request.tensor, *slot.snapshot, request.mode, request.fibers, request.loss,
                                   request.derivative};
    Matrix diff = Matrix::Zero(slot.estimate.rows(), slot.estimate.cols());
    FiberTerms now = make_terms(request);
    FiberTerms before = make_terms(previous);
    for (std::size_t j : rows) {
      compute_terms(request, j, now);
      compute_terms(previous, j, before);
      diff.noalias() += now.d * now.h;
      diff.noalias() -= before.d * before.h;
    }
    result = diff / static_cast<double>(rows.size()) + slot.estimate;
  }
  slot.estimate = result;
  slot.snapshot = request.model;
  state.restarted_[request.mode] = restart;
  state.last_[request.mode] = result;
  return result;
}

VrDiagnostics vr_diagnostics(const EstimatorState& state, const GradientRequest& request, const Matrix& exact) {
  switch (state.kind()) {
    case EstimatorKind::full:
      return {0.0, 0.0};
    case EstimatorKind::sgd:
    case EstimatorKind::sarah: {
      const Matrix& last = state.last_estimate(request.mode);
      if (last.size() == 0) {
        if (state.kind() == EstimatorKind::sarah && state.sarah_[request.mode].estimate.size() != 0) {
          const double err = (state.sarah_[request.mode].estimate - exact).norm();
          return {err * err, err};
        }
        return {0.0, 0.0};
      }
      const double err = (last - exact).norm();
      return {err * err, err};
    }
    case EstimatorKind::saga: {
      check_request(request);
      const EstimatorState::SagaTable& table = state.saga_.at(request.mode);
      if (table.d.size() == 0) throw StateError("SAGA table not initialized");
      const std::size_t count = request.model.shape().fiber_count(request.mode);
      const double batch = static_cast<double>(std::max<std::size_t>(request.fibers.size(), 1));
      FiberTerms terms = make_terms(request);
      double sum_sq = 0.0;
      double sum = 0.0;
      for (std::size_t j = 0; j < count; ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        compute_terms(request, j, terms);
        const double sq = (terms.d * terms.h - table.d.col(col) * table.h.col(col).transpose()).squaredNorm();
        sum_sq += sq;
        sum += std::sqrt(sq);
      }
      const double scale = batch * static_cast<double>(count);
      return {sum_sq / scale, sum / std::sqrt(scale)};
    }
  }
  return {};
}

}  // namespace gcpmd
