#include "gcpmd/losses.hpp"

#include "gcpmd/errors.hpp"
#include "gcpmd/random.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace gcpmd {

namespace {

// log(1 + e^m) without overflow.
double softplus(double m) { return std::max(m, 0.0) + std::log1p(std::exp(-std::abs(m))); }

double sigmoid(double m) {
  if (m >= 0.0) return 1.0 / (1.0 + std::exp(-m));
  const double e = std::exp(m);
  return e / (1.0 + e);
}

[[noreturn]] void domain_fail(const LossSpec& spec, std::string_view what, double value) {
  std::ostringstream os;
  os.precision(17);
  os << to_string(spec.kind) << ": " << what << " (got " << value << ")";
  throw DomainError(os.str());
}

}  // namespace

ConstraintRegime LossSpec::constraint() const noexcept {
  switch (kind) {
    case LossKind::gaussian:
    case LossKind::poisson_log:
    case LossKind::bernoulli_logit:
      return ConstraintRegime::unconstrained;
    case LossKind::gamma:
    case LossKind::poisson_identity:
    case LossKind::bernoulli_odds:
      return ConstraintRegime::nonnegative;
  }
  return ConstraintRegime::unconstrained;
}

bool LossSpec::guarded() const noexcept {
  return kind == LossKind::gamma || kind == LossKind::poisson_identity || kind == LossKind::bernoulli_odds;
}

std::string_view to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::gaussian: return "gaussian";
    case LossKind::gamma: return "gamma";
    case LossKind::poisson_identity: return "poisson-identity";
    case LossKind::poisson_log: return "poisson-log";
    case LossKind::bernoulli_odds: return "bernoulli-odds";
    case LossKind::bernoulli_logit: return "bernoulli-logit";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  for (LossKind kind : {LossKind::gaussian, LossKind::gamma, LossKind::poisson_identity, LossKind::poisson_log,
                        LossKind::bernoulli_odds, LossKind::bernoulli_logit}) {
    if (name == to_string(kind)) return kind;
  }
  throw ConfigError("unknown loss '" + std::string(name) +
                    "' (expected gaussian, gamma, poisson-identity, poisson-log, bernoulli-odds, bernoulli-logit)");
}

void check_datum(const LossSpec& spec, double x) {
  if (!std::isfinite(x)) domain_fail(spec, "datum must be finite", x);
  switch (spec.kind) {
    case LossKind::gaussian:
      return;
    case LossKind::gamma:
      if (x < 0.0) domain_fail(spec, "datum must be >= 0", x);
      return;
    case LossKind::poisson_identity:
    case LossKind::poisson_log:
      if (x < 0.0 || std::floor(x) != x) domain_fail(spec, "datum must be a nonnegative integer", x);
      return;
    case LossKind::bernoulli_odds:
    case LossKind::bernoulli_logit:
      if (x != 0.0 && x != 1.0) domain_fail(spec, "datum must be 0 or 1", x);
      return;
  }
}

void check_domain(const LossSpec& spec, double x, double m) {
  check_datum(spec, x);
  if (!std::isfinite(m)) domain_fail(spec, "model parameter must be finite", m);
  if (spec.constraint() == ConstraintRegime::nonnegative && m < 0.0) {
    domain_fail(spec, "model parameter must be >= 0", m);
  }
  if (spec.guarded() && !(spec.epsilon > 0.0)) domain_fail(spec, "epsilon must be > 0", spec.epsilon);
}

void check_data(const LossSpec& spec, const ObservedTensor& tensor) {
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, DenseTensor>) {
          for (double x : t.values()) check_datum(spec, x);
        } else {
          for (std::size_t k = 0; k < t.nnz(); ++k) check_datum(spec, t.value_of(k));
        }
      },
      tensor);
}

void check_feasible(const LossSpec& spec, const KruskalModel& model) {
  if (spec.constraint() == ConstraintRegime::nonnegative && model.min_entry() < 0.0) {
    domain_fail(spec, "model factors must be nonnegative", model.min_entry());
  }
}

double loss_value(const LossSpec& spec, double x, double m) {
  check_domain(spec, x, m);
  const double eps = spec.epsilon;
  switch (spec.kind) {
    case LossKind::gaussian: return 0.5 * (x - m) * (x - m);
    case LossKind::gamma: return x / (m + eps) + std::log(m + eps);
    case LossKind::poisson_identity: return m - x * std::log(m + eps);
    case LossKind::poisson_log: return std::exp(m) - x * m;
    case LossKind::bernoulli_odds: return std::log1p(m) - x * std::log(m + eps);
    case LossKind::bernoulli_logit: return softplus(m) - x * m;
  }
  return 0.0;
}

double loss_deriv(const LossSpec& spec, double x, double m) {
  check_domain(spec, x, m);
  const double eps = spec.epsilon;
  switch (spec.kind) {
    case LossKind::gaussian: return m - x;
    case LossKind::gamma: {
      const double s = m + eps;
      return 1.0 / s - x / (s * s);
    }
    case LossKind::poisson_identity: return 1.0 - x / (m + eps);
    case LossKind::poisson_log: return std::exp(m) - x;
    case LossKind::bernoulli_odds: return 1.0 / (1.0 + m) - x / (m + eps);
    case LossKind::bernoulli_logit: return sigmoid(m) - x;
  }
  return 0.0;
}

double link_inverse(const LossSpec& spec, double m) {
  switch (spec.kind) {
    case LossKind::gaussian:
    case LossKind::gamma:
    case LossKind::poisson_identity:
      return m;
    case LossKind::poisson_log: return std::exp(m);
    case LossKind::bernoulli_odds: return m / (1.0 + m);
    case LossKind::bernoulli_logit: return sigmoid(m);
  }
  return m;
}

ObjectiveValue objective(const LossSpec& spec, const ObservedTensor& tensor, const KruskalModel& model,
                         const ObjectiveOptions& options) {
  const TensorShape& shape = shape_of(tensor);
  if (!(model.shape() == shape)) throw ContractError("model and tensor shapes differ");
  check_feasible(spec, model);

  const std::size_t total = shape.total();
  if (!options.force_sampled && total <= options.max_exact_elements) {
    // Mode-0 fibers cover every element once; summation order is fixed.
    const auto length = static_cast<Eigen::Index>(shape.dim(0));
    Vector x(length);
    RowVector h(static_cast<Eigen::Index>(model.rank()));
    double sum = 0.0;
    for (std::size_t j = 0; j < shape.fiber_count(0); ++j) {
      read_fiber(tensor, 0, j, x);
      khatri_rao_row(model, 0, j, h);
      const Vector m = model.factor(0) * h.transpose();
      for (Eigen::Index i = 0; i < length; ++i) sum += loss_value(spec, x[i], m[i]);
    }
    return {sum / static_cast<double>(total), true, total, 0.0};
  }

  if (options.samples == 0) throw ConfigError("sampled objective needs at least one sample");
  std::vector<std::size_t> picks;
  if (options.samples >= total) {
    picks.resize(total);
    for (std::size_t k = 0; k < total; ++k) picks[k] = k;
  } else {
    Rng rng(options.seed);
    picks.resize(options.samples);
    for (auto& p : picks) p = static_cast<std::size_t>(uniform_below(rng, total));
  }
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t linear : picks) {
    const MultiIndex index = shape.multi_index(linear);
    const double f = loss_value(spec, value_at(tensor, index), model_entry(model, index));
    sum += f;
    sum_sq += f * f;
  }
  const auto count = static_cast<double>(picks.size());
  const double mean = sum / count;
  const bool full_cover = picks.size() == total;
  double std_error = 0.0;
  if (!full_cover && picks.size() > 1) {
    const double var = std::max(0.0, (sum_sq - count * mean * mean) / (count - 1.0));
    std_error = std::sqrt(var / count);
  }
  return {mean, full_cover, picks.size(), std_error};
}

}  // namespace gcpmd
