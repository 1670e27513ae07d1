#include "gcpmd/bregman.hpp"

#include "gcpmd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gcpmd {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ContractError("matrix shapes differ");
}

void require_positive(const Matrix& a, std::string_view what) {
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    if (!(a.data()[k] > 0.0)) {
      throw DomainError("negative-entropy: " + std::string(what) + " must be strictly positive (got " +
                        std::to_string(a.data()[k]) + ")");
    }
  }
}

void require_nonnegative(const Matrix& a, std::string_view what) {
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    if (!(a.data()[k] >= 0.0)) {
      throw DomainError("negative-entropy: " + std::string(what) + " must be nonnegative (got " +
                        std::to_string(a.data()[k]) + ")");
    }
  }
}

double xlogx(double x) { return x == 0.0 ? 0.0 : x * std::log(x); }

double entropy_div(double x, double y) { return (x == 0.0 ? 0.0 : x * std::log(x / y)) - x + y; }

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

}  // namespace

void RegularizerSpec::validate() const {
  if (!(weight >= 0.0) || !std::isfinite(weight)) throw ConfigError("regularizer weight must be finite and >= 0");
  if ((kind == RegularizerKind::zero || kind == RegularizerKind::nonnegative_indicator) && weight != 0.0) {
    throw ConfigError("regularizer '" + std::string(to_string(kind)) + "' takes no weight");
  }
}

std::string_view to_string(GeneratorKind kind) noexcept {
  return kind == GeneratorKind::squared_euclidean ? "squared-euclidean" : "negative-entropy";
}

std::string_view to_string(RegularizerKind kind) noexcept {
  switch (kind) {
    case RegularizerKind::zero: return "zero";
    case RegularizerKind::nonnegative_indicator: return "nonnegative-indicator";
    case RegularizerKind::squared_l2: return "squared-l2";
    case RegularizerKind::l1: return "l1";
  }
  return "unknown";
}

GeneratorKind parse_generator_kind(std::string_view name) {
  if (name == "squared-euclidean") return GeneratorKind::squared_euclidean;
  if (name == "negative-entropy") return GeneratorKind::negative_entropy;
  throw ConfigError("unknown generator '" + std::string(name) + "' (expected squared-euclidean, negative-entropy)");
}

RegularizerKind parse_regularizer_kind(std::string_view name) {
  for (RegularizerKind kind : {RegularizerKind::zero, RegularizerKind::nonnegative_indicator,
                               RegularizerKind::squared_l2, RegularizerKind::l1}) {
    if (name == to_string(kind)) return kind;
  }
  throw ConfigError("unknown regularizer '" + std::string(name) +
                    "' (expected zero, nonnegative-indicator, squared-l2, l1)");
}

double generator_value(const GeneratorSpec& spec, const Matrix& a) {
  if (spec.kind == GeneratorKind::squared_euclidean) return 0.5 * a.squaredNorm();
  require_nonnegative(a, "argument");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) sum += xlogx(a.data()[k]);
  return sum;
}

Matrix generator_grad(const GeneratorSpec& spec, const Matrix& a) {
  if (spec.kind == GeneratorKind::squared_euclidean) return a;
  require_positive(a, "argument");
  return (a.array().log() + 1.0).matrix();
}

double bregman_div(const GeneratorSpec& spec, const Matrix& x, const Matrix& y) {
  check_same_shape(x, y);
  if (spec.kind == GeneratorKind::squared_euclidean) return 0.5 * (x - y).squaredNorm();
  require_nonnegative(x, "first argument");
  require_positive(y, "second argument");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) sum += entropy_div(x.data()[k], y.data()[k]);
  return sum;
}

double three_point_check(const GeneratorSpec& spec, const Matrix& x, const Matrix& y, const Matrix& z) {
  check_same_shape(x, y);
  check_same_shape(y, z);
  const Matrix cross = generator_grad(spec, y) - generator_grad(spec, z);
  return bregman_div(spec, x, z) - bregman_div(spec, x, y) - bregman_div(spec, y, z) -
         (cross.array() * (x - y).array()).sum();
}

double regularizer_value(const RegularizerSpec& reg, const Matrix& a) {
  if (reg.is_nonnegative() && a.size() > 0 && a.minCoeff() < 0.0) return std::numeric_limits<double>::infinity();
  switch (reg.kind) {
    case RegularizerKind::zero:
    case RegularizerKind::nonnegative_indicator:
      return 0.0;
    case RegularizerKind::squared_l2: return 0.5 * reg.weight * a.squaredNorm();
    case RegularizerKind::l1: return reg.weight * a.cwiseAbs().sum();
  }
  return 0.0;
}

void check_prox_pair(const GeneratorSpec& gen, const RegularizerSpec& reg) {
  reg.validate();
  if (gen.kind == GeneratorKind::negative_entropy) {
    if (!(gen.entropy_floor > 0.0)) throw ConfigError("entropy floor must be > 0");
    if (reg.kind == RegularizerKind::squared_l2) {
      throw ConfigError(
          "no closed-form prox for (negative-entropy, squared-l2); supported pairs: "
          "(squared-euclidean, zero|nonnegative-indicator|squared-l2|l1), "
          "(negative-entropy, zero|nonnegative-indicator|l1)");
    }
  }
}

Matrix mirror_prox_step(const GeneratorSpec& gen, const RegularizerSpec& reg, const Matrix& anchor,
                        const Matrix& grad, double eta) {
  check_same_shape(anchor, grad);
  check_prox_pair(gen, reg);
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("stepsize must be finite and > 0");
  const double lambda = reg.weight;

  if (gen.kind == GeneratorKind::negative_entropy) {
    require_positive(anchor, "prox anchor");
    const double shift = reg.kind == RegularizerKind::l1 ? lambda : 0.0;
    Matrix out = (anchor.array() * (-eta * (grad.array() + shift)).exp()).matrix();
    return out.cwiseMax(gen.entropy_floor);
  }

  Matrix v = anchor - eta * grad;
  switch (reg.kind) {
    case RegularizerKind::zero: break;
    case RegularizerKind::nonnegative_indicator: v = v.cwiseMax(0.0); break;
    case RegularizerKind::squared_l2: v /= (1.0 + eta * lambda); break;
    case RegularizerKind::l1: v = v.unaryExpr([t = eta * lambda](double x) { return soft_threshold(x, t); }); break;
  }
  if (reg.is_nonnegative()) v = v.cwiseMax(0.0);
  return v;
}

double prox_objective(const GeneratorSpec& gen, const RegularizerSpec& reg, const Matrix& anchor,
                      const Matrix& grad, double eta, const Matrix& a) {
  check_same_shape(anchor, a);
  check_same_shape(anchor, grad);
  if (gen.kind == GeneratorKind::negative_entropy && a.size() > 0 && a.minCoeff() < 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return regularizer_value(reg, a) + (grad.array() * (a - anchor).array()).sum() + bregman_div(gen, a, anchor) / eta;
}

double prox_optimality_residual(const GeneratorSpec& gen, const RegularizerSpec& reg, const Matrix& anchor,
                                const Matrix& grad, double eta, const Matrix& a) {
  check_same_shape(anchor, a);
  check_same_shape(anchor, grad);
  const double lambda = reg.weight;
  double worst = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double ak = a.data()[k];
    const double g = grad.data()[k];
    const double anc = anchor.data()[k];
    // Everything below is eta times the subproblem derivative.
    double residual = 0.0;
    if (gen.kind == GeneratorKind::negative_entropy) {
      const double smooth = eta * g + std::log(ak) - std::log(anc) + (reg.kind == RegularizerKind::l1 ? eta * lambda : 0.0);
      // Coordinates held at the floor only need a nonnegative derivative.
      residual = ak <= gen.entropy_floor ? std::max(0.0, -smooth) : std::abs(smooth);
    } else {
      const double smooth = eta * g + ak - anc;
      const double t = eta * lambda;
      switch (reg.kind) {
        case RegularizerKind::zero:
        case RegularizerKind::nonnegative_indicator:
          residual = std::abs(smooth);
          break;
        case RegularizerKind::squared_l2:
          residual = std::abs(smooth + t * ak);
          break;
        case RegularizerKind::l1:
          if (ak > 0.0) residual = std::abs(smooth + t);
          else if (ak < 0.0) residual = std::abs(smooth - t);
          else residual = std::max(0.0, std::abs(smooth) - t);
          break;
      }
      if (reg.is_nonnegative() && ak == 0.0) {
        // Subdifferential of the indicator at 0 adds (-inf, 0].
        const double upper = smooth + (reg.kind == RegularizerKind::l1 ? t : 0.0);
        residual = std::max(0.0, -upper);
      }
    }
    worst = std::max(worst, residual);
  }
  return worst;
}

}  // namespace gcpmd
