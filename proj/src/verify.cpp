#include "gcpmd/verify.hpp"

#include "gcpmd/bregman.hpp"
#include "gcpmd/data.hpp"
#include "gcpmd/errors.hpp"
#include "gcpmd/estimators.hpp"
#include "gcpmd/metrics.hpp"
#include "gcpmd/random.hpp"

#include <cmath>
#include <functional>
#include <limits>

namespace gcpmd {

namespace {

constexpr double kGradientTol = 1e-5;
constexpr double kProxTol = 1e-8;
constexpr double kEstimatorTol = 1e-10;
constexpr double kKhatriRaoTol = 1e-12;

CheckResult make(std::string suite, std::string name, double error, double tol) {
  return {std::move(suite), std::move(name), error, tol, error <= tol};
}

double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

KruskalModel test_model(const TensorShape& shape, std::size_t rank, Rng& rng) {
  std::vector<Matrix> factors;
  for (std::size_t n = 0; n < shape.order(); ++n) {
    Matrix a(static_cast<Eigen::Index>(shape.dim(n)), static_cast<Eigen::Index>(rank));
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = uniform_in(rng, 0.2, 1.0);
    factors.push_back(a);
  }
  return KruskalModel(std::move(factors));
}

Distribution data_family(LossKind kind) {
  switch (kind) {
    case LossKind::gaussian: return Distribution::gaussian;
    case LossKind::gamma: return Distribution::gamma;
    case LossKind::poisson_identity:
    case LossKind::poisson_log: return Distribution::poisson;
    case LossKind::bernoulli_odds:
    case LossKind::bernoulli_logit: return Distribution::bernoulli_odds;
  }
  return Distribution::gaussian;
}

double max_rel_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

// Minimizer of one coordinate of the prox subproblem, by bisection on the
// one-sided derivatives (the subproblem is convex in each coordinate).
double coordinate_argmin(const GeneratorSpec& gen, const RegularizerSpec& reg, double anchor, double g, double eta) {
  const bool entropy = gen.kind == GeneratorKind::negative_entropy;
  const bool nonneg = entropy || reg.is_nonnegative();
  auto slope = [&](double a, double side) {
    double d = g + (entropy ? std::log(a / anchor) : (a - anchor)) / eta;
    switch (reg.kind) {
      case RegularizerKind::squared_l2: d += reg.weight * a; break;
      case RegularizerKind::l1: d += reg.weight * (a > 0 ? 1.0 : a < 0 ? -1.0 : side); break;
      default: break;
    }
    return d;
  };
  const double reach = eta * (std::abs(g) + reg.weight) + 1.0;
  if (entropy) {
    // Search in log space; the minimizer is interior.
    double lo = std::log(anchor) - 2.0 * reach, hi = std::log(anchor) + 2.0 * reach;
    for (int it = 0; it < 400 && lo < hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      if (slope(std::exp(mid), 1.0) < 0) lo = mid;
      else hi = mid;
    }
    return std::exp(0.5 * (lo + hi));
  }
  double lo = nonneg ? 0.0 : anchor - 2.0 * reach * (1.0 + std::abs(anchor));
  double hi = std::max(anchor, 0.0) + 2.0 * reach * (1.0 + std::abs(anchor));
  if (nonneg && slope(0.0, 1.0) >= 0.0) return 0.0;
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (slope(mid, 1.0) < 0) lo = mid;
    else if (slope(mid, -1.0) > 0) hi = mid;
    else return mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<CheckResult> gradient_suite(const VerifyOptions& opt) {
  std::vector<CheckResult> out;
  const TensorShape shape({6, 5, 4});
  for (LossKind kind : {LossKind::gaussian, LossKind::gamma, LossKind::poisson_identity, LossKind::poisson_log,
                        LossKind::bernoulli_odds, LossKind::bernoulli_logit}) {
    Rng rng(mix_seed(opt.seed, 0x61 + static_cast<std::uint64_t>(kind)));
    const KruskalModel model = test_model(shape, 3, rng);
    const ObservedTensor tensor = sample_observations(data_family(kind), model, 1.0, rng);
    const LossSpec loss{kind};
    out.push_back(make("gradient", std::string(to_string(kind)), gradient_check(loss, tensor, model, opt.derivative),
                       kGradientTol));
  }
  return out;
}

std::vector<CheckResult> prox_suite(const VerifyOptions& opt) {
  struct Case {
    const char* name;
    GeneratorSpec gen;
    RegularizerSpec reg;
  };
  const Case cases[] = {
      {"entropy", {GeneratorKind::negative_entropy}, {RegularizerKind::zero}},
      {"entropy+l1", {GeneratorKind::negative_entropy}, {RegularizerKind::l1, 0.3}},
      {"euclidean", {GeneratorKind::squared_euclidean}, {RegularizerKind::zero}},
      {"euclidean+nonnegative", {GeneratorKind::squared_euclidean}, {RegularizerKind::nonnegative_indicator}},
      {"euclidean+squared-l2", {GeneratorKind::squared_euclidean}, {RegularizerKind::squared_l2, 0.7}},
      {"euclidean+l1", {GeneratorKind::squared_euclidean}, {RegularizerKind::l1, 0.4}},
      {"euclidean+l1+nonnegative", {GeneratorKind::squared_euclidean}, {RegularizerKind::l1, 0.4, true}},
  };
  std::vector<CheckResult> out;
  for (const Case& c : cases) {
    Rng rng(mix_seed(opt.seed, 0x70));
    const bool entropy = c.gen.kind == GeneratorKind::negative_entropy;
    double worst = 0.0;
    for (std::size_t t = 0; t < opt.prox_trials; ++t) {
      Matrix anchor(3, 2), grad(3, 2);
      for (Eigen::Index i = 0; i < anchor.size(); ++i) {
        anchor.data()[i] = entropy || c.reg.is_nonnegative() ? uniform_in(rng, 0.05, 2.0) : uniform_in(rng, -2.0, 2.0);
        grad.data()[i] = uniform_in(rng, -2.0, 2.0);
      }
      const double eta = uniform_in(rng, 0.01, 1.0);
      const Matrix closed = mirror_prox_step(c.gen, c.reg, anchor, grad, eta);
      for (Eigen::Index i = 0; i < anchor.size(); ++i) {
        const double numeric = coordinate_argmin(c.gen, c.reg, anchor.data()[i], grad.data()[i], eta);
        worst = std::max(worst, std::abs(numeric - closed.data()[i]));
      }
    }
    out.push_back(make("prox", c.name, worst, kProxTol));
  }
  return out;
}

std::vector<CheckResult> estimator_suite(const VerifyOptions& opt) {
  std::vector<CheckResult> out;
  const TensorShape shape({5, 4, 3});
  Rng rng(mix_seed(opt.seed, 0xE1));
  const KruskalModel model = test_model(shape, 2, rng);
  const ObservedTensor tensor = sample_observations(Distribution::poisson, model, 1.0, rng);
  const LossSpec loss{LossKind::poisson_identity};
  double fiber_mean = 0.0, sgd = 0.0, saga = 0.0;
  for (std::size_t n = 0; n < shape.order(); ++n) {
    const auto fibers = all_fibers(shape, n);
    const GradientRequest request{tensor, model, n, fibers, loss};
    const Matrix full = full_gradient(request);
    Matrix mean = Matrix::Zero(full.rows(), full.cols());
    for (const auto& f : fibers) mean += fiber_gradient(request, f.row);
    mean /= static_cast<double>(fibers.size());
    fiber_mean = std::max(fiber_mean, max_rel_diff(mean, full));
    sgd = std::max(sgd, max_rel_diff(sgd_gradient(request), full));
    EstimatorOptions eo;
    eo.kind = EstimatorKind::saga;
    eo.batch = fibers.size();
    EstimatorState state(eo);
    state.initialize(tensor, model, loss);
    saga = std::max(saga, max_rel_diff(state.estimate(request), full));
  }
  out.push_back(make("estimator", "fiber mean = full", fiber_mean, kEstimatorTol));
  out.push_back(make("estimator", "sgd(B=J) = full", sgd, 1e-12));
  out.push_back(make("estimator", "saga(B=J) = full", saga, 1e-12));
  return out;
}

std::vector<CheckResult> khatri_rao_suite(const VerifyOptions& opt) {
  const TensorShape shape({4, 3, 5, 2});
  Rng rng(mix_seed(opt.seed, 0x4B));
  const KruskalModel model = test_model(shape, 3, rng);
  const DenseTensor full = reconstruct(model);
  double kr = 0.0, fib = 0.0;
  for (std::size_t n = 0; n < shape.order(); ++n) {
    // Materialize H_n as the column-wise Kronecker product, last mode outermost.
    Matrix h = Matrix::Ones(1, 3);
    for (std::size_t m = shape.order(); m-- > 0;) {
      if (m == n) continue;
      const Matrix& a = model.factor(m);
      Matrix next(h.rows() * a.rows(), 3);
      for (Eigen::Index p = 0; p < h.rows(); ++p)
        for (Eigen::Index q = 0; q < a.rows(); ++q) next.row(p * a.rows() + q) = h.row(p).cwiseProduct(a.row(q));
      h = next;
    }
    const auto fibers = all_fibers(shape, n);
    kr = std::max(kr, max_rel_diff(khatri_rao_rows(model, n, fibers), h));
    const Matrix unfolded = data_fiber(ObservedTensor(full), n, fibers);
    fib = std::max(fib, max_rel_diff(model_fiber(model, n, fibers), unfolded));
  }
  return {make("khatri-rao", "sampled rows = materialized product", kr, kKhatriRaoTol),
          make("khatri-rao", "model fibers = unfolded reconstruction", fib, kKhatriRaoTol)};
}

std::vector<CheckResult> mse_suite(const VerifyOptions& opt) {
  Rng rng(mix_seed(opt.seed, 0x3E));
  double worst = 0.0;
  for (std::size_t t = 0; t < opt.mse_trials; ++t) {
    const auto r = static_cast<Eigen::Index>(1 + t % 6);
    Matrix cost(r, r);
    for (Eigen::Index i = 0; i < cost.size(); ++i) cost.data()[i] = uniform01(rng);
    auto total = [&](const std::vector<std::size_t>& p) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < r; ++i) s += cost(i, static_cast<Eigen::Index>(p[static_cast<std::size_t>(i)]));
      return s;
    };
    worst = std::max(worst, std::abs(total(match_exhaustive(cost)) - total(match_hungarian(cost))));
  }
  return {make("mse", "exhaustive = hungarian (R <= 6)", worst, 1e-12)};
}

}  // namespace

double gradient_check(const LossSpec& loss, const ObservedTensor& tensor, const KruskalModel& model,
                      DerivativeFn derivative) {
  double worst = 0.0;
  for (std::size_t n = 0; n < model.order(); ++n) {
    const Matrix grad = full_gradient({tensor, model, n, {}, loss, derivative});
    const Matrix& a = model.factor(n);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index r = 0; r < a.cols(); ++r) {
        const double h = 1e-5 * std::max(1.0, std::abs(a(i, r)));
        auto at = [&](double shift) {
          KruskalModel moved = model;
          Matrix b = a;
          b(i, r) += shift;
          moved.set_factor(n, b);
          return objective(loss, tensor, moved).value;
        };
        const double fd = (at(h) - at(-h)) / (2.0 * h);
        const double err = std::abs(fd - grad(i, r)) / std::max({std::abs(fd), std::abs(grad(i, r)), 1e-6});
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

std::vector<std::string> verification_suites() { return {"gradient", "prox", "estimator", "khatri-rao", "mse"}; }

std::vector<CheckResult> run_suite(const std::string& suite, const VerifyOptions& options) {
  if (suite == "gradient") return gradient_suite(options);
  if (suite == "prox") return prox_suite(options);
  if (suite == "estimator") return estimator_suite(options);
  if (suite == "khatri-rao") return khatri_rao_suite(options);
  if (suite == "mse") return mse_suite(options);
  throw ConfigError("unknown verification suite '" + suite + "'");
}

std::vector<CheckResult> run_verification(const VerifyOptions& options) {
  std::vector<CheckResult> all;
  for (const auto& s : verification_suites()) {
    auto part = run_suite(s, options);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

}  // namespace gcpmd
