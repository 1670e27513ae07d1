#include "gcpmd/metrics.hpp"

#include "gcpmd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gcpmd {

namespace {

void require_square(const Matrix& cost) {
  if (cost.rows() != cost.cols() || cost.rows() == 0) throw ContractError("assignment needs a non-empty square cost matrix");
}

// Sum of matched costs in ascending order, so every matching of the same
// multiset of costs totals identically.
double matched_total(const Matrix& cost, const std::vector<std::size_t>& perm) {
  std::vector<double> picked(perm.size());
  for (std::size_t r = 0; r < perm.size(); ++r) picked[r] = cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(perm[r]));
  std::sort(picked.begin(), picked.end());
  double total = 0.0;
  for (double v : picked) total += v;
  return total;
}

Matrix normalized_columns(const Matrix& m, const char* which) {
  Matrix out = m;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    // Dividing by the largest magnitude first makes an exactly scaled column
    // produce bit-identical output.
    const double peak = m.col(c).cwiseAbs().maxCoeff();
    if (!(peak > 0.0) || !std::isfinite(peak))
      throw DomainError(std::string("column ") + std::to_string(c) + " of the " + which + " factor has zero norm");
    out.col(c) /= peak;
    out.col(c) /= out.col(c).norm();
  }
  return out;
}

}  // namespace

std::vector<std::size_t> match_exhaustive(const Matrix& cost) {
  require_square(cost);
  const auto r = static_cast<std::size_t>(cost.rows());
  if (r > 10) throw ConfigError("exhaustive matching is limited to R <= 10");
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    const double c = matched_total(cost, perm);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<std::size_t> match_hungarian(const Matrix& cost) {
  require_square(cost);
  // Shortest augmenting path with potentials; rows/cols 1-based internally.
  const auto n = static_cast<std::size_t>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
  return perm;
}

Matrix normalized_column_cost(const Matrix& estimate, const Matrix& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw ContractError("estimate and truth factors differ in shape");
  const Matrix e = normalized_columns(estimate, "estimate");
  const Matrix t = normalized_columns(truth, "truth");
  const Eigen::Index r = t.cols();
  Matrix cost(r, r);
  for (Eigen::Index a = 0; a < r; ++a)
    for (Eigen::Index b = 0; b < r; ++b) cost(a, b) = (t.col(a) - e.col(b)).squaredNorm();
  return cost;
}

MseReport mse(const Matrix& estimate, const Matrix& truth) {
  const Matrix cost = normalized_column_cost(estimate, truth);
  MseReport report;
  report.permutation = cost.rows() <= 8 ? match_exhaustive(cost) : match_hungarian(cost);
  report.column_residuals.resize(report.permutation.size());
  for (std::size_t r = 0; r < report.permutation.size(); ++r)
    report.column_residuals[r] = cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(report.permutation[r]));
  report.mse = matched_total(cost, report.permutation) / static_cast<double>(cost.rows());
  return report;
}

ModelMse model_mse(const KruskalModel& estimate, const KruskalModel& truth) {
  if (!(estimate.shape() == truth.shape()) || estimate.rank() != truth.rank())
    throw ContractError("estimate and truth models differ in shape or rank");
  ModelMse out;
  const std::size_t order = truth.order();
  Matrix shared = Matrix::Zero(static_cast<Eigen::Index>(truth.rank()), static_cast<Eigen::Index>(truth.rank()));
  double sum = 0.0;
  for (std::size_t n = 0; n < order; ++n) {
    out.per_mode.push_back(mse(estimate.factor(n), truth.factor(n)));
    sum += out.per_mode.back().mse;
    shared += normalized_column_cost(estimate.factor(n), truth.factor(n));
  }
  out.mean = sum / static_cast<double>(order);
  const auto perm = shared.rows() <= 8 ? match_exhaustive(shared) : match_hungarian(shared);
  out.shared_permutation = matched_total(shared, perm) / static_cast<double>(shared.rows() * static_cast<Eigen::Index>(order));
  return out;
}

ObjectiveValue nre(const LossSpec& spec, const ObservedTensor& tensor, const KruskalModel& model,
                   const ObjectiveOptions& options) {
  return objective(spec, tensor, model, options);
}

double bregman_div_blocks(const GeneratorSpec& gen, const KruskalModel& x, const KruskalModel& y) {
  if (!(x.shape() == y.shape()) || x.rank() != y.rank()) throw ContractError("iterates differ in shape or rank");
  double total = 0.0;
  for (std::size_t n = 0; n < x.order(); ++n) total += bregman_div(gen, x.factor(n), y.factor(n));
  return total;
}

double lyapunov_forward_weight(const LyapunovConstants& c, double gamma_k) {
  return 1.0 - c.eta * c.weak_convexity - c.eta * c.gamma_bar - gamma_k - c.epsilon / 3.0;
}

LyapunovRecord lyapunov_from_movement(double forward_div, double backward_div, double objective, double gamma_next,
                                      double alpha_k, double beta_k, const LyapunovConstants& c) {
  if (!(c.eta > 0.0)) throw ConfigError("lyapunov needs a positive stepsize");
  const double gamma_k = std::abs(alpha_k - beta_k) * c.m2;
  LyapunovRecord rec;
  rec.objective_term = c.eta * (objective - c.v0);
  rec.forward_term = lyapunov_forward_weight(c, gamma_k) * forward_div;
  rec.backward_term = c.eta * (c.gamma_bar / 2.0 + c.epsilon / (3.0 * c.eta)) * backward_div;
  if (gamma_next != 0.0) {
    if (!(c.gamma_bar > 0.0) || !(c.tau > 0.0))
      throw ConfigError("lyapunov Gamma term needs gamma_bar > 0 and tau > 0");
    rec.gamma_term = c.eta / (2.0 * c.tau * c.gamma_bar) * gamma_next;
  }
  rec.value = rec.objective_term + rec.forward_term + rec.backward_term + rec.gamma_term;
  return rec;
}

LyapunovRecord lyapunov(const GeneratorSpec& gen, const IterateHistory& history, double objective, double gamma_next,
                        double alpha_k, double beta_k, const LyapunovConstants& constants) {
  if (!history.next || !history.current || !history.previous)
    throw StateError("lyapunov needs three consecutive iterates");
  const double forward = bregman_div_blocks(gen, *history.current, *history.next);
  const double backward = bregman_div_blocks(gen, *history.previous, *history.current);
  return lyapunov_from_movement(forward, backward, objective, gamma_next, alpha_k, beta_k, constants);
}

}  // namespace gcpmd
