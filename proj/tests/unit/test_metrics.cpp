#include "helpers.hpp"

#include "gcpmd/errors.hpp"
#include "gcpmd/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace gcpmd;
using namespace gcpmd::test;

namespace {

// Minimum assignment cost by enumerating every permutation.
double brute_min_cost(const Matrix& cost) {
  std::vector<std::size_t> p(static_cast<std::size_t>(cost.rows()));
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t r = 0; r < p.size(); ++r) c += cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p[r]));
    best = std::min(best, c);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

double assignment_cost(const Matrix& cost, const std::vector<std::size_t>& p) {
  std::vector<double> parts;
  for (std::size_t r = 0; r < p.size(); ++r)
    parts.push_back(cost(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p[r])));
  std::sort(parts.begin(), parts.end());
  return std::accumulate(parts.begin(), parts.end(), 0.0);
}

Matrix permute_columns(const Matrix& m, const std::vector<std::size_t>& p) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t c = 0; c < p.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(static_cast<Eigen::Index>(p[c]));
  return out;
}

}  // namespace

TEST(Mse, IdenticalIsZero) {
  Rng rng(1);
  const Matrix a = random_matrix(rng, 6, 3, 0.1, 1.0);
  EXPECT_EQ(mse(a, a).mse, 0.0);
}

TEST(Mse, PermutedAndRescaledIsZero) {
  Rng rng(2);
  const Matrix a = random_matrix(rng, 6, 4, 0.1, 1.0);
  Matrix b = permute_columns(a, {2, 0, 3, 1});
  b.col(0) *= 4.0;
  b.col(2) *= 0.5;
  const MseReport r = mse(b, a);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.permutation, (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(Mse, OrthogonalUnitColumns) {
  Matrix e(2, 1), t(2, 1);
  e << 1, 0;
  t << 0, 1;
  EXPECT_DOUBLE_EQ(mse(e, t).mse, 2.0);
}

TEST(Mse, ZeroColumnRejected) {
  Matrix e = Matrix::Ones(3, 2);
  e.col(1).setZero();
  EXPECT_THROW(mse(e, Matrix::Ones(3, 2)), DomainError);
  EXPECT_THROW(mse(Matrix::Ones(3, 2), Matrix::Ones(4, 2)), ContractError);
}

TEST(MseProperty, ExhaustiveAndHungarianAgree) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto r = static_cast<Eigen::Index>(1 + uniform_below(rng, 6));
    const Matrix est = random_matrix(rng, 7, r, 0.0, 1.0);
    const Matrix tru = random_matrix(rng, 7, r, 0.0, 1.0);
    const Matrix cost = normalized_column_cost(est, tru);
    const double a = assignment_cost(cost, match_exhaustive(cost));
    const double b = assignment_cost(cost, match_hungarian(cost));
    EXPECT_EQ(a, b);
    EXPECT_NEAR(a, brute_min_cost(cost), 1e-14);
  }
}

TEST(MseProperty, HungarianOptimalAtLargerRank) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Matrix cost = random_matrix(rng, 9, 9, 0.0, 1.0);
    EXPECT_NEAR(assignment_cost(cost, match_hungarian(cost)), brute_min_cost(cost), 1e-12);
  }
}

TEST(MseProperty, ScaleInvariantExactly) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    // Columns on a coarse grid, so scaling by c is exact in floating point.
    Matrix est = random_matrix(rng, 5, 3, 0.0, 1.0);
    est = (est * 1024.0).array().round().matrix() / 1024.0;
    est.col(0)(0) += 1.0;
    est.col(1)(0) += 1.0;
    est.col(2)(0) += 1.0;
    const Matrix tru = random_matrix(rng, 5, 3, 0.0, 1.0);
    Matrix scaled = est;
    const auto col = static_cast<Eigen::Index>(uniform_below(rng, 3));
    const double c = static_cast<double>(1 + uniform_below(rng, 255)) / 16.0;
    scaled.col(col) *= c;
    ASSERT_EQ(scaled.col(col) / c, est.col(col));
    const MseReport a = mse(est, tru), b = mse(scaled, tru);
    EXPECT_EQ(a.mse, b.mse);
    EXPECT_EQ(a.permutation, b.permutation);
    EXPECT_EQ(a.column_residuals, b.column_residuals);
  }
}

TEST(MseProperty, PermutationInvariantExactly) {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    const Matrix est = random_matrix(rng, 5, 4, 0.0, 1.0);
    const Matrix tru = random_matrix(rng, 5, 4, 0.0, 1.0);
    std::vector<std::size_t> p{0, 1, 2, 3};
    for (std::size_t k = 3; k > 0; --k) std::swap(p[k], p[uniform_below(rng, k + 1)]);
    EXPECT_EQ(mse(permute_columns(est, p), tru).mse, mse(est, tru).mse);
  }
}

TEST(MseProperty, Symmetric) {
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const Matrix a = random_matrix(rng, 5, 3, 0.0, 1.0);
    const Matrix b = random_matrix(rng, 5, 3, 0.0, 1.0);
    EXPECT_EQ(mse(a, b).mse, mse(b, a).mse);
  }
}

TEST(ModelMse, MeanAndSharedPermutation) {
  Rng rng(8);
  const KruskalModel truth = random_kruskal(rng, {4, 5, 3}, 3, 0.1, 1.0);
  std::vector<Matrix> f;
  for (const auto& a : truth.factors()) f.push_back(permute_columns(a, {2, 0, 1}));
  const ModelMse same = model_mse(KruskalModel(f), truth);
  EXPECT_EQ(same.mean, 0.0);
  EXPECT_EQ(same.shared_permutation, 0.0);

  const KruskalModel other = random_kruskal(rng, {4, 5, 3}, 3, 0.1, 1.0);
  const ModelMse m = model_mse(other, truth);
  double sum = 0.0;
  for (const auto& r : m.per_mode) sum += r.mse;
  EXPECT_DOUBLE_EQ(m.mean, sum / 3.0);
  EXPECT_GE(m.shared_permutation, m.mean - 1e-15);
}

TEST(Nre, EqualsObjective) {
  Rng rng(9);
  const KruskalModel m = random_kruskal(rng, {3, 3, 3}, 2, 0.1, 1.0);
  const auto data = data_for(LossKind::gamma, m, rng);
  const ObservedTensor t = DenseTensor(m.shape(), data);
  const LossSpec loss{LossKind::gamma, 1e-9};
  EXPECT_EQ(nre(loss, t, m).value, objective(loss, t, m).value);
  const ObservedTensor fit = reconstruct(m);
  EXPECT_EQ(nre(LossSpec{LossKind::gaussian, 1e-9}, fit, m).value, 0.0);
}

TEST(Lyapunov, StationaryRunIsZero) {
  Rng rng(10);
  const KruskalModel m = random_kruskal(rng, {3, 2, 2}, 2, 0.1, 1.0);
  LyapunovConstants c;
  c.eta = 0.2;
  c.v0 = 1.75;
  const IterateHistory h{&m, &m, &m};
  const LyapunovRecord r = lyapunov(GeneratorSpec{}, h, 1.75, 0.0, 0.3, 0.5, c);
  EXPECT_EQ(r.value, 0.0);
}

TEST(Lyapunov, OnlyObjectiveTerm) {
  LyapunovConstants c;
  c.eta = 0.25;
  c.v0 = 1.0;
  const LyapunovRecord r = lyapunov_from_movement(0.0, 0.0, 3.0, 0.0, 0.2, 0.4, c);
  EXPECT_DOUBLE_EQ(r.value, 0.25 * (3.0 - 1.0));
}

TEST(Lyapunov, TermsMatchFormula) {
  Rng rng(11);
  const GeneratorSpec gen{GeneratorKind::negative_entropy, 1e-12};
  const KruskalModel a0 = random_kruskal(rng, {3, 2, 2}, 2, 0.1, 1.0);
  const KruskalModel a1 = random_kruskal(rng, {3, 2, 2}, 2, 0.1, 1.0);
  const KruskalModel a2 = random_kruskal(rng, {3, 2, 2}, 2, 0.1, 1.0);
  LyapunovConstants c{0.1, 0.5, 0.3, 0.8, 0.15, 2.0, -1.0};
  const double phi = 2.5, gamma_next = 0.04, alpha_k = 0.2, beta_k = 0.35;
  const LyapunovRecord r = lyapunov(gen, IterateHistory{&a2, &a1, &a0}, phi, gamma_next, alpha_k, beta_k, c);

  double fwd = 0.0, bwd = 0.0;
  for (std::size_t n = 0; n < 3; ++n) {
    fwd += bregman_div(gen, a1.factor(n), a2.factor(n));
    bwd += bregman_div(gen, a0.factor(n), a1.factor(n));
  }
  const double gk = std::abs(alpha_k - beta_k) * c.m2;
  const double expect = c.eta * (phi - c.v0) +
                        (1.0 - c.eta * c.weak_convexity - c.eta * c.gamma_bar - gk - c.epsilon / 3.0) * fwd +
                        c.eta * (c.gamma_bar / 2.0 + c.epsilon / (3.0 * c.eta)) * bwd +
                        c.eta / (2.0 * c.tau * c.gamma_bar) * gamma_next;
  EXPECT_NEAR(r.value, expect, 1e-14);
  EXPECT_NEAR(r.objective_term + r.forward_term + r.backward_term + r.gamma_term, r.value, 1e-14);
  EXPECT_DOUBLE_EQ(lyapunov_forward_weight(c, gk), 1.0 - c.eta * c.weak_convexity - c.eta * c.gamma_bar - gk - c.epsilon / 3.0);
}

TEST(Lyapunov, ZeroGammaBarDropsGammaTerm) {
  LyapunovConstants c;
  c.gamma_bar = 0.0;
  EXPECT_EQ(lyapunov_from_movement(0.1, 0.1, 1.0, 0.0, 0.0, 0.0, c).gamma_term, 0.0);
}

TEST(Lyapunov, MissingHistoryIsStateError) {
  Rng rng(12);
  const KruskalModel m = random_kruskal(rng, {3, 2, 2}, 2, 0.1, 1.0);
  EXPECT_THROW(lyapunov(GeneratorSpec{}, IterateHistory{&m, &m, nullptr}, 1.0, 0.0, 0.0, 0.0, {}), StateError);
}
