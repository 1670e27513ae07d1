#include "helpers.hpp"

#include "gcpmd/errors.hpp"
#include "gcpmd/solver.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gcpmd;
using namespace gcpmd::test;

namespace {

struct Problem {
  KruskalModel truth;
  std::vector<double> data;
  ObservedTensor tensor;
};

Problem gaussian_problem(std::uint64_t seed, const std::vector<std::size_t>& dims = {5, 4, 6}, std::size_t rank = 2) {
  Rng rng(seed);
  KruskalModel m = random_kruskal(rng, dims, rank, 0.1, 1.0);
  auto data = data_for(LossKind::gaussian, m, rng);
  for (double& x : data) x = 0.9 * x;
  ObservedTensor t = DenseTensor(m.shape(), data);
  return {std::move(m), std::move(data), std::move(t)};
}

Problem gamma_problem(std::uint64_t seed) {
  Rng rng(seed);
  KruskalModel m = random_kruskal(rng, {6, 5, 6}, 2, 0.2, 1.0);
  auto data = data_for(LossKind::gamma, m, rng);
  ObservedTensor t = DenseTensor(m.shape(), data);
  return {std::move(m), std::move(data), std::move(t)};
}

SolverConfig gaussian_config() {
  SolverConfig c;
  c.loss.kind = LossKind::gaussian;
  c.generator.kind = GeneratorKind::squared_euclidean;
  c.rank = 2;
  c.seed = 3;
  return c;
}

SolverConfig gamma_config() {
  SolverConfig c;
  c.loss.kind = LossKind::gamma;
  c.generator.kind = GeneratorKind::negative_entropy;
  c.rank = 2;
  c.batch = 3;
  c.seed = 5;
  c.eta = 0.02;
  c.init_max = 1.0;
  return c;
}

int count_changed(const KruskalModel& a, const KruskalModel& b) {
  int n = 0;
  for (std::size_t m = 0; m < a.order(); ++m) n += a.factor(m) != b.factor(m);
  return n;
}

}  // namespace

TEST(Schedule, FirstStepHasNoInertia) {
  SolverConfig c;
  c.c1 = 0.9;
  c.c2 = 1.0;
  EXPECT_EQ(c.alpha(1), 0.0);
  EXPECT_EQ(c.beta(1), 0.0);
  EXPECT_DOUBLE_EQ(c.alpha(4), 0.9 * 3.0 / 6.0);
  EXPECT_DOUBLE_EQ(c.beta(4), 1.0 * 3.0 / 6.0);
}

TEST(Config, DefaultsFollowExperimentProtocol) {
  SolverConfig c;
  EXPECT_EQ(c.resolved_batch(), 2 * c.rank);
  EXPECT_DOUBLE_EQ(c.c1, 0.6);
  EXPECT_DOUBLE_EQ(c.c2, 0.8);
  EXPECT_DOUBLE_EQ(c.tol, 1e-10);
  EXPECT_EQ(c.resolved_eval_every(TensorShape({20, 15, 20})), (400u + 5u) / 6u);
}

TEST(Config, ValidateRejectsIncompatibleSettings) {
  const TensorShape s({4, 3, 4});
  SolverConfig c = gamma_config();
  c.generator.kind = GeneratorKind::squared_euclidean;
  c.regularizers = {RegularizerSpec{RegularizerKind::zero}};
  EXPECT_THROW(c.validate(s), ConfigError);

  c = gamma_config();
  c.batch = 13;
  EXPECT_THROW(c.validate(s), ConfigError);
  c.estimator = EstimatorKind::full;
  EXPECT_NO_THROW(c.validate(s));

  c = gamma_config();
  c.delta = 0.2;
  c.epsilon = 0.3;
  EXPECT_THROW(c.validate(s), ConfigError);

  c = gamma_config();
  c.stepsize = StepsizeRule::adaptive;
  EXPECT_THROW(c.validate(s), ConfigError);
  c.l_bar = 2.0;
  EXPECT_NO_THROW(c.validate(s));

  c = gamma_config();
  c.generator.kind = GeneratorKind::negative_entropy;
  c.regularizers = {RegularizerSpec{RegularizerKind::squared_l2, 0.1}};
  EXPECT_THROW(c.validate(s), ConfigError);
}

TEST(Config, EntriesRoundTrip) {
  SolverConfig c = gamma_config();
  c.eta = 0.123456789;
  c.regularizers = {RegularizerSpec{RegularizerKind::l1, 0.25, true}};
  c.lyapunov_v0 = -1.5;
  c.blocks = BlockSampling::cyclic;
  SolverConfig d;
  for (const auto& [k, v] : config_entries(c)) apply_config_entry(d, k, v);
  EXPECT_EQ(config_entries(c), config_entries(d));
  EXPECT_EQ(config_hash(c), config_hash(d));
  d.eta = 0.1234567891;
  EXPECT_NE(config_hash(c), config_hash(d));
  EXPECT_THROW(apply_config_entry(d, "no_such_key", "1"), ConfigError);
  EXPECT_THROW(apply_config_entry(d, "eta", "fast"), ConfigError);
}

TEST(Step, ExactlyOneBlockChanges) {
  const Problem p = gamma_problem(1);
  const SolverConfig c = gamma_config();
  SolverRunState st = initialize_state(c, p.tensor);
  for (int t = 0; t < 60; ++t) {
    const KruskalModel before = st.current;
    itablesmd_step(st, c, p.tensor);
    EXPECT_LE(count_changed(before, st.current), 1);
    EXPECT_EQ(st.iteration, static_cast<std::size_t>(t + 1));
    EXPECT_GE(st.current.min_entry(), c.generator.entropy_floor);
  }
}

TEST(Step, EuclideanNonnegativeStaysFeasible) {
  const Problem p = gamma_problem(2);
  SolverConfig c = gamma_config();
  c.generator.kind = GeneratorKind::squared_euclidean;
  c.eta = 0.5;
  SolverRunState st = initialize_state(c, p.tensor);
  for (int t = 0; t < 60; ++t) {
    itablesmd_step(st, c, p.tensor);
    EXPECT_GE(st.current.min_entry(), 0.0);
  }
}

TEST(Step, SmartcpdEqualsZeroInertia) {
  const Problem p = gamma_problem(3);
  SolverConfig a = gamma_config();
  a.algorithm = Algorithm::smartcpd;
  SolverConfig b = gamma_config();
  b.c1 = 0.0;
  b.c2 = 0.0;
  SolverRunState sa = initialize_state(a, p.tensor), sb = initialize_state(b, p.tensor);
  for (int t = 0; t < 40; ++t) {
    smartcpd_step(sa, a, p.tensor);
    itablesmd_step(sb, b, p.tensor);
    ASSERT_TRUE(sa.current == sb.current) << "step " << t;
  }
}

TEST(Step, SmartcpdEntropyIsMultiplicative) {
  const Problem p = gamma_problem(4);
  SolverConfig c = gamma_config();
  c.algorithm = Algorithm::smartcpd;
  c.estimator = EstimatorKind::full;
  c.blocks = BlockSampling::cyclic;
  SolverRunState st = initialize_state(c, p.tensor);
  const KruskalModel before = st.current;
  const GradientRequest req{p.tensor, before, 0, {}, c.loss};
  const Matrix expect = (before.factor(0).array() * (-c.eta * full_gradient(req).array()).exp()).matrix();
  smartcpd_step(st, c, p.tensor);
  EXPECT_LE((st.current.factor(0) - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Step, FixedPointWithZeroGradient) {
  const Problem p = gaussian_problem(5);
  SolverConfig c = gaussian_config();
  c.estimator = EstimatorKind::full;
  c.c1 = 0.0;
  const ObservedTensor exact = reconstruct(p.truth);
  SolverRunState st = initialize_state(c, exact, &p.truth);
  for (int t = 0; t < 10; ++t) itablesmd_step(st, c, exact);
  EXPECT_TRUE(st.current == p.truth);
}

TEST(Step, FullBatchMatchesHandRolledGradientStep) {
  const Problem p = gaussian_problem(6);
  SolverConfig c = gaussian_config();
  c.estimator = EstimatorKind::full;
  c.c1 = c.c2 = 0.0;
  c.blocks = BlockSampling::cyclic;
  c.eta = 0.3;
  SolverRunState st = initialize_state(c, p.tensor);
  for (int t = 0; t < 6; ++t) {
    const KruskalModel before = st.current;
    const std::size_t mode = static_cast<std::size_t>(t % 3);
    const Matrix g = brute_fd_gradient(c.loss, p.data, before, mode);
    itablesmd_step(st, c, p.tensor);
    const Matrix expect = before.factor(mode) - c.eta * g;
    EXPECT_LE((st.current.factor(mode) - expect).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Guard, AcceptsTrivialCases) {
  const Problem p = gaussian_problem(7);
  SolverConfig c = gaussian_config();
  c.extrapolation = ExtrapolationCheck::backtrack;
  SolverRunState st = initialize_state(c, p.tensor);
  EXPECT_EQ(extrapolation_guard(st, c, 0, 0.7), 0.7);  // A^k == A^{k-1}
  Matrix moved = st.current.factor(0);
  moved(0, 0) += 0.5;
  st.current.set_factor(0, moved);
  EXPECT_EQ(extrapolation_guard(st, c, 0, 0.0), 0.0);
  c.extrapolation = ExtrapolationCheck::off;
  EXPECT_EQ(extrapolation_guard(st, c, 0, 0.9), 0.9);
}

TEST(Guard, ShrinksViolatingBeta) {
  std::vector<Matrix> f{Matrix::Constant(1, 1, 2.0), Matrix::Constant(1, 1, 1.0)};
  const KruskalModel now(f);
  f[0](0, 0) = 1.0;
  const KruskalModel before(f);
  const ObservedTensor t = DenseTensor(TensorShape({1, 1}), {1.0});
  SolverConfig c = gaussian_config();
  c.rank = 1;
  c.batch = 1;
  c.extrapolation = ExtrapolationCheck::backtrack;
  SolverRunState st = initialize_state(c, t, &now);
  st.previous = before;
  const double beta = extrapolation_guard(st, c, 0, 0.8);
  EXPECT_LT(beta, 0.8);
  // Direct evaluation of both sides.
  const double lhs = 0.5 * (beta * 1.0) * (beta * 1.0);
  const double rhs = (c.delta - c.epsilon) * 0.5 * 1.0;
  EXPECT_LE(lhs, rhs);
  EXPECT_GT(0.5 * (2 * beta) * (2 * beta), rhs);
}

TEST(Stepsize, AdaptiveIsNonincreasing) {
  const Problem p = gamma_problem(8);
  SolverConfig c = gamma_config();
  c.stepsize = StepsizeRule::adaptive;
  c.l_bar = 4.0;
  c.gamma_bar = 0.2;
  c.weak_convexity = 0.1;
  c.c1 = 0.3;
  c.c2 = 0.35;
  c.eta = 1.0;
  SolverRunState st = initialize_state(c, p.tensor);
  double prev = st.eta;
  for (int t = 0; t < 50; ++t) {
    itablesmd_step(st, c, p.tensor);
    EXPECT_LE(st.eta, prev);
    EXPECT_LE(st.eta, 1.0 / c.l_bar);
    prev = st.eta;
  }
}

TEST(Run, ZeroIterationsGiveInitAndOneRecord) {
  const Problem p = gamma_problem(9);
  SolverConfig c = gamma_config();
  c.max_iters = 0;
  const RunResult r = run(c, p.tensor, &p.truth);
  ASSERT_EQ(r.trace.records.size(), 1u);
  EXPECT_EQ(r.iterations, 0u);
  Rng rng(mix_seed(c.seed, 0x1A));
  EXPECT_TRUE(r.model == random_model(p.truth.shape(), c.rank, c.init_max, rng));
  EXPECT_TRUE(r.trace.records[0].mse_mean.has_value());
}

TEST(Run, SameSeedBitIdentical) {
  const Problem p = gamma_problem(10);
  SolverConfig c = gamma_config();
  c.max_iters = 300;
  c.timing = false;
  c.record_gamma = true;
  const RunResult a = run(c, p.tensor, &p.truth);
  const RunResult b = run(c, p.tensor, &p.truth);
  EXPECT_TRUE(a.model == b.model);
  ASSERT_EQ(a.trace.records.size(), b.trace.records.size());
  for (std::size_t i = 0; i < a.trace.records.size(); ++i) {
    EXPECT_EQ(a.trace.records[i].nre, b.trace.records[i].nre);
    EXPECT_EQ(a.trace.records[i].gamma_k, b.trace.records[i].gamma_k);
  }
  c.seed = 6;
  EXPECT_FALSE(run(c, p.tensor, &p.truth).model == a.model);
}

TEST(Run, FullBatchGaussianNreNonincreasing) {
  const Problem p = gaussian_problem(11);
  SolverConfig c = gaussian_config();
  c.estimator = EstimatorKind::full;
  c.c1 = c.c2 = 0.0;
  c.eval_every = 1;
  c.max_iters = 400;
  c.tol = 0.0;
  // Started at the planted model the curvature stays close to its initial value.
  double curv = 0.0;
  for (std::size_t n = 0; n < 3; ++n) curv = std::max(curv, gaussian_block_curvature(p.truth, n));
  c.eta = 0.25 / curv;
  const RunResult r = run(c, p.tensor, nullptr, &p.truth);
  EXPECT_LT(r.trace.records.back().nre, r.trace.records.front().nre);
  for (std::size_t i = 1; i < r.trace.records.size(); ++i)
    EXPECT_LE(r.trace.records[i].nre, r.trace.records[i - 1].nre + 1e-12) << "record " << i;
}

TEST(Run, DivergenceCarriesPartialTrace) {
  const Problem p = gaussian_problem(12);
  SolverConfig c = gaussian_config();
  c.estimator = EstimatorKind::full;
  c.eta = 1e4;
  c.eval_every = 1;
  c.max_iters = 200;
  try {
    run(c, p.tensor);
    FAIL() << "expected divergence";
  } catch (const RunDiverged& e) {
    EXPECT_GE(e.trace().records.size(), 1u);
    EXPECT_EQ(e.trace().metadata.at("stop_reason"), "diverged");
  }
  EXPECT_THROW(run(c, p.tensor), DivergenceError);
}

TEST(Run, ConvergesAndStops) {
  const Problem p = gaussian_problem(13);
  SolverConfig c = gaussian_config();
  c.estimator = EstimatorKind::full;
  c.eta = 0.5;
  c.tol = 1e-6;
  c.max_iters = 20000;
  const RunResult r = run(c, p.tensor);
  EXPECT_EQ(r.reason, StopReason::converged);
  EXPECT_LT(r.iterations, c.max_iters);
  EXPECT_EQ(r.trace.metadata.at("stop_reason"), "converged");
}

TEST(Run, LyapunovSuppressedForAdaptiveStep) {
  const Problem p = gamma_problem(14);
  SolverConfig c = gamma_config();
  c.stepsize = StepsizeRule::adaptive;
  c.l_bar = 5.0;
  c.gamma_bar = 0.1;
  c.lyapunov = true;
  c.max_iters = 20;
  const RunResult r = run(c, p.tensor);
  EXPECT_TRUE(r.trace.metadata.count("warning"));
  EXPECT_FALSE(r.trace.records.back().lyapunov.has_value());
}

TEST(Run, ShapeMismatchIsContractError) {
  const Problem p = gamma_problem(15);
  const KruskalModel wrong = KruskalModel::constant(TensorShape({2, 2, 2}), 2, 1.0);
  EXPECT_THROW(run(gamma_config(), p.tensor, &wrong), ContractError);
  EXPECT_THROW(initialize_state(gamma_config(), p.tensor, &wrong), ContractError);
}

TEST(Curvature, MatchesPowerIteration) {
  Rng rng(16);
  const KruskalModel m = random_kruskal(rng, {4, 3, 5}, 3, 0.1, 1.0);
  for (std::size_t n = 0; n < 3; ++n) {
    const Matrix h = brute_khatri_rao(m, n);
    const Matrix gram = h.transpose() * h / static_cast<double>(m.shape().total());
    Vector v = Vector::Ones(3);
    double lambda = 0.0;
    for (int it = 0; it < 500; ++it) {
      Vector w = gram * v;
      lambda = w.norm();
      v = w / lambda;
    }
    EXPECT_NEAR(gaussian_block_curvature(m, n), lambda, 1e-10 * lambda);
  }
}
