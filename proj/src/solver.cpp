#include "gcpmd/solver.hpp"

#include "gcpmd/errors.hpp"
#include "gcpmd/format.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

namespace gcpmd {

namespace {

constexpr int kGuardHalvings = 30;

std::string encode_regularizer(const RegularizerSpec& reg) {
  std::string out(to_string(reg.kind));
  out += ':' + format_double(reg.weight);
  if (reg.nonnegative) out += ":nonnegative";
  return out;
}

RegularizerSpec decode_regularizer(std::string_view text) {
  RegularizerSpec reg;
  std::size_t part = 0;
  while (true) {
    const auto colon = text.find(':');
    const std::string_view piece = trim(text.substr(0, colon));
    if (part == 0) {
      reg.kind = parse_regularizer_kind(piece);
    } else if (part == 1) {
      reg.weight = parse_double(piece, "regularizer weight");
    } else if (part == 2 && piece == "nonnegative") {
      reg.nonnegative = true;
    } else {
      throw ConfigError("malformed regularizer '" + std::string(text) + "'");
    }
    ++part;
    if (colon == std::string_view::npos) break;
    text.remove_prefix(colon + 1);
  }
  return reg;
}

template <class Enum, std::size_t K>
Enum parse_enum(std::string_view text, const Enum (&options)[K], std::string_view what) {
  for (Enum e : options)
    if (text == to_string(e)) return e;
  std::string list;
  for (Enum e : options) list += (list.empty() ? "" : ", ") + std::string(to_string(e));
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(text) + "' (expected " + list + ")");
}

// Keeps extrapolated points inside the domain the next operation needs.
void project_point(const SolverConfig& config, const RegularizerSpec& reg, Matrix& a) {
  if (config.generator.kind == GeneratorKind::negative_entropy) {
    a = a.cwiseMax(config.generator.entropy_floor);
  } else if (reg.is_nonnegative() || config.loss.constraint() == ConstraintRegime::nonnegative) {
    a = a.cwiseMax(0.0);
  }
}

void project_anchor(const SolverConfig& config, Matrix& a) {
  if (config.generator.kind == GeneratorKind::negative_entropy) a = a.cwiseMax(config.generator.entropy_floor);
}

bool gamma_enabled(const SolverConfig& config) {
  return config.record_gamma || (config.lyapunov && config.estimator != EstimatorKind::full);
}

void step_impl(SolverRunState& state, const SolverConfig& config, const ObservedTensor& tensor,
               DerivativeFn derivative, bool inertial) {
  const TensorShape shape = state.current.shape();
  const std::size_t order = shape.order();
  const std::size_t k = state.iteration + 1;
  const std::size_t mode = config.blocks == BlockSampling::cyclic ? state.iteration % order
                                                                  : static_cast<std::size_t>(uniform_below(state.rng, order));
  const bool use_inertia = inertial && config.algorithm == Algorithm::itablesmd;
  const double alpha = use_inertia ? config.alpha(k) : 0.0;
  double beta = use_inertia ? config.beta(k) : 0.0;
  try {
    if (use_inertia) beta = extrapolation_guard(state, config, mode, beta);
    const RegularizerSpec reg = config.regularizer(mode);
    const Matrix& a = state.current.factor(mode);
    const Matrix momentum = a - state.previous.factor(mode);
    Matrix anchor = a + alpha * momentum;
    Matrix point = a + beta * momentum;
    project_anchor(config, anchor);
    project_point(config, reg, point);

    std::vector<FiberIndex> fibers;
    if (config.estimator != EstimatorKind::full) {
      const std::size_t batch = std::min(config.resolved_batch(), shape.fiber_count(mode));
      fibers = sample_fibers(shape, mode, batch, state.rng);
    }
    KruskalModel at_point = state.current;
    at_point.set_factor(mode, point);
    // Model entries are bounded by R * prod_n max|A_n|; past overflow the loss sees inf.
    double bound = static_cast<double>(config.rank);
    for (std::size_t n = 0; n < order; ++n) bound *= at_point.factor(n).cwiseAbs().maxCoeff();
    if (!std::isfinite(bound))
      throw DivergenceError("model entries overflow at step " + std::to_string(k) + " (mode " +
                            std::to_string(mode + 1) + ")");
    const GradientRequest request{tensor, at_point, mode, fibers, config.loss, derivative};
    const Matrix grad = state.estimator.estimate(request);
    if (gamma_enabled(config)) {
      const Matrix exact = config.estimator == EstimatorKind::full ? grad : full_gradient(request);
      state.gamma[mode] = vr_diagnostics(state.estimator, request, exact).gamma;
    }

    const double eta = next_stepsize(config, state.eta, alpha, beta);
    Matrix next = mirror_prox_step(config.generator, reg, anchor, grad, eta);
    if (!next.allFinite())
      throw DivergenceError("non-finite factor produced at step " + std::to_string(k) + " (mode " +
                            std::to_string(mode + 1) + ")");
    const double moved = bregman_div(config.generator, a, next);

    state.before_previous = std::move(state.previous);
    state.previous = state.current;
    state.current.set_factor(mode, std::move(next));
    state.backward_div = state.forward_div;
    state.forward_div = moved;
    state.eta = eta;
    state.last_mode = mode;
    state.last_alpha = alpha;
    state.last_beta = beta;
    state.iteration = k;
  } catch (const DomainError& e) {
    throw DomainError("step " + std::to_string(k) + " (mode " + std::to_string(mode + 1) + "): " + e.what());
  } catch (const StateError& e) {
    throw StateError("step " + std::to_string(k) + " (mode " + std::to_string(mode + 1) + "): " + e.what());
  }
}

double regularizer_total(const SolverConfig& config, const KruskalModel& model) {
  double total = 0.0;
  for (std::size_t n = 0; n < model.order(); ++n) total += regularizer_value(config.regularizer(n), model.factor(n));
  return total;
}

}  // namespace

std::string_view to_string(StepsizeRule v) noexcept { return v == StepsizeRule::constant ? "constant" : "adaptive"; }
std::string_view to_string(ExtrapolationCheck v) noexcept { return v == ExtrapolationCheck::off ? "off" : "backtrack"; }
std::string_view to_string(BlockSampling v) noexcept { return v == BlockSampling::uniform ? "uniform" : "cyclic"; }
std::string_view to_string(Algorithm v) noexcept { return v == Algorithm::itablesmd ? "itablesmd" : "smartcpd"; }

std::size_t SolverConfig::resolved_eval_every(const TensorShape& shape) const {
  if (eval_every != 0) return eval_every;
  std::size_t most = 0;
  for (std::size_t n = 0; n < shape.order(); ++n) most = std::max(most, shape.fiber_count(n));
  const std::size_t b = resolved_batch();
  return std::max<std::size_t>(1, (most + b - 1) / b);
}

RegularizerSpec SolverConfig::regularizer(std::size_t mode) const {
  if (regularizers.empty()) {
    RegularizerSpec reg;
    if (loss.constraint() == ConstraintRegime::nonnegative) reg.kind = RegularizerKind::nonnegative_indicator;
    return reg;
  }
  if (regularizers.size() == 1) return regularizers.front();
  if (mode >= regularizers.size()) throw IndexError("no regularizer configured for mode " + std::to_string(mode + 1));
  return regularizers[mode];
}

double SolverConfig::alpha(std::size_t k) const noexcept {
  if (algorithm == Algorithm::smartcpd || k == 0) return 0.0;
  return c1 * static_cast<double>(k - 1) / static_cast<double>(k + 2);
}

double SolverConfig::beta(std::size_t k) const noexcept {
  if (algorithm == Algorithm::smartcpd || k == 0) return 0.0;
  return c2 * static_cast<double>(k - 1) / static_cast<double>(k + 2);
}

void SolverConfig::validate(const TensorShape& shape) const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (rank == 0) fail("rank must be >= 1");
  if (!(c1 >= 0.0 && c1 <= 1.0) || !(c2 >= 0.0 && c2 <= 1.0)) fail("c1 and c2 must lie in [0, 1]");
  if (!(eta > 0.0) || !std::isfinite(eta)) fail("eta must be positive and finite");
  if (!(tol >= 0.0)) fail("tol must be >= 0");
  if (!(delta < 1.0 && delta > epsilon && epsilon > 0.0)) fail("need 1 > delta > epsilon > 0");
  if (!(init_max > 0.0) || !std::isfinite(init_max)) fail("init_max must be positive and finite");
  if (!(divergence_factor > 0.0)) fail("divergence_factor must be positive");
  if (!(lower_curvature >= 0.0)) fail("lower_curvature must be >= 0");
  if (!(m2 >= 0.0) || !(gamma_bar >= 0.0) || !(weak_convexity >= 0.0)) fail("m2, gamma_bar, weak_convexity must be >= 0");
  if (sarah_p != 0.0 && !(sarah_p >= 1.0)) fail("sarah_p must be 0 (auto) or >= 1");
  if (objective_samples == 0) fail("objective_samples must be >= 1");
  if (loss.guarded() && !(loss.epsilon > 0.0)) fail("loss epsilon must be positive for " + std::string(to_string(loss.kind)));
  if (generator.kind == GeneratorKind::negative_entropy && !(generator.entropy_floor > 0.0))
    fail("entropy floor must be positive");

  if (estimator != EstimatorKind::full) {
    std::size_t fewest = shape.fiber_count(0);
    for (std::size_t n = 1; n < shape.order(); ++n) fewest = std::min(fewest, shape.fiber_count(n));
    if (resolved_batch() > fewest)
      fail("batch " + std::to_string(resolved_batch()) + " exceeds the smallest fiber count " + std::to_string(fewest));
  }

  if (!regularizers.empty() && regularizers.size() != 1 && regularizers.size() != shape.order())
    fail("give one regularizer or one per mode");
  for (std::size_t n = 0; n < shape.order(); ++n) {
    const RegularizerSpec reg = regularizer(n);
    reg.validate();
    check_prox_pair(generator, reg);
    if (loss.constraint() == ConstraintRegime::nonnegative && generator.kind == GeneratorKind::squared_euclidean &&
        !reg.is_nonnegative())
      fail(std::string(to_string(loss.kind)) + " loss needs nonnegative factors; use the negative-entropy generator or a "
           "nonnegative regularizer (mode " + std::to_string(n + 1) + " has " + std::string(to_string(reg.kind)) + ")");
  }

  const double gap = algorithm == Algorithm::smartcpd ? 0.0 : std::abs(c1 - c2);
  if (stepsize == StepsizeRule::adaptive) {
    if (!(l_bar > 0.0)) fail("the adaptive stepsize rule needs l_bar > 0");
    if (!(1.0 - delta - 2.0 * gap * m2 > 0.0)) fail("adaptive stepsize bound 1 - delta - 2|c1 - c2| m2 is not positive");
  }
  if (lyapunov) {
    LyapunovConstants c{eta, weak_convexity, gamma_bar, lyapunov_tau, epsilon, m2, 0.0};
    if (lyapunov_forward_weight(c, gap * m2) < 0.0)
      fail("Lyapunov forward weight 1 - eta*alpha - eta*gamma_bar - gamma_k - epsilon/3 is negative");
    if (estimator != EstimatorKind::full && (!(gamma_bar > 0.0) || !(lyapunov_tau > 0.0)))
      fail("Lyapunov with a stochastic estimator needs gamma_bar > 0 and lyapunov_tau > 0");
  }
}

std::vector<std::pair<std::string, std::string>> config_entries(const SolverConfig& c) {
  std::string regs;
  for (const auto& r : c.regularizers) regs += (regs.empty() ? "" : ",") + encode_regularizer(r);
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"algorithm", std::string(to_string(c.algorithm))},
      {"rank", std::to_string(c.rank)},
      {"loss", std::string(to_string(c.loss.kind))},
      {"loss_epsilon", format_double(c.loss.epsilon)},
      {"generator", std::string(to_string(c.generator.kind))},
      {"entropy_floor", format_double(c.generator.entropy_floor)},
      {"regularizers", regs},
      {"estimator", std::string(to_string(c.estimator))},
      {"batch", std::to_string(c.batch)},
      {"sarah_p", format_double(c.sarah_p)},
      {"eta", format_double(c.eta)},
      {"stepsize", std::string(to_string(c.stepsize))},
      {"l_bar", format_double(c.l_bar)},
      {"m2", format_double(c.m2)},
      {"gamma_bar", format_double(c.gamma_bar)},
      {"weak_convexity", format_double(c.weak_convexity)},
      {"c1", format_double(c.c1)},
      {"c2", format_double(c.c2)},
      {"extrapolation", std::string(to_string(c.extrapolation))},
      {"delta", format_double(c.delta)},
      {"epsilon", format_double(c.epsilon)},
      {"lower_curvature", format_double(c.lower_curvature)},
      {"max_iters", std::to_string(c.max_iters)},
      {"tol", format_double(c.tol)},
      {"eval_every", std::to_string(c.eval_every)},
      {"blocks", std::string(to_string(c.blocks))},
      {"init_max", format_double(c.init_max)},
      {"seed", std::to_string(c.seed)},
      {"record_gamma", b(c.record_gamma)},
      {"lyapunov", b(c.lyapunov)},
      {"lyapunov_tau", format_double(c.lyapunov_tau)},
      {"lyapunov_v0", c.lyapunov_v0 ? format_double(*c.lyapunov_v0) : std::string()},
      {"timing", b(c.timing)},
      {"divergence_factor", format_double(c.divergence_factor)},
      {"objective_samples", std::to_string(c.objective_samples)},
      {"max_exact_elements", std::to_string(c.max_exact_elements)},
  };
}

void apply_config_entry(SolverConfig& c, const std::string& key, const std::string& raw) {
  const std::string_view value = trim(raw);
  auto d = [&] { return parse_double(value, key); };
  auto u = [&] { return static_cast<std::size_t>(parse_uint(value, key)); };
  if (key == "algorithm") {
    static constexpr Algorithm opts[] = {Algorithm::itablesmd, Algorithm::smartcpd};
    c.algorithm = parse_enum(value, opts, key);
  } else if (key == "rank") c.rank = u();
  else if (key == "loss") c.loss.kind = parse_loss_kind(value);
  else if (key == "loss_epsilon") c.loss.epsilon = d();
  else if (key == "generator") c.generator.kind = parse_generator_kind(value);
  else if (key == "entropy_floor") c.generator.entropy_floor = d();
  else if (key == "regularizers") {
    c.regularizers.clear();
    std::string_view rest = value;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      c.regularizers.push_back(decode_regularizer(rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  } else if (key == "estimator") c.estimator = parse_estimator_kind(value);
  else if (key == "batch") c.batch = u();
  else if (key == "sarah_p") c.sarah_p = d();
  else if (key == "eta") c.eta = d();
  else if (key == "stepsize") {
    static constexpr StepsizeRule opts[] = {StepsizeRule::constant, StepsizeRule::adaptive};
    c.stepsize = parse_enum(value, opts, key);
  } else if (key == "l_bar") c.l_bar = d();
  else if (key == "m2") c.m2 = d();
  else if (key == "gamma_bar") c.gamma_bar = d();
  else if (key == "weak_convexity") c.weak_convexity = d();
  else if (key == "c1") c.c1 = d();
  else if (key == "c2") c.c2 = d();
  else if (key == "extrapolation") {
    static constexpr ExtrapolationCheck opts[] = {ExtrapolationCheck::off, ExtrapolationCheck::backtrack};
    c.extrapolation = parse_enum(value, opts, key);
  } else if (key == "delta") c.delta = d();
  else if (key == "epsilon") c.epsilon = d();
  else if (key == "lower_curvature") c.lower_curvature = d();
  else if (key == "max_iters") c.max_iters = u();
  else if (key == "tol") c.tol = d();
  else if (key == "eval_every") c.eval_every = u();
  else if (key == "blocks") {
    static constexpr BlockSampling opts[] = {BlockSampling::uniform, BlockSampling::cyclic};
    c.blocks = parse_enum(value, opts, key);
  } else if (key == "init_max") c.init_max = d();
  else if (key == "seed") c.seed = parse_uint(value, key);
  else if (key == "record_gamma") c.record_gamma = parse_bool(value, key);
  else if (key == "lyapunov") c.lyapunov = parse_bool(value, key);
  else if (key == "lyapunov_tau") c.lyapunov_tau = d();
  else if (key == "lyapunov_v0") {
    if (value.empty()) c.lyapunov_v0.reset();
    else c.lyapunov_v0 = d();
  } else if (key == "timing") c.timing = parse_bool(value, key);
  else if (key == "divergence_factor") c.divergence_factor = d();
  else if (key == "objective_samples") c.objective_samples = u();
  else if (key == "max_exact_elements") c.max_exact_elements = u();
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string config_hash(const SolverConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [key, value] : config_entries(config)) {
    feed(key);
    feed("=");
    feed(value);
    feed("\n");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

KruskalModel random_model(const TensorShape& shape, std::size_t rank, double max_entry, Rng& rng) {
  std::vector<Matrix> factors;
  for (std::size_t n = 0; n < shape.order(); ++n) {
    Matrix a(static_cast<Eigen::Index>(shape.dim(n)), static_cast<Eigen::Index>(rank));
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index r = 0; r < a.cols(); ++r) a(i, r) = max_entry * (1.0 - uniform01(rng));
    factors.push_back(std::move(a));
  }
  return KruskalModel(std::move(factors));
}

SolverRunState initialize_state(const SolverConfig& config, const ObservedTensor& tensor, const KruskalModel* init,
                                DerivativeFn derivative) {
  const TensorShape& shape = shape_of(tensor);
  config.validate(shape);
  Rng init_rng(mix_seed(config.seed, 0x1A));
  KruskalModel start = init ? *init : random_model(shape, config.rank, config.init_max, init_rng);
  if (!(start.shape() == shape)) throw ContractError("initial model shape does not match the tensor");
  if (start.rank() != config.rank) throw ContractError("initial model rank does not match the config");
  check_feasible(config.loss, start);
  if (config.generator.kind == GeneratorKind::negative_entropy && !(start.min_entry() > 0.0))
    throw DomainError("negative-entropy generator needs a strictly positive initialization");

  EstimatorOptions opts;
  opts.kind = config.estimator;
  opts.sarah_p = config.sarah_p;
  opts.batch = config.resolved_batch();
  opts.seed = config.seed;
  EstimatorState estimator(opts);
  estimator.initialize(tensor, start, config.loss, derivative);

  SolverRunState state{start,
                       start,
                       start,
                       std::move(estimator),
                       0,
                       Rng(mix_seed(config.seed, 0x5E)),
                       config.eta,
                       std::numeric_limits<double>::infinity(),
                       0,
                       0.0,
                       0.0,
                       0.0,
                       0.0,
                       std::vector<std::optional<double>>(shape.order())};
  return state;
}

double extrapolation_guard(const SolverRunState& state, const SolverConfig& config, std::size_t mode, double beta) {
  if (config.extrapolation == ExtrapolationCheck::off) return beta;
  const Matrix& a = state.current.factor(mode);
  const Matrix& a_prev = state.previous.factor(mode);
  const Matrix momentum = a - a_prev;
  const double bound = (config.delta - config.epsilon) / (1.0 + config.lower_curvature * state.eta) *
                       bregman_div(config.generator, a_prev, a);
  const RegularizerSpec reg = config.regularizer(mode);
  double trial = beta;
  for (int i = 0; i <= kGuardHalvings; ++i) {
    if (trial == 0.0) return 0.0;
    Matrix point = a + trial * momentum;
    project_point(config, reg, point);
    if (bregman_div(config.generator, a, point) <= bound) return trial;
    trial *= 0.5;
  }
  return 0.0;
}

double next_stepsize(const SolverConfig& config, double previous_eta, double alpha, double beta) {
  if (config.stepsize == StepsizeRule::constant) return config.eta;
  double eta = std::min(previous_eta, 1.0 / config.l_bar);
  const double denom = config.weak_convexity + 2.0 * config.gamma_bar;
  if (denom > 0.0) eta = std::min(eta, (1.0 - config.delta - 2.0 * std::abs(alpha - beta) * config.m2) / denom);
  return eta;
}

void itablesmd_step(SolverRunState& state, const SolverConfig& config, const ObservedTensor& tensor,
                    DerivativeFn derivative) {
  step_impl(state, config, tensor, derivative, true);
}

void smartcpd_step(SolverRunState& state, const SolverConfig& config, const ObservedTensor& tensor,
                   DerivativeFn derivative) {
  step_impl(state, config, tensor, derivative, false);
}

RunResult run(const SolverConfig& config, const ObservedTensor& tensor, const KruskalModel* truth,
              const KruskalModel* init, DerivativeFn derivative) {
  const TensorShape& shape = shape_of(tensor);
  config.validate(shape);
  check_data(config.loss, tensor);
  if (truth && (!(truth->shape() == shape) || truth->rank() != config.rank))
    throw ContractError("planted model does not match the tensor shape and rank");

  const auto started = std::chrono::steady_clock::now();
  SolverRunState state = initialize_state(config, tensor, init, derivative);

  IterationTrace trace;
  trace.order = shape.order();
  trace.metadata["config_hash"] = config_hash(config);
  trace.metadata["seed"] = std::to_string(config.seed);
  trace.metadata["algorithm"] = std::string(to_string(config.algorithm));
  if (config.extrapolation == ExtrapolationCheck::backtrack)
    trace.metadata["lower_curvature"] = "user-supplied " + format_double(config.lower_curvature);

  const bool record_lyapunov = config.lyapunov && config.stepsize == StepsizeRule::constant;
  if (config.lyapunov && !record_lyapunov)
    trace.metadata["warning"] = "Lyapunov record suppressed: it needs a constant stepsize";
  const bool record_gamma = gamma_enabled(config);

  ObjectiveOptions objective_opts;
  objective_opts.samples = config.objective_samples;
  objective_opts.max_exact_elements = config.max_exact_elements;
  objective_opts.seed = mix_seed(config.seed, 0x0B);

  LyapunovConstants constants{config.eta, config.weak_convexity, config.gamma_bar, config.lyapunov_tau,
                              config.epsilon, config.m2, config.lyapunov_v0.value_or(0.0)};
  bool mse_failed = false;

  auto evaluate = [&]() {
    IterationRecord rec;
    rec.iteration = state.iteration;
    rec.seconds = config.timing
                      ? std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()
                      : 0.0;
    const ObjectiveValue value = nre(config.loss, tensor, state.current, objective_opts);
    rec.nre = value.value;
    rec.nre_exact = value.exact;
    rec.eta = state.eta;
    if (truth) {
      try {
        const ModelMse m = model_mse(state.current, *truth);
        rec.mse_mean = m.mean;
        rec.mse_shared = m.shared_permutation;
        for (const auto& r : m.per_mode) rec.mse_modes.push_back(r.mse);
      } catch (const DomainError&) {
        mse_failed = true;
      }
    }
    if (record_gamma) {
      rec.gamma_modes = state.gamma;
      if (state.iteration > 0) rec.gamma_k = state.gamma[state.last_mode];
    }
    const double phi = value.value + regularizer_total(config, state.current);
    state.best_objective = std::min(state.best_objective, phi);
    if (record_lyapunov) {
      double gamma = 0.0;
      if (config.estimator != EstimatorKind::full && state.iteration > 0) gamma = state.gamma[state.last_mode].value_or(0.0);
      const LyapunovRecord parts = lyapunov_from_movement(state.forward_div, state.backward_div, phi, gamma,
                                                          state.last_alpha, state.last_beta, constants);
      rec.lyapunov = parts.value;
      rec.lyapunov_parts = parts;
    }
    return rec;
  };

  trace.records.push_back(evaluate());
  const double initial = trace.records.front().nre;
  const double limit = config.divergence_factor * std::max(std::abs(initial), 1e-12);
  const std::size_t cadence = config.resolved_eval_every(shape);

  RunResult result{IterationTrace{}, state.current, StopReason::max_iterations, 0};
  auto diverged = [&](const std::string& what) {
    trace.metadata["stop_reason"] = "diverged";
    trace.metadata["iterations"] = std::to_string(state.iteration);
    trace.metadata["error"] = what;
    return RunDiverged(what, std::move(trace));
  };
  std::size_t quiet = 0;
  for (std::size_t t = 1; t <= config.max_iters; ++t) {
    try {
      if (config.algorithm == Algorithm::smartcpd) smartcpd_step(state, config, tensor, derivative);
      else itablesmd_step(state, config, tensor, derivative);
    } catch (const DivergenceError& e) {
      throw diverged(e.what());
    }
    if (t % cadence != 0 && t != config.max_iters) continue;
    IterationRecord rec = evaluate();
    if (!std::isfinite(rec.nre) || rec.nre > limit)
      throw diverged("objective " + format_double(rec.nre) + " at iteration " + std::to_string(t) + " exceeds " +
                     format_double(config.divergence_factor) + " x initial " + format_double(initial));
    const double prev = trace.records.back().nre;
    const double change = std::abs(rec.nre - prev) / std::max(1.0, std::abs(prev));
    trace.records.push_back(std::move(rec));
    quiet = change < config.tol ? quiet + 1 : 0;
    if (quiet >= 2) {
      result.reason = StopReason::converged;
      break;
    }
  }

  if (record_lyapunov && !config.lyapunov_v0) {
    const double shift = config.eta * state.best_objective;
    for (auto& rec : trace.records) {
      *rec.lyapunov -= shift;
      rec.lyapunov_parts->objective_term -= shift;
    }
    trace.metadata["lyapunov_v0"] = format_double(state.best_objective);
  }
  if (mse_failed) trace.metadata["warning_mse"] = "MSE skipped where an estimate column had zero norm";
  trace.metadata["stop_reason"] = result.reason == StopReason::converged ? "converged" : "max_iterations";
  trace.metadata["iterations"] = std::to_string(state.iteration);
  result.iterations = state.iteration;
  result.model = state.current;
  result.trace = std::move(trace);
  return result;
}

double gaussian_block_curvature(const KruskalModel& model, std::size_t mode) {
  if (mode >= model.order()) throw IndexError("mode out of range");
  const auto r = static_cast<Eigen::Index>(model.rank());
  Matrix gram = Matrix::Ones(r, r);
  for (std::size_t m = 0; m < model.order(); ++m) {
    if (m == mode) continue;
    gram = gram.cwiseProduct(model.factor(m).transpose() * model.factor(m));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff() / static_cast<double>(model.shape().total());
}

}  // namespace gcpmd
