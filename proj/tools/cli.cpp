#include "cli.hpp"

#include "gcpmd/data.hpp"
#include "gcpmd/errors.hpp"
#include "gcpmd/experiment.hpp"
#include "gcpmd/format.hpp"
#include "gcpmd/verify.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

namespace gcpmd::cli {

namespace {

// Flag name -> solver config key.
struct SolverFlag {
  const char* flag;
  const char* key;
  const char* help;
};

const SolverFlag kSolverFlags[] = {
    {"--algorithm", "algorithm", "itablesmd | smartcpd"},
    {"--loss", "loss", "gaussian | gamma | poisson-identity | poisson-log | bernoulli-odds | bernoulli-logit"},
    {"--loss-epsilon", "loss_epsilon", "guard added inside log and 1/m terms"},
    {"--generator", "generator", "squared-euclidean | negative-entropy (default: entropy for nonnegative losses)"},
    {"--entropy-floor", "entropy_floor", "lower bound for entropy iterates"},
    {"--regularizer", "regularizers", "kind[:weight][:nonnegative], comma-separated per mode"},
    {"--estimator", "estimator", "full | sgd | saga | sarah"},
    {"--rank", "rank", "CP rank R"},
    {"--batch", "batch", "fibers per step (default 2R)"},
    {"--sarah-p", "sarah_p", "SARAH restart parameter (default ceil(J_n/B))"},
    {"--eta", "eta", "stepsize (default 0.1 gamma, 0.2 poisson/bernoulli, 0.1 otherwise)"},
    {"--stepsize", "stepsize", "constant | adaptive"},
    {"--lbar", "l_bar", "upper smoothness estimate for the adaptive rule"},
    {"--m2", "m2", "Lipschitz estimate of the generator gradient"},
    {"--gamma-bar", "gamma_bar", "variance-reduction constant estimate"},
    {"--weak-convexity", "weak_convexity", "weak convexity modulus of the regularizer"},
    {"--c1", "c1", "inertial schedule coefficient for alpha_k"},
    {"--c2", "c2", "inertial schedule coefficient for beta_k"},
    {"--extrapolation", "extrapolation", "off | backtrack"},
    {"--delta", "delta", "extrapolation constant delta"},
    {"--epsilon", "epsilon", "extrapolation constant epsilon"},
    {"--lower-curvature", "lower_curvature", "stand-in for the lower curvature constant"},
    {"--iters", "max_iters", "iteration budget"},
    {"--tol", "tol", "relative NRE change tolerance"},
    {"--eval-every", "eval_every", "iterations between evaluations (default ceil(max J_n / B))"},
    {"--blocks", "blocks", "uniform | cyclic"},
    {"--init-max", "init_max", "initial factors uniform on (0, init-max]"},
    {"--seed", "seed", "RNG seed"},
    {"--lyapunov-tau", "lyapunov_tau", "tau in the Lyapunov Gamma term"},
    {"--lyapunov-v0", "lyapunov_v0", "lower bound V0 (default: best objective seen)"},
    {"--samples", "objective_samples", "samples for the estimated objective on large tensors"},
    {"--max-exact", "max_exact_elements", "largest tensor evaluated exactly"},
};

const std::set<std::string> kIoKeys = {"input", "truth", "trace", "trace_format", "model", "seeds", "methods",
                                       "threshold", "out", "command"};

struct SolverFlags {
  std::map<std::string, std::string> values;  // key -> text
  bool record_gamma = false;
  bool lyapunov = false;
  bool no_timing = false;
  std::string config;
  std::vector<CLI::Option*> options;
};

void add_solver_flags(CLI::App& app, SolverFlags& flags) {
  for (const auto& f : kSolverFlags) flags.options.push_back(app.add_option(f.flag, flags.values[f.key], f.help));
  app.add_flag("--record-gamma", flags.record_gamma, "measure Gamma_k every step");
  app.add_flag("--lyapunov", flags.lyapunov, "record the Lyapunov diagnostic (constant stepsize only)");
  app.add_flag("--no-timing", flags.no_timing, "write zero seconds so traces replay byte-identically");
  app.add_option("--config,--manifest", flags.config, "key=value file; flags override it");
}

struct Resolved {
  RunManifest manifest;
  std::set<std::string> explicit_keys;
  std::map<std::string, std::string> io;
};

// Config file first, then flags.
Resolved resolve(const SolverFlags& flags) {
  Resolved r;
  if (!flags.config.empty()) {
    KeyValues synthetic;
    for (const auto& [key, value] : read_key_values(std::filesystem::path(flags.config))) {
      if (kIoKeys.contains(key)) {
        r.io[key] = value;
      } else if (key.starts_with("synthetic.")) {
        synthetic.emplace_back(key, value);
      } else {
        const std::string k = key.starts_with("solver.") ? key.substr(7) : key;
        apply_config_entry(r.manifest.config, k, value);
        r.explicit_keys.insert(k);
      }
    }
    if (!synthetic.empty()) r.manifest.synthetic = RunManifest::from_key_values(synthetic).synthetic;
  }
  for (std::size_t i = 0; i < std::size(kSolverFlags); ++i) {
    if (flags.options[i]->count() == 0) continue;
    apply_config_entry(r.manifest.config, kSolverFlags[i].key, flags.values.at(kSolverFlags[i].key));
    r.explicit_keys.insert(kSolverFlags[i].key);
  }
  if (flags.record_gamma) r.manifest.config.record_gamma = true;
  if (flags.lyapunov) r.manifest.config.lyapunov = true;
  if (flags.no_timing) r.manifest.config.timing = false;
  return r;
}

// Fills loss-dependent defaults and resolves automatic sizes against the data.
void finalize_config(SolverConfig& cfg, const std::set<std::string>& explicit_keys, const TensorShape& shape) {
  const bool nonneg = cfg.loss.constraint() == ConstraintRegime::nonnegative;
  if (!explicit_keys.contains("generator"))
    cfg.generator.kind = nonneg ? GeneratorKind::negative_entropy : GeneratorKind::squared_euclidean;
  if (!explicit_keys.contains("eta")) {
    switch (cfg.loss.kind) {
      case LossKind::poisson_identity:
      case LossKind::poisson_log:
      case LossKind::bernoulli_odds:
      case LossKind::bernoulli_logit: cfg.eta = 0.2; break;
      default: cfg.eta = 0.1; break;
    }
  }
  cfg.batch = cfg.resolved_batch();
  cfg.eval_every = cfg.resolved_eval_every(shape);
  if (cfg.regularizers.empty()) cfg.regularizers = {cfg.regularizer(0)};
}

std::string pick(const std::string& flag, const std::map<std::string, std::string>& io, const std::string& key,
                 const std::string& fallback = {}) {
  if (!flag.empty()) return flag;
  if (auto it = io.find(key); it != io.end()) return it->second;
  return fallback;
}

ObservedTensor load_tensor(const std::string& path) {
  SparseTensor sparse = read_tns(std::filesystem::path(path));
  if (sparse.nnz() == sparse.shape().total()) return sparse.to_dense();
  return sparse;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::string_view rest = text;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    seeds.push_back(parse_uint(rest.substr(0, comma), "seeds"));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return seeds;
}

std::vector<std::size_t> parse_shape(const std::string& text) {
  std::vector<std::size_t> dims;
  for (auto s : parse_seed_list(text)) dims.push_back(static_cast<std::size_t>(s));
  return dims;
}

TraceFormat trace_format_for(const std::string& format, const std::string& path) {
  if (format == "json") return TraceFormat::json;
  if (format == "csv") return TraceFormat::csv;
  if (!format.empty()) throw ConfigError("unknown trace format '" + format + "' (expected csv or json)");
  return path.ends_with(".json") ? TraceFormat::json : TraceFormat::csv;
}

int cmd_synthesize(const std::vector<std::size_t>& shape, std::size_t rank, const std::string& dist, double sigma,
                   double a_max, std::uint64_t seed, const std::string& prefix, std::ostream& out) {
  RunManifest m;
  m.command = "synthesize";
  SyntheticSpec spec;
  spec.shape = shape;
  spec.rank = rank;
  spec.distribution = parse_distribution(dist);
  spec.sigma = sigma;
  spec.a_max = a_max;
  spec.seed = seed;
  const SyntheticInstance inst = generate(spec);
  m.synthetic = spec;
  m.input = prefix + ".tns";
  m.truth = prefix + ".truth";
  m.config.rank = rank;
  m.config.loss.kind = matching_loss(spec.distribution);
  m.seeds = {seed};
  write_tns(std::filesystem::path(m.input), SparseTensor::from_dense(inst.tensor, true));
  write_factors(m.truth, inst.planted);
  KeyValues kv;
  for (auto& entry : m.to_key_values())
    if (!entry.first.starts_with("solver.") || entry.first == "solver.rank" || entry.first == "solver.loss")
      kv.push_back(entry);
  write_key_values(std::filesystem::path(prefix + ".manifest"), kv);
  write_key_values(out, kv);
  return ok;
}

int cmd_decompose(const SolverFlags& flags, const std::map<std::string, std::string>& io_flags, std::ostream& out) {
  Resolved r = resolve(flags);
  RunManifest& m = r.manifest;
  m.command = "decompose";
  m.input = pick(io_flags.at("input"), r.io, "input");
  if (m.input.empty()) throw ConfigError("decompose needs --input (or input= in the config)");
  m.truth = pick(io_flags.at("truth"), r.io, "truth");
  m.trace = pick(io_flags.at("trace"), r.io, "trace", "trace.csv");
  m.model = pick(io_flags.at("model"), r.io, "model", "model");
  const TraceFormat format = trace_format_for(pick(io_flags.at("format"), r.io, "trace_format"), m.trace);
  m.trace_format = format == TraceFormat::json ? "json" : "csv";

  const ObservedTensor tensor = load_tensor(m.input);
  finalize_config(m.config, r.explicit_keys, shape_of(tensor));
  m.seeds = {m.config.seed};
  std::optional<KruskalModel> truth;
  if (!m.truth.empty()) truth = read_factors(m.truth);

  RunResult result = [&] {
    try {
      return run(m.config, tensor, truth ? &*truth : nullptr);
    } catch (const RunDiverged& e) {
      // Keep what was recorded before the failure.
      IterationTrace partial = e.trace();
      embed_manifest(partial, m);
      write_trace(std::filesystem::path(m.trace), partial, format);
      write_key_values(std::filesystem::path(m.trace + ".manifest"), m.to_key_values());
      throw;
    }
  }();
  embed_manifest(result.trace, m);
  write_trace(std::filesystem::path(m.trace), result.trace, format);
  write_key_values(std::filesystem::path(m.trace + ".manifest"), m.to_key_values());
  write_factors(m.model, result.model);

  const auto& first = result.trace.records.front();
  const auto& last = result.trace.records.back();
  out << "iterations " << result.iterations << " ("
      << (result.reason == StopReason::converged ? "converged" : "budget") << ")\n";
  out << "nre " << format_double(first.nre) << " -> " << format_double(last.nre) << '\n';
  if (last.mse_mean) out << "mse_mean " << format_double(*last.mse_mean) << '\n';
  out << "trace " << m.trace << "\nmodel " << m.model << ".mode*.csv\n";
  return ok;
}

int cmd_compare(const SolverFlags& flags, const std::map<std::string, std::string>& io_flags, std::ostream& out) {
  Resolved r = resolve(flags);
  RunManifest& m = r.manifest;
  m.command = "compare";
  m.input = pick(io_flags.at("input"), r.io, "input");
  if (m.input.empty()) throw ConfigError("compare needs --input");
  m.truth = pick(io_flags.at("truth"), r.io, "truth");
  const std::string methods_text = pick(io_flags.at("methods"), r.io, "methods", "itablesmd-saga,smartcpd-sgd");
  m.seeds = parse_seed_list(pick(io_flags.at("seeds"), r.io, "seeds", "1,2,3,4,5"));
  const std::string threshold_text = pick(io_flags.at("threshold"), r.io, "threshold", "planted");
  const std::string out_path = pick(io_flags.at("out"), r.io, "out", "compare.csv");

  const ObservedTensor tensor = load_tensor(m.input);
  finalize_config(m.config, r.explicit_keys, shape_of(tensor));
  std::optional<KruskalModel> truth;
  if (!m.truth.empty()) truth = read_factors(m.truth);

  double threshold = 0.0;
  if (threshold_text == "planted") {
    if (!truth) throw ConfigError("--threshold planted needs --truth");
    threshold = objective(m.config.loss, tensor, *truth).value;
  } else {
    threshold = parse_double(threshold_text, "threshold");
  }
  std::vector<MethodSpec> methods;
  std::string_view rest = methods_text;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    methods.push_back(parse_method(trim(rest.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }

  const CompareResult result = compare(m.config, tensor, truth ? &*truth : nullptr, methods, m.seeds, threshold);
  std::ofstream file(out_path, std::ios::binary);
  if (!file) throw DataError("cannot open '" + out_path + "' for writing");
  write_compare_csv(file, result);
  if (!file.flush()) throw DataError("write to '" + out_path + "' failed");
  KeyValues kv = m.to_key_values();
  kv.emplace_back("methods", methods_text);
  kv.emplace_back("threshold", format_double(threshold));
  kv.emplace_back("out", out_path);
  write_key_values(std::filesystem::path(out_path + ".manifest"), kv);
  out << "threshold " << format_double(threshold) << '\n';
  for (const auto& cell : result.cells)
    if (cell.diverged) out << "diverged " << cell.method << " seed " << cell.seed << ": " << cell.error << '\n';
  write_compare_csv(out, result);
  return ok;
}

int cmd_verify(std::uint64_t seed, const std::vector<std::string>& suites, std::ostream& out) {
  VerifyOptions opts;
  opts.seed = seed;
  std::vector<CheckResult> results;
  for (const auto& s : suites.empty() ? verification_suites() : suites) {
    auto part = run_suite(s, opts);
    results.insert(results.end(), part.begin(), part.end());
  }
  std::size_t failed = 0;
  for (const auto& c : results) {
    out << (c.passed ? "[PASS] " : "[FAIL] ") << c.suite << " / " << c.name << "  error=" << format_double(c.error)
        << "  tol=" << format_double(c.tolerance) << '\n';
    failed += c.passed ? 0 : 1;
  }
  out << (results.size() - failed) << "/" << results.size() << " checks passed\n";
  return failed == 0 ? ok : numerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generalized CP decomposition by inertial block-randomized stochastic mirror descent", "gcpmd"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synthesize", "write a planted-model tensor and its factors");
  std::string shape_text, dist, prefix = "synthetic";
  std::size_t rank = 3;
  double sigma = 1.0, a_max = 0.5;
  std::uint64_t synth_seed = 0;
  synth->add_option("--shape", shape_text, "comma-separated mode sizes, e.g. 20,15,20")->required();
  synth->add_option("--rank", rank, "planted rank");
  synth->add_option("--dist", dist, "gamma | poisson | bernoulli-odds | gaussian")->required();
  synth->add_option("--sigma", sigma, "gaussian noise level");
  synth->add_option("--amax", a_max, "planted factors uniform on (0, amax]");
  synth->add_option("--seed", synth_seed, "RNG seed");
  synth->add_option("--out", prefix, "output prefix: <out>.tns, <out>.truth.mode<n>.csv, <out>.manifest");

  std::map<std::string, std::string> dec_io{{"input", ""}, {"truth", ""}, {"trace", ""}, {"model", ""}, {"format", ""}};
  SolverFlags dec_flags;
  auto* dec = app.add_subcommand("decompose", "fit a CP model and write its trace and factors");
  dec->add_option("--input", dec_io["input"], ".tns tensor");
  dec->add_option("--truth", dec_io["truth"], "planted factor prefix, enables MSE");
  dec->add_option("--trace", dec_io["trace"], "trace output (.csv or .json)");
  dec->add_option("--format", dec_io["format"], "csv | json (default from the trace extension)");
  dec->add_option("--model", dec_io["model"], "factor output prefix");
  add_solver_flags(*dec, dec_flags);

  std::map<std::string, std::string> cmp_io{{"input", ""}, {"truth", ""}, {"methods", ""},
                                            {"seeds", ""},  {"threshold", ""}, {"out", ""}};
  SolverFlags cmp_flags;
  auto* cmp = app.add_subcommand("compare", "run a method x seed grid and summarize");
  cmp->add_option("--input", cmp_io["input"], ".tns tensor");
  cmp->add_option("--truth", cmp_io["truth"], "planted factor prefix");
  cmp->add_option("--methods", cmp_io["methods"], "comma-separated, e.g. itablesmd-saga,smartcpd-sgd");
  cmp->add_option("--seeds", cmp_io["seeds"], "comma-separated seeds (default 1,2,3,4,5)");
  cmp->add_option("--threshold", cmp_io["threshold"], "NRE threshold or 'planted' (NRE of the truth)");
  cmp->add_option("--out", cmp_io["out"], "summary CSV path");
  add_solver_flags(*cmp, cmp_flags);

  auto* ver = app.add_subcommand("verify", "run the self-check suites");
  std::uint64_t ver_seed = 1;
  std::vector<std::string> suites;
  ver->add_option("--seed", ver_seed, "RNG seed");
  ver->add_option("--suite", suites, "gradient | prox | estimator | khatri-rao | mse (repeatable)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return ok;
    }
    err << "error: " << e.what() << '\n';
    return usage;
  }

  try {
    if (*synth) return cmd_synthesize(parse_shape(shape_text), rank, dist, sigma, a_max, synth_seed, prefix, out);
    if (*dec) return cmd_decompose(dec_flags, dec_io, out);
    if (*cmp) return cmd_compare(cmp_flags, cmp_io, out);
    if (*ver) return cmd_verify(ver_seed, suites, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return usage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return data;
  } catch (const IndexError& e) {
    err << "data error: " << e.what() << '\n';
    return data;
  } catch (const DomainError& e) {
    err << "data error: " << e.what() << '\n';
    return data;
  } catch (const DivergenceError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return numerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return numerical;
  }
  return usage;
}

}  // namespace gcpmd::cli
