#include "gcpmd/experiment.hpp"

#include "gcpmd/errors.hpp"
#include "gcpmd/format.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace gcpmd {

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

template <class T>
std::vector<T> split_numbers(std::string_view text, std::string_view what) {
  std::vector<T> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(static_cast<T>(parse_uint(text.substr(0, comma), what)));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

KeyValues RunManifest::to_key_values() const {
  KeyValues kv;
  kv.emplace_back("command", command);
  kv.emplace_back("input", input);
  kv.emplace_back("truth", truth);
  kv.emplace_back("trace", trace);
  kv.emplace_back("trace_format", trace_format);
  kv.emplace_back("model", model);
  std::string seed_list;
  for (auto s : seeds) seed_list += (seed_list.empty() ? "" : ",") + std::to_string(s);
  kv.emplace_back("seeds", seed_list);
  if (synthetic) {
    kv.emplace_back("synthetic.shape", join_sizes(synthetic->shape));
    kv.emplace_back("synthetic.rank", std::to_string(synthetic->rank));
    kv.emplace_back("synthetic.distribution", std::string(to_string(synthetic->distribution)));
    kv.emplace_back("synthetic.sigma", format_double(synthetic->sigma));
    kv.emplace_back("synthetic.a_max", format_double(synthetic->a_max));
    kv.emplace_back("synthetic.seed", std::to_string(synthetic->seed));
    kv.emplace_back("synthetic.gamma_parameterization", "shape 1, scale = model entry");
  }
  for (auto& [k, v] : config_entries(config)) kv.emplace_back("solver." + k, v);
  return kv;
}

RunManifest RunManifest::from_key_values(const KeyValues& entries) {
  RunManifest m;
  for (const auto& [key, value] : entries) {
    if (key.starts_with("solver.")) {
      apply_config_entry(m.config, key.substr(7), value);
    } else if (key.starts_with("synthetic.")) {
      if (!m.synthetic) m.synthetic.emplace();
      const std::string sub = key.substr(10);
      if (sub == "shape") m.synthetic->shape = split_numbers<std::size_t>(value, key);
      else if (sub == "rank") m.synthetic->rank = parse_uint(value, key);
      else if (sub == "distribution") m.synthetic->distribution = parse_distribution(value);
      else if (sub == "sigma") m.synthetic->sigma = parse_double(value, key);
      else if (sub == "a_max") m.synthetic->a_max = parse_double(value, key);
      else if (sub == "seed") m.synthetic->seed = parse_uint(value, key);
      else if (sub == "gamma_parameterization") continue;
      else throw ConfigError("unknown manifest key '" + key + "'");
    } else if (key == "command") m.command = value;
    else if (key == "input") m.input = value;
    else if (key == "truth") m.truth = value;
    else if (key == "trace") m.trace = value;
    else if (key == "trace_format") m.trace_format = value;
    else if (key == "model") m.model = value;
    else if (key == "seeds") m.seeds = split_numbers<std::uint64_t>(value, key);
    else throw ConfigError("unknown manifest key '" + key + "'");
  }
  return m;
}

void embed_manifest(IterationTrace& trace, const RunManifest& manifest) {
  for (const auto& [k, v] : manifest.to_key_values()) trace.metadata["manifest." + k] = v;
}

MethodSpec parse_method(std::string_view name) {
  const auto dash = name.find('-');
  if (dash == std::string_view::npos)
    throw ConfigError("method '" + std::string(name) + "' should look like itablesmd-saga or smartcpd-sgd");
  MethodSpec m;
  m.name = std::string(name);
  const std::string_view algo = name.substr(0, dash);
  if (algo == "itablesmd") m.algorithm = Algorithm::itablesmd;
  else if (algo == "smartcpd") m.algorithm = Algorithm::smartcpd;
  else throw ConfigError("unknown algorithm '" + std::string(algo) + "' (expected itablesmd or smartcpd)");
  m.estimator = parse_estimator_kind(name.substr(dash + 1));
  return m;
}

SolverConfig configure_method(SolverConfig base, const MethodSpec& method) {
  base.algorithm = method.algorithm;
  base.estimator = method.estimator;
  return base;
}

std::optional<std::size_t> iterations_to_threshold(const IterationTrace& trace, double threshold) {
  for (const auto& rec : trace.records)
    if (rec.nre <= threshold) return rec.iteration;
  return std::nullopt;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

CompareResult compare(const SolverConfig& base, const ObservedTensor& tensor, const KruskalModel* truth,
                      const std::vector<MethodSpec>& methods, const std::vector<std::uint64_t>& seeds,
                      double threshold) {
  if (methods.empty() || seeds.empty()) throw ConfigError("compare needs at least one method and one seed");
  CompareResult result;
  result.threshold = threshold;
  for (const auto& method : methods) {
    std::vector<double> iters, nres, mses;
    CompareRow row;
    row.method = method.name;
    for (auto seed : seeds) {
      SolverConfig cfg = configure_method(base, method);
      cfg.seed = seed;
      CompareCell cell;
      cell.method = method.name;
      cell.seed = seed;
      IterationTrace trace;
      try {
        trace = run(cfg, tensor, truth).trace;
      } catch (const RunDiverged& e) {
        trace = e.trace();
        cell.diverged = true;
        cell.error = e.what();
        ++row.diverged;
      }
      cell.iterations = iterations_to_threshold(trace, threshold);
      cell.final_nre = trace.records.back().nre;
      cell.final_mse = trace.records.back().mse_mean;
      iters.push_back(cell.iterations ? static_cast<double>(*cell.iterations) : std::numeric_limits<double>::infinity());
      nres.push_back(cell.final_nre);
      if (cell.final_mse) mses.push_back(*cell.final_mse);
      row.reached += cell.iterations ? 1 : 0;
      ++row.runs;
      result.cells.push_back(cell);
    }
    const double mi = median(iters);
    if (std::isfinite(mi)) row.median_iterations = mi;
    row.median_final_nre = median(nres);
    if (mses.size() == seeds.size()) row.median_final_mse = median(mses);
    result.rows.push_back(row);
  }
  return result;
}

void write_compare_csv(std::ostream& out, const CompareResult& result) {
  out << "method,runs,reached,diverged,median_iterations,median_final_nre,median_final_mse\n";
  for (const auto& row : result.rows) {
    out << row.method << ',' << row.runs << ',' << row.reached << ',' << row.diverged << ','
        << (row.median_iterations ? format_double(*row.median_iterations) : std::string("budget")) << ','
        << format_double(row.median_final_nre) << ','
        << (row.median_final_mse ? format_double(*row.median_final_mse) : std::string()) << '\n';
  }
}

}  // namespace gcpmd
