#include "gcpmd/data.hpp"

#include "gcpmd/errors.hpp"
#include "gcpmd/format.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gcpmd {

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    const auto start = line.find_first_not_of(" \t\r", pos);
    if (start == std::string_view::npos) break;
    auto end = line.find_first_of(" \t\r", start);
    if (end == std::string_view::npos) end = line.size();
    out.push_back(line.substr(start, end - start));
    pos = end;
  }
  return out;
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

}  // namespace

std::string_view to_string(Distribution d) noexcept {
  switch (d) {
    case Distribution::gamma: return "gamma";
    case Distribution::poisson: return "poisson";
    case Distribution::bernoulli_odds: return "bernoulli-odds";
    case Distribution::gaussian: return "gaussian";
  }
  return "unknown";
}

Distribution parse_distribution(std::string_view name) {
  for (Distribution d : {Distribution::gamma, Distribution::poisson, Distribution::bernoulli_odds, Distribution::gaussian})
    if (name == to_string(d)) return d;
  throw ConfigError("unknown distribution '" + std::string(name) + "' (expected gamma, poisson, bernoulli-odds, gaussian)");
}

LossKind matching_loss(Distribution d) noexcept {
  switch (d) {
    case Distribution::gamma: return LossKind::gamma;
    case Distribution::poisson: return LossKind::poisson_identity;
    case Distribution::bernoulli_odds: return LossKind::bernoulli_odds;
    case Distribution::gaussian: return LossKind::gaussian;
  }
  return LossKind::gaussian;
}

void SyntheticSpec::validate() const {
  TensorShape{shape};
  if (rank == 0) throw ConfigError("rank must be >= 1");
  if (!(a_max > 0.0) || !std::isfinite(a_max)) throw ConfigError("a_max must be positive and finite");
  if (distribution == Distribution::gaussian && !(sigma >= 0.0 && std::isfinite(sigma)))
    throw ConfigError("gaussian sigma must be finite and >= 0");
}

std::uint64_t sample_poisson(double mean, Rng& rng) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) throw ConfigError("poisson mean must be finite and >= 0");
  // Knuth's product method on pieces of mean <= 10 (sums of Poissons are Poisson).
  std::uint64_t total = 0;
  double left = mean;
  while (left > 0.0) {
    const double piece = std::min(left, 10.0);
    left -= piece;
    const double limit = std::exp(-piece);
    double prod = 1.0 - uniform01(rng);
    while (prod > limit) {
      ++total;
      prod *= 1.0 - uniform01(rng);
    }
  }
  return total;
}

double sample_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double sample_entry(Distribution d, double m, double sigma, Rng& rng) {
  if (d != Distribution::gaussian && !(m >= 0.0))
    throw ConfigError(std::string(to_string(d)) + " data need a nonnegative model entry, got " + format_double(m));
  switch (d) {
    case Distribution::gamma: return -m * std::log(1.0 - uniform01(rng));
    case Distribution::poisson: return static_cast<double>(sample_poisson(m, rng));
    case Distribution::bernoulli_odds: return uniform01(rng) < m / (1.0 + m) ? 1.0 : 0.0;
    case Distribution::gaussian: return m + sigma * sample_normal(rng);
  }
  return 0.0;
}

DenseTensor sample_observations(Distribution d, const KruskalModel& model, double sigma, Rng& rng) {
  const DenseTensor mean = reconstruct(model);
  std::vector<double> values(mean.values().size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = sample_entry(d, mean.at_linear(i), sigma, rng);
  return DenseTensor(mean.shape(), std::move(values));
}

SyntheticInstance generate(const SyntheticSpec& spec) {
  spec.validate();
  const TensorShape shape(spec.shape);
  Rng factor_rng(mix_seed(spec.seed, 0xFA));
  KruskalModel planted = random_model(shape, spec.rank, spec.a_max, factor_rng);
  Rng noise_rng(mix_seed(spec.seed, 0xDA));
  DenseTensor tensor = sample_observations(spec.distribution, planted, spec.sigma, noise_rng);
  return {std::move(tensor), std::move(planted)};
}

SparseTensor read_tns(std::istream& in, const std::optional<TensorShape>& shape, bool implicit_zero) {
  std::optional<TensorShape> declared = shape;
  std::vector<SparseTensor::Entry> entries;
  std::vector<std::size_t> extent;
  std::size_t order = declared ? declared->order() : 0;
  std::string line;
  std::size_t lineno = 0;
  auto where = [&] { return "line " + std::to_string(lineno) + ": "; };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    if (text.front() == '#') {
      std::string_view body = trim(text.substr(1));
      if (body.starts_with("shape:") && !shape) {
        if (!entries.empty()) throw DataError(where() + "shape header after data lines");
        std::vector<std::size_t> dims;
        for (auto tok : split_ws(body.substr(6))) {
          std::size_t v = 0;
          const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
          if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size() || v == 0)
            throw DataError(where() + "bad shape header '" + std::string(body) + "'");
          dims.push_back(v);
        }
        try {
          declared = TensorShape(dims);
        } catch (const ConfigError& e) {
          throw DataError(where() + e.what());
        }
        order = declared->order();
      }
      continue;
    }
    const auto tokens = split_ws(text);
    if (tokens.size() < 3) throw DataError(where() + "expected at least two indices and a value");
    const std::size_t n = tokens.size() - 1;
    if (order == 0) order = n;
    if (n != order)
      throw DataError(where() + "expected " + std::to_string(order) + " indices, found " + std::to_string(n));
    SparseTensor::Entry entry;
    entry.index.resize(n);
    for (std::size_t m = 0; m < n; ++m) {
      const auto tok = tokens[m];
      std::size_t v = 0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec == std::errc::result_out_of_range) throw IndexError(where() + "index out of range");
      if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw DataError(where() + "malformed index '" + std::string(tok) + "'");
      if (v == 0) throw IndexError(where() + "index 0 in mode " + std::to_string(m + 1) + " (indices are 1-based)");
      if (declared && v > declared->dim(m))
        throw IndexError(where() + "index " + std::to_string(v) + " exceeds mode " + std::to_string(m + 1) +
                         " size " + std::to_string(declared->dim(m)));
      entry.index[m] = v - 1;
    }
    auto vt = tokens.back();
    if (!vt.empty() && vt.front() == '+') vt.remove_prefix(1);
    const auto res = std::from_chars(vt.data(), vt.data() + vt.size(), entry.value);
    if (res.ec != std::errc{} || res.ptr != vt.data() + vt.size() || !std::isfinite(entry.value))
      throw DataError(where() + "malformed value '" + std::string(tokens.back()) + "'");
    if (!declared) {
      extent.resize(n, 0);
      for (std::size_t m = 0; m < n; ++m) extent[m] = std::max(extent[m], entry.index[m] + 1);
    }
    entries.push_back(std::move(entry));
  }
  if (in.bad()) throw DataError("read error after line " + std::to_string(lineno));
  if (!declared) {
    if (entries.empty()) throw DataError("no data lines and no shape header");
    declared = TensorShape(extent);
  }
  return SparseTensor(*declared, std::move(entries), implicit_zero);
}

SparseTensor read_tns(const std::filesystem::path& path, const std::optional<TensorShape>& shape, bool implicit_zero) {
  auto in = open_in(path);
  try {
    return read_tns(in, shape, implicit_zero);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  } catch (const IndexError& e) {
    throw IndexError(path.string() + ": " + e.what());
  }
}

void write_tns(std::ostream& out, const SparseTensor& tensor) {
  out << "# shape:";
  for (std::size_t d : tensor.shape().dims()) out << ' ' << d;
  out << '\n';
  std::string line;
  for (std::size_t k = 0; k < tensor.nnz(); ++k) {
    line.clear();
    for (std::size_t i : tensor.index_of(k)) {
      line += std::to_string(i + 1);
      line += ' ';
    }
    line += format_double(tensor.value_of(k));
    line += '\n';
    out << line;
  }
}

void write_tns(const std::filesystem::path& path, const SparseTensor& tensor) {
  auto out = open_out(path);
  write_tns(out, tensor);
  finish(out, path);
}

std::filesystem::path factor_path(const std::filesystem::path& prefix, std::size_t mode) {
  return std::filesystem::path(prefix.string() + ".mode" + std::to_string(mode + 1) + ".csv");
}

void write_factors(const std::filesystem::path& prefix, const KruskalModel& model) {
  for (std::size_t n = 0; n < model.order(); ++n) {
    const auto path = factor_path(prefix, n);
    auto out = open_out(path);
    const Matrix& a = model.factor(n);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      for (Eigen::Index r = 0; r < a.cols(); ++r) out << (r ? "," : "") << format_double(a(i, r));
      out << '\n';
    }
    finish(out, path);
  }
}

KruskalModel read_factors(const std::filesystem::path& prefix) {
  std::vector<Matrix> factors;
  for (std::size_t n = 0; std::filesystem::exists(factor_path(prefix, n)); ++n) {
    const auto path = factor_path(prefix, n);
    auto in = open_in(path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      std::vector<double> row;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) {
        try {
          row.push_back(parse_double(cell, "factor entry"));
        } catch (const ConfigError& e) {
          throw DataError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
        }
      }
      if (!rows.empty() && row.size() != rows.front().size())
        throw DataError(path.string() + ": line " + std::to_string(lineno) + ": ragged row");
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(path.string() + ": empty factor file");
    Matrix a(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t r = 0; r < rows[i].size(); ++r) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) = rows[i][r];
    factors.push_back(std::move(a));
  }
  if (factors.empty()) throw DataError("no factor files found for prefix '" + prefix.string() + "'");
  try {
    return KruskalModel(std::move(factors));
  } catch (const std::exception& e) {
    throw DataError(prefix.string() + ": " + e.what());
  }
}

std::string trace_csv_header(std::size_t order) {
  std::string h = "iteration,seconds,nre,mse_mean";
  for (std::size_t n = 1; n <= order; ++n) h += ",mse_mode_" + std::to_string(n);
  h += ",lyapunov,gamma_k";
  return h;
}

void write_trace(std::ostream& out, const IterationTrace& trace, TraceFormat format) {
  if (format == TraceFormat::csv) {
    out << trace_csv_header(trace.order) << '\n';
    for (const auto& rec : trace.records) {
      out << rec.iteration << ',' << format_double(rec.seconds) << ',' << format_double(rec.nre) << ','
          << opt(rec.mse_mean);
      for (std::size_t n = 0; n < trace.order; ++n)
        out << ',' << (n < rec.mse_modes.size() ? format_double(rec.mse_modes[n]) : std::string());
      out << ',' << opt(rec.lyapunov) << ',' << opt(rec.gamma_k) << '\n';
    }
    return;
  }
  nlohmann::ordered_json doc;
  doc["order"] = trace.order;
  doc["metadata"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : trace.metadata) doc["metadata"][k] = v;
  doc["records"] = nlohmann::ordered_json::array();
  for (const auto& rec : trace.records) {
    nlohmann::ordered_json r;
    r["iteration"] = rec.iteration;
    r["seconds"] = rec.seconds;
    r["nre"] = rec.nre;
    r["nre_exact"] = rec.nre_exact;
    r["eta"] = rec.eta;
    r["mse_mean"] = opt_json(rec.mse_mean);
    r["mse_modes"] = rec.mse_modes;
    r["mse_shared"] = opt_json(rec.mse_shared);
    r["lyapunov"] = opt_json(rec.lyapunov);
    if (rec.lyapunov_parts) {
      r["lyapunov_parts"] = {{"objective", rec.lyapunov_parts->objective_term},
                             {"forward", rec.lyapunov_parts->forward_term},
                             {"backward", rec.lyapunov_parts->backward_term},
                             {"gamma", rec.lyapunov_parts->gamma_term}};
    } else {
      r["lyapunov_parts"] = nullptr;
    }
    r["gamma_k"] = opt_json(rec.gamma_k);
    nlohmann::ordered_json modes = nlohmann::ordered_json::array();
    for (const auto& g : rec.gamma_modes) modes.push_back(opt_json(g));
    r["gamma_modes"] = modes;
    doc["records"].push_back(std::move(r));
  }
  out << doc.dump(1) << '\n';
}

void write_trace(const std::filesystem::path& path, const IterationTrace& trace, TraceFormat format) {
  auto out = open_out(path);
  write_trace(out, trace, format);
  finish(out, path);
}

KeyValues read_key_values(std::istream& in) {
  KeyValues out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos || eq == 0)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + std::string(text) + "'");
    out.emplace_back(std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1))));
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return read_key_values(in);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_key_values(std::ostream& out, const KeyValues& entries) {
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
}

void write_key_values(const std::filesystem::path& path, const KeyValues& entries) {
  auto out = open_out(path);
  write_key_values(out, entries);
  finish(out, path);
}

}  // namespace gcpmd
