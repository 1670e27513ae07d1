#pragma once

#include "gcpmd/losses.hpp"
#include "gcpmd/random.hpp"
#include "gcpmd/solver.hpp"
#include "gcpmd/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gcpmd {

enum class Distribution { gamma, poisson, bernoulli_odds, gaussian };

std::string_view to_string(Distribution d) noexcept;
/// "gamma" | "poisson" | "bernoulli-odds" | "gaussian"
Distribution parse_distribution(std::string_view name);
/// Loss matched to the distribution (gamma, poisson-identity, bernoulli-odds, gaussian).
LossKind matching_loss(Distribution d) noexcept;

struct SyntheticSpec {
  std::vector<std::size_t> shape;
  std::size_t rank = 3;
  Distribution distribution = Distribution::gamma;
  double sigma = 1.0;  // gaussian noise level
  double a_max = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticInstance {
  DenseTensor tensor;
  KruskalModel planted;
};

/// Planted factors uniform on (0, a_max], then one independent draw per entry.
SyntheticInstance generate(const SyntheticSpec& spec);

/// One draw with mean parameter m:
///   gamma: shape 1, scale m;  poisson: mean m;  bernoulli-odds: P(1) = m / (1 + m);
///   gaussian: m + sigma N(0, 1).
/// Negative m for the nonnegative families throws ConfigError.
double sample_entry(Distribution d, double m, double sigma, Rng& rng);

/// Entry-wise draws around the model, in dense storage order.
DenseTensor sample_observations(Distribution d, const KruskalModel& model, double sigma, Rng& rng);

/// Portable Poisson draw (exact; sums pieces of mean <= 10).
std::uint64_t sample_poisson(double mean, Rng& rng);
double sample_normal(Rng& rng);

/// FROSTT-style text: '#' comment lines, an optional "# shape: I1 ... IN"
/// header, then lines of N 1-based indices and a value. Without a shape the
/// extent of each mode is its largest index. Malformed lines raise DataError
/// with the line number; index 0 or beyond the shape raises IndexError.
SparseTensor read_tns(std::istream& in, const std::optional<TensorShape>& shape = std::nullopt,
                      bool implicit_zero = true);
SparseTensor read_tns(const std::filesystem::path& path, const std::optional<TensorShape>& shape = std::nullopt,
                      bool implicit_zero = true);
/// Writes a shape header and every stored entry in linear order.
void write_tns(std::ostream& out, const SparseTensor& tensor);
void write_tns(const std::filesystem::path& path, const SparseTensor& tensor);

/// One CSV per mode: <prefix>.mode<n>.csv, n from 1, rows = I_n, columns = R.
void write_factors(const std::filesystem::path& prefix, const KruskalModel& model);
KruskalModel read_factors(const std::filesystem::path& prefix);
std::filesystem::path factor_path(const std::filesystem::path& prefix, std::size_t mode);

enum class TraceFormat { csv, json };

/// Header: iteration,seconds,nre,mse_mean,mse_mode_1..N,lyapunov,gamma_k.
/// Missing values are empty fields.
std::string trace_csv_header(std::size_t order);
void write_trace(std::ostream& out, const IterationTrace& trace, TraceFormat format);
void write_trace(const std::filesystem::path& path, const IterationTrace& trace, TraceFormat format);

/// Ordered key=value lines; '#' comments and blank lines skipped on read.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
KeyValues read_key_values(std::istream& in);
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(std::ostream& out, const KeyValues& entries);
void write_key_values(const std::filesystem::path& path, const KeyValues& entries);

}  // namespace gcpmd
