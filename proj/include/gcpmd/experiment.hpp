#pragma once

// Run manifests and the method x seed comparison grid behind the CLI.

#include "gcpmd/data.hpp"
#include "gcpmd/solver.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gcpmd {

struct RunManifest {
  std::string command;  // synthesize | decompose | compare
  SolverConfig config;
  std::optional<SyntheticSpec> synthetic;
  std::string input;         // .tns path
  std::string truth;         // planted factor prefix, optional
  std::string trace;         // output trace path
  std::string trace_format = "csv";
  std::string model;         // output factor prefix
  std::vector<std::uint64_t> seeds;

  /// Every field, config keys prefixed "solver.", synthetic keys "synthetic.".
  KeyValues to_key_values() const;
  static RunManifest from_key_values(const KeyValues& entries);
};

/// Copies the manifest into trace metadata under "manifest." keys.
void embed_manifest(IterationTrace& trace, const RunManifest& manifest);

/// "<algorithm>-<estimator>", e.g. itablesmd-saga, smartcpd-sgd.
struct MethodSpec {
  std::string name;
  Algorithm algorithm = Algorithm::itablesmd;
  EstimatorKind estimator = EstimatorKind::saga;
};

MethodSpec parse_method(std::string_view name);
SolverConfig configure_method(SolverConfig base, const MethodSpec& method);

/// First recorded iteration whose NRE is at or below the threshold.
std::optional<std::size_t> iterations_to_threshold(const IterationTrace& trace, double threshold);

struct CompareCell {
  std::string method;
  std::uint64_t seed = 0;
  std::optional<std::size_t> iterations;  // empty: threshold not reached in budget
  double final_nre = 0.0;  // last recorded value, also for diverged runs
  std::optional<double> final_mse;
  bool diverged = false;
  std::string error;
};

struct CompareRow {
  std::string method;
  std::optional<double> median_iterations;  // empty: "budget"
  double median_final_nre = 0.0;
  std::optional<double> median_final_mse;
  std::size_t reached = 0;
  std::size_t diverged = 0;
  std::size_t runs = 0;
};

struct CompareResult {
  double threshold = 0.0;
  std::vector<CompareCell> cells;
  std::vector<CompareRow> rows;
};

/// Runs every method on every seed (the seed replaces config.seed) and
/// summarizes with medians; runs that miss the threshold count as +inf.
/// A diverged run keeps its partial trace and counts as missed unless it
/// crossed the threshold before failing.
CompareResult compare(const SolverConfig& base, const ObservedTensor& tensor, const KruskalModel* truth,
                      const std::vector<MethodSpec>& methods, const std::vector<std::uint64_t>& seeds,
                      double threshold);

/// Columns: method,runs,reached,diverged,median_iterations,median_final_nre,median_final_mse.
void write_compare_csv(std::ostream& out, const CompareResult& result);

double median(std::vector<double> values);

}  // namespace gcpmd
