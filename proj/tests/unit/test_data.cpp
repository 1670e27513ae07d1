#include "helpers.hpp"

#include "gcpmd/data.hpp"
#include "gcpmd/errors.hpp"
#include "gcpmd/format.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <filesystem>
#include <set>
#include <sstream>

using namespace gcpmd;
using namespace gcpmd::test;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "gcpmd_test_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

SparseTensor random_sparse(Rng& rng, const std::vector<std::size_t>& dims, std::size_t count) {
  const std::size_t total = total_of(dims);
  std::vector<SparseTensor::Entry> entries;
  for (std::uint64_t linear : sample_without_replacement(rng, total, count)) {
    const auto idx = decode(static_cast<std::size_t>(linear), dims);
    SparseTensor::Entry e;
    e.index = MultiIndex(idx.begin(), idx.end());
    e.value = (uniform01(rng) - 0.5) * std::pow(10.0, static_cast<double>(uniform_below(rng, 9)) - 4.0);
    entries.push_back(e);
  }
  return SparseTensor(TensorShape(dims), std::move(entries));
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

IterationTrace sample_trace() {
  IterationTrace t;
  t.order = 3;
  t.metadata["loss"] = "gamma";
  for (std::size_t i = 0; i < 4; ++i) {
    IterationRecord r;
    r.iteration = 10 * i;
    r.seconds = 0.125 * static_cast<double>(i);
    r.nre = 1.0 / 3.0 + static_cast<double>(i);
    if (i != 1) {
      r.mse_mean = 0.1 / (1.0 + static_cast<double>(i));
      r.mse_modes = {0.01 * static_cast<double>(i), 0.2, 1e-17};
    }
    if (i >= 2) r.lyapunov = -2.0 / 7.0;
    if (i != 0) r.gamma_k = 3e-5 * static_cast<double>(i);
    t.records.push_back(r);
  }
  return t;
}

}  // namespace

TEST(Tns, SingleEntryWithShape) {
  std::istringstream in("1 1 1 3.0\n");
  const SparseTensor t = read_tns(in, TensorShape({2, 2, 2}));
  ASSERT_EQ(t.nnz(), 1u);
  EXPECT_EQ(t.value_of(0), 3.0);
  EXPECT_EQ(t.index_of(0), (MultiIndex{0, 0, 0}));
}

TEST(Tns, ZeroIndexRejected) {
  std::istringstream in("0 1 1 3.0\n");
  EXPECT_THROW(read_tns(in, TensorShape({2, 2, 2})), IndexError);
}

TEST(Tns, OutOfBoundsRejected) {
  std::istringstream in("1 3 1 3.0\n");
  EXPECT_THROW(read_tns(in, TensorShape({2, 2, 2})), IndexError);
}

TEST(Tns, MalformedLineReportsLineNumber) {
  std::istringstream in("# comment\n1 1 1 2.0\n1 2 x 1.0\n");
  try {
    read_tns(in);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  std::istringstream ragged("1 1 1 2.0\n1 2 1.0\n");
  EXPECT_THROW(read_tns(ragged), DataError);
}

TEST(Tns, ShapeHeaderAndInferredExtent) {
  std::istringstream with_header("# shape: 4 5 6\n2 3 4 1.5\n");
  EXPECT_EQ(read_tns(with_header).shape(), TensorShape({4, 5, 6}));
  std::istringstream without("2 3 4 1.5\n1 5 1 2\n");
  EXPECT_EQ(read_tns(without).shape(), TensorShape({2, 5, 4}));
}

TEST(Tns, RoundTripFiftyEntries) {
  Rng rng(1);
  const SparseTensor t = random_sparse(rng, {7, 9, 5}, 50);
  std::stringstream buf;
  write_tns(buf, t);
  const SparseTensor back = read_tns(buf);
  EXPECT_EQ(back.shape(), t.shape());
  ASSERT_EQ(back.nnz(), t.nnz());
  std::set<std::pair<MultiIndex, double>> a, b;
  for (const auto& e : t.entries()) a.insert({e.index, e.value});
  for (const auto& e : back.entries()) b.insert({e.index, e.value});
  EXPECT_EQ(a, b);
}

TEST(Tns, FileRoundTripFourModes) {
  Rng rng(2);
  const SparseTensor t = random_sparse(rng, {3, 4, 5, 6}, 200);
  const auto path = scratch("four.tns");
  write_tns(path, t);
  const SparseTensor back = read_tns(path);
  ASSERT_EQ(back.nnz(), t.nnz());
  for (std::size_t k = 0; k < t.nnz(); ++k) {
    const MultiIndex idx = t.index_of(k);
    EXPECT_EQ(back(std::span<const std::size_t>(idx.data(), idx.size())), t.value_of(k));
  }
  EXPECT_THROW(read_tns(scratch("missing.tns")), DataError);
}

TEST(Generate, DeterministicPerSeed) {
  SyntheticSpec s;
  s.shape = {6, 5, 4};
  s.seed = 11;
  const SyntheticInstance a = generate(s), b = generate(s);
  EXPECT_TRUE(std::equal(a.tensor.values().begin(), a.tensor.values().end(), b.tensor.values().begin()));
  EXPECT_TRUE(a.planted == b.planted);
  s.seed = 12;
  const SyntheticInstance c = generate(s);
  EXPECT_FALSE(std::equal(a.tensor.values().begin(), a.tensor.values().end(), c.tensor.values().begin()));
}

TEST(Generate, PlantedFactorsInRange) {
  SyntheticSpec s;
  s.shape = {20, 15, 20};
  s.a_max = 0.5;
  s.distribution = Distribution::poisson;
  const SyntheticInstance inst = generate(s);
  EXPECT_EQ(inst.tensor.values().size(), 6000u);
  for (const auto& f : inst.planted.factors()) {
    EXPECT_GT(f.minCoeff(), 0.0);
    EXPECT_LE(f.maxCoeff(), 0.5);
  }
  for (double x : inst.tensor.values()) EXPECT_EQ(x, std::floor(x));
}

TEST(Generate, BernoulliZeroModelGivesZeros) {
  Rng rng(3);
  const KruskalModel zero = KruskalModel::constant(TensorShape({4, 3, 2}), 2, 0.0);
  const DenseTensor t = sample_observations(Distribution::bernoulli_odds, zero, 1.0, rng);
  for (double x : t.values()) EXPECT_EQ(x, 0.0);
}

TEST(Generate, NegativeMeanRejected) {
  Rng rng(4);
  EXPECT_THROW(sample_entry(Distribution::gamma, -0.5, 1.0, rng), ConfigError);
  EXPECT_THROW(sample_entry(Distribution::poisson, -0.5, 1.0, rng), ConfigError);
  EXPECT_NO_THROW(sample_entry(Distribution::gaussian, -0.5, 1.0, rng));
  SyntheticSpec s;
  s.shape = {3, 3};
  s.a_max = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

// Empirical means over 1e5 draws within 4 standard errors of the documented
// parameterization.
TEST(GenerateProperty, MonteCarloMeans) {
  struct Case {
    Distribution d;
    double m;
    double mean;
    double variance;
  };
  const Case cases[] = {
      {Distribution::poisson, 0.37, 0.37, 0.37},
      {Distribution::poisson, 23.5, 23.5, 23.5},
      {Distribution::gamma, 0.8, 0.8, 0.64},
      {Distribution::bernoulli_odds, 1.5, 0.6, 0.24},
      {Distribution::gaussian, -1.2, -1.2, 0.09},
  };
  Rng rng(5);
  const int draws = 100000;
  for (const auto& c : cases) {
    double sum = 0.0;
    for (int i = 0; i < draws; ++i) sum += sample_entry(c.d, c.m, 0.3, rng);
    const double se = std::sqrt(c.variance / draws);
    EXPECT_LE(std::abs(sum / draws - c.mean), 4.0 * se) << to_string(c.d) << " m=" << c.m;
  }
}

TEST(GenerateProperty, PoissonVarianceMatchesMean) {
  Rng rng(6);
  const int draws = 100000;
  const double m = 4.2;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double x = static_cast<double>(sample_poisson(m, rng));
    s1 += x;
    s2 += x * x;
  }
  const double var = s2 / draws - (s1 / draws) * (s1 / draws);
  // Var of the sample variance for Poisson is about (m + 2 m^2) / n.
  EXPECT_LE(std::abs(var - m), 4.0 * std::sqrt((m + 2.0 * m * m) / draws));
}

TEST(Distribution, NamesAndMatchingLoss) {
  for (Distribution d : {Distribution::gamma, Distribution::poisson, Distribution::bernoulli_odds, Distribution::gaussian})
    EXPECT_EQ(parse_distribution(to_string(d)), d);
  EXPECT_EQ(matching_loss(Distribution::poisson), LossKind::poisson_identity);
  EXPECT_THROW(parse_distribution("weibull"), ConfigError);
}

TEST(Factors, RoundTrip) {
  Rng rng(7);
  const KruskalModel m = random_kruskal(rng, {4, 3, 5}, 3, 1e-8, 10.0);
  const auto prefix = scratch("model");
  write_factors(prefix, m);
  EXPECT_TRUE(std::filesystem::exists(factor_path(prefix, 0)));
  EXPECT_EQ(factor_path(prefix, 2).filename().string(), "model.mode3.csv");
  EXPECT_TRUE(read_factors(prefix) == m);
}

TEST(Trace, EmptyIsHeaderOnly) {
  IterationTrace t;
  t.order = 3;
  std::ostringstream out;
  write_trace(out, t, TraceFormat::csv);
  EXPECT_EQ(out.str(), "iteration,seconds,nre,mse_mean,mse_mode_1,mse_mode_2,mse_mode_3,lyapunov,gamma_k\n");
}

TEST(Trace, OneRecordOneRow) {
  IterationTrace t;
  t.order = 2;
  IterationRecord r;
  r.iteration = 7;
  r.seconds = 0.5;
  r.nre = 1.25;
  r.mse_mean = 0.75;
  r.mse_modes = {0.5, 1.0};
  r.gamma_k = 2.0;
  t.records.push_back(r);
  std::ostringstream out;
  write_trace(out, t, TraceFormat::csv);
  EXPECT_EQ(out.str(), trace_csv_header(2) + "\n7,0.5,1.25,0.75,0.5,1,,2\n");
}

TEST(Trace, CsvAndJsonAgreeFieldByField) {
  const IterationTrace t = sample_trace();
  std::ostringstream csv, js;
  write_trace(csv, t, TraceFormat::csv);
  write_trace(js, t, TraceFormat::json);
  const auto doc = nlohmann::json::parse(js.str());
  EXPECT_EQ(doc.at("metadata").at("loss"), "gamma");
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  const auto header = split(line, ',');
  std::size_t row = 0;
  while (std::getline(lines, line)) {
    const auto fields = split(line, ',');
    ASSERT_EQ(fields.size(), header.size());
    const auto& rec = doc.at("records").at(row);
    for (std::size_t c = 0; c < header.size(); ++c) {
      nlohmann::json value;
      if (header[c].rfind("mse_mode_", 0) == 0) {
        const auto n = std::stoul(header[c].substr(9)) - 1;
        const auto& modes = rec.at("mse_modes");
        value = n < modes.size() ? modes.at(n) : nlohmann::json(nullptr);
      } else {
        value = rec.at(header[c]);
      }
      if (fields[c].empty()) {
        EXPECT_TRUE(value.is_null()) << header[c] << " row " << row;
      } else {
        EXPECT_EQ(parse_double(fields[c], header[c]), value.get<double>()) << header[c] << " row " << row;
      }
    }
    ++row;
  }
  EXPECT_EQ(row, t.records.size());
}

TEST(Trace, UnwritablePathNamesPath) {
  try {
    write_trace(std::filesystem::path("/nonexistent_dir/x/trace.csv"), sample_trace(), TraceFormat::csv);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent_dir/x/trace.csv"), std::string::npos);
  }
}

TEST(KeyValues, RoundTripAndComments) {
  const KeyValues kv{{"a", "1"}, {"solver.eta", "0.1"}, {"empty", ""}};
  std::stringstream buf;
  write_key_values(buf, kv);
  EXPECT_EQ(read_key_values(buf), kv);
  std::istringstream in("# note\n\n x = 3 \n");
  EXPECT_EQ(read_key_values(in), (KeyValues{{"x", "3"}}));
  std::istringstream bad("novalue\n");
  EXPECT_THROW(read_key_values(bad), ConfigError);
}
