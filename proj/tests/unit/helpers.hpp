#pragma once

// Shared generators and brute-force oracles for the unit tests. The oracles
// deliberately avoid the library's fiber and Khatri-Rao code paths.

#include "gcpmd/losses.hpp"
#include "gcpmd/random.hpp"
#include "gcpmd/tensor.hpp"

#include <cmath>
#include <vector>

namespace gcpmd::test {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = lo + (hi - lo) * uniform01(rng);
  return m;
}

inline KruskalModel random_kruskal(Rng& rng, const std::vector<std::size_t>& dims, std::size_t rank, double lo,
                                   double hi) {
  std::vector<Matrix> factors;
  for (std::size_t d : dims)
    factors.push_back(random_matrix(rng, static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(rank), lo, hi));
  return KruskalModel(std::move(factors));
}

/// Decodes a mode-1-fastest linear index over `dims`.
inline std::vector<std::size_t> decode(std::size_t linear, const std::vector<std::size_t>& dims) {
  std::vector<std::size_t> idx(dims.size());
  for (std::size_t m = 0; m < dims.size(); ++m) {
    idx[m] = linear % dims[m];
    linear /= dims[m];
  }
  return idx;
}

inline std::size_t total_of(const std::vector<std::size_t>& dims) {
  std::size_t t = 1;
  for (auto d : dims) t *= d;
  return t;
}

/// sum_r prod_n A_n(i_n, r), by direct loops.
inline double brute_entry(const KruskalModel& model, const std::vector<std::size_t>& idx) {
  double sum = 0.0;
  for (std::size_t r = 0; r < model.rank(); ++r) {
    double p = 1.0;
    for (std::size_t n = 0; n < idx.size(); ++n)
      p *= model.factor(n)(static_cast<Eigen::Index>(idx[n]), static_cast<Eigen::Index>(r));
    sum += p;
  }
  return sum;
}

/// Dense values (mode-1 fastest) of the model.
inline std::vector<double> brute_reconstruct(const KruskalModel& model) {
  const auto dims = model.shape().dims();
  std::vector<double> out(total_of(dims));
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = brute_entry(model, decode(t, dims));
  return out;
}

/// Index tuples over the modes other than `mode`, smallest remaining mode
/// fastest, listed in fiber order.
inline std::vector<std::vector<std::size_t>> brute_fibers(const std::vector<std::size_t>& dims, std::size_t mode) {
  std::vector<std::size_t> rest;
  for (std::size_t m = 0; m < dims.size(); ++m)
    if (m != mode) rest.push_back(dims[m]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t t = 0; t < total_of(rest); ++t) out.push_back(decode(t, rest));
  return out;
}

/// Materialized H_n with rows in fiber order.
inline Matrix brute_khatri_rao(const KruskalModel& model, std::size_t mode) {
  const auto dims = model.shape().dims();
  const auto fibers = brute_fibers(dims, mode);
  Matrix h(static_cast<Eigen::Index>(fibers.size()), static_cast<Eigen::Index>(model.rank()));
  for (std::size_t j = 0; j < fibers.size(); ++j) {
    for (std::size_t r = 0; r < model.rank(); ++r) {
      double p = 1.0;
      std::size_t k = 0;
      for (std::size_t m = 0; m < dims.size(); ++m) {
        if (m == mode) continue;
        p *= model.factor(m)(static_cast<Eigen::Index>(fibers[j][k++]), static_cast<Eigen::Index>(r));
      }
      h(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r)) = p;
    }
  }
  return h;
}

/// Mean element-wise loss, evaluated by direct enumeration.
inline double brute_objective(const LossSpec& spec, const std::vector<double>& data, const KruskalModel& model) {
  const auto dims = model.shape().dims();
  double sum = 0.0;
  for (std::size_t t = 0; t < data.size(); ++t) sum += loss_value(spec, data[t], brute_entry(model, decode(t, dims)));
  return sum / static_cast<double>(data.size());
}

/// Central-difference gradient of brute_objective with respect to factor `mode`.
inline Matrix brute_fd_gradient(const LossSpec& spec, const std::vector<double>& data, const KruskalModel& model,
                                std::size_t mode, double rel_step = 1e-6) {
  const Matrix& a = model.factor(mode);
  Matrix g(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double h = rel_step * std::max(1.0, std::abs(a(i, j)));
      KruskalModel plus = model, minus = model;
      Matrix ap = a, am = a;
      ap(i, j) += h;
      am(i, j) -= h;
      plus.set_factor(mode, ap);
      minus.set_factor(mode, am);
      g(i, j) = (brute_objective(spec, data, plus) - brute_objective(spec, data, minus)) / (2.0 * h);
    }
  }
  return g;
}

/// In-domain data for a loss kind around a model.
inline std::vector<double> data_for(LossKind kind, const KruskalModel& model, Rng& rng) {
  std::vector<double> data = brute_reconstruct(model);
  for (double& x : data) {
    const double u = uniform01(rng);
    switch (kind) {
      case LossKind::gaussian: x += u - 0.5; break;
      case LossKind::gamma: x *= 0.5 + u; break;
      case LossKind::poisson_identity:
      case LossKind::poisson_log: x = std::floor(3.0 * u); break;
      case LossKind::bernoulli_odds:
      case LossKind::bernoulli_logit: x = u < 0.5 ? 0.0 : 1.0; break;
    }
  }
  return data;
}

inline constexpr LossKind kAllLosses[] = {LossKind::gaussian,       LossKind::gamma,
                                          LossKind::poisson_identity, LossKind::poisson_log,
                                          LossKind::bernoulli_odds, LossKind::bernoulli_logit};

}  // namespace gcpmd::test
