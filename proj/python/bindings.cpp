#include "gcpmd/bregman.hpp"
#include "gcpmd/data.hpp"
#include "gcpmd/errors.hpp"
#include "gcpmd/estimators.hpp"
#include "gcpmd/experiment.hpp"
#include "gcpmd/format.hpp"
#include "gcpmd/losses.hpp"
#include "gcpmd/metrics.hpp"
#include "gcpmd/solver.hpp"
#include "gcpmd/verify.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <set>

namespace py = pybind11;
using namespace gcpmd;

namespace {

using FArray = py::array_t<double, py::array::f_style | py::array::forcecast>;

// Dense tensors cross the boundary in Fortran order, which is mode-1 fastest.
DenseTensor to_tensor(const FArray& a) {
  std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
  std::vector<double> values(a.data(), a.data() + a.size());
  return DenseTensor(TensorShape(std::move(dims)), std::move(values));
}

FArray to_array(const DenseTensor& t) {
  const auto& dims = t.shape().dims();
  std::vector<py::ssize_t> shape(dims.begin(), dims.end());
  FArray out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

KruskalModel to_model(const std::vector<Matrix>& factors) { return KruskalModel(factors); }

std::vector<Matrix> to_factors(const KruskalModel& m) { return {m.factors().begin(), m.factors().end()}; }

py::object opt(const std::optional<double>& v) { return v ? py::cast(*v) : py::none(); }

py::dict record_dict(const IterationRecord& r) {
  py::dict d;
  d["iteration"] = r.iteration;
  d["seconds"] = r.seconds;
  d["nre"] = r.nre;
  d["nre_exact"] = r.nre_exact;
  d["eta"] = r.eta;
  d["mse_mean"] = opt(r.mse_mean);
  d["mse_modes"] = r.mse_modes;
  d["lyapunov"] = opt(r.lyapunov);
  d["gamma_k"] = opt(r.gamma_k);
  return d;
}

py::dict trace_dict(const IterationTrace& t) {
  py::list records;
  for (const auto& r : t.records) records.append(record_dict(r));
  py::dict d;
  d["records"] = records;
  d["metadata"] = t.metadata;
  return d;
}

// Same loss-dependent defaults as the command line.
SolverConfig build_config(const LossKind loss, std::size_t rank, const py::dict& options) {
  SolverConfig c;
  c.loss.kind = loss;
  c.rank = rank;
  std::set<std::string> given;
  for (const auto& [k, v] : options) {
    const auto key = py::str(k).cast<std::string>();
    std::string text;
    if (py::isinstance<py::bool_>(v)) text = v.cast<bool>() ? "true" : "false";
    else if (py::isinstance<py::float_>(v)) text = format_double(v.cast<double>());
    else text = py::str(v).cast<std::string>();
    apply_config_entry(c, key, text);
    given.insert(key);
  }
  const bool nonneg = c.loss.constraint() == ConstraintRegime::nonnegative;
  if (!given.contains("generator"))
    c.generator.kind = nonneg ? GeneratorKind::negative_entropy : GeneratorKind::squared_euclidean;
  if (!given.contains("eta"))
    c.eta = loss == LossKind::gamma || loss == LossKind::gaussian ? 0.1 : 0.2;
  return c;
}

}  // namespace

PYBIND11_MODULE(_gcpmd, m) {
  m.doc() = "Generalized CP decomposition by inertial block stochastic mirror descent.";

  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

  m.def(
      "loss_value",
      [](const std::string& loss, double x, double mean, double eps) {
        return loss_value(LossSpec{parse_loss_kind(loss), eps}, x, mean);
      },
      py::arg("loss"), py::arg("x"), py::arg("m"), py::arg("epsilon") = 1e-9);
  m.def(
      "loss_deriv",
      [](const std::string& loss, double x, double mean, double eps) {
        return loss_deriv(LossSpec{parse_loss_kind(loss), eps}, x, mean);
      },
      py::arg("loss"), py::arg("x"), py::arg("m"), py::arg("epsilon") = 1e-9);

  m.def(
      "reconstruct", [](const std::vector<Matrix>& factors) { return to_array(reconstruct(to_model(factors))); },
      py::arg("factors"), "Dense model tensor from its factor matrices.");

  m.def(
      "objective",
      [](const FArray& x, const std::vector<Matrix>& factors, const std::string& loss) {
        return objective(LossSpec{parse_loss_kind(loss)}, to_tensor(x), to_model(factors)).value;
      },
      py::arg("x"), py::arg("factors"), py::arg("loss"), "Mean element-wise loss.");

  m.def(
      "full_gradient",
      [](const FArray& x, const std::vector<Matrix>& factors, std::size_t mode, const std::string& loss) {
        const ObservedTensor t = to_tensor(x);
        const KruskalModel model = to_model(factors);
        const LossSpec spec{parse_loss_kind(loss)};
        return full_gradient(GradientRequest{t, model, mode, {}, spec});
      },
      py::arg("x"), py::arg("factors"), py::arg("mode"), py::arg("loss"));

  m.def(
      "mirror_prox_step",
      [](const std::string& generator, const std::string& regularizer, const Matrix& anchor, const Matrix& g,
         double eta, double weight, bool nonnegative) {
        return mirror_prox_step(GeneratorSpec{parse_generator_kind(generator)},
                                RegularizerSpec{parse_regularizer_kind(regularizer), weight, nonnegative}, anchor, g,
                                eta);
      },
      py::arg("generator"), py::arg("regularizer"), py::arg("anchor"), py::arg("gradient"), py::arg("eta"),
      py::arg("weight") = 0.0, py::arg("nonnegative") = false);

  m.def(
      "mse",
      [](const Matrix& estimate, const Matrix& truth) {
        const MseReport r = mse(estimate, truth);
        return py::make_tuple(r.mse, r.permutation);
      },
      py::arg("estimate"), py::arg("truth"), "Permutation and scale invariant factor MSE and the matching.");

  m.def(
      "synthesize",
      [](const std::vector<std::size_t>& shape, std::size_t rank, const std::string& dist, double sigma, double a_max,
         std::uint64_t seed) {
        SyntheticSpec s;
        s.shape = shape;
        s.rank = rank;
        s.distribution = parse_distribution(dist);
        s.sigma = sigma;
        s.a_max = a_max;
        s.seed = seed;
        const SyntheticInstance inst = generate(s);
        return py::make_tuple(to_array(inst.tensor), to_factors(inst.planted));
      },
      py::arg("shape"), py::arg("rank") = 3, py::arg("dist") = "gamma", py::arg("sigma") = 1.0,
      py::arg("a_max") = 0.5, py::arg("seed") = 0);

  m.def(
      "decompose",
      [](const FArray& x, std::size_t rank, const std::string& loss, std::optional<std::vector<Matrix>> truth,
         std::optional<std::vector<Matrix>> init, const py::kwargs& options) {
        const SolverConfig config = build_config(parse_loss_kind(loss), rank, options);
        const ObservedTensor t = to_tensor(x);
        std::optional<KruskalModel> planted, start;
        if (truth) planted = to_model(*truth);
        if (init) start = to_model(*init);
        RunResult r = [&] {
          py::gil_scoped_release release;
          return run(config, t, planted ? &*planted : nullptr, start ? &*start : nullptr);
        }();
        py::dict out = trace_dict(r.trace);
        out["factors"] = to_factors(r.model);
        out["iterations"] = r.iterations;
        out["stop_reason"] = r.reason == StopReason::converged ? "converged" : "max_iterations";
        return out;
      },
      py::arg("x"), py::arg("rank"), py::arg("loss"), py::arg("truth") = py::none(), py::arg("init") = py::none(),
      "Fits a CP model. Extra keyword arguments are solver settings by their config key (eta, c1, c2, estimator, "
      "max_iters, seed, ...).");

  m.def(
      "read_tns",
      [](const std::string& path) {
        const SparseTensor t = read_tns(std::filesystem::path(path));
        const auto n = static_cast<py::ssize_t>(t.nnz());
        const auto order = static_cast<py::ssize_t>(t.shape().order());
        py::array_t<std::int64_t> idx({n, order});
        py::array_t<double> vals(n);
        auto iw = idx.mutable_unchecked<2>();
        auto vw = vals.mutable_unchecked<1>();
        for (py::ssize_t k = 0; k < n; ++k) {
          const MultiIndex i = t.index_of(static_cast<std::size_t>(k));
          for (py::ssize_t d = 0; d < order; ++d) iw(k, d) = static_cast<std::int64_t>(i[static_cast<std::size_t>(d)]);
          vw(k) = t.value_of(static_cast<std::size_t>(k));
        }
        return py::make_tuple(t.shape().dims(), idx, vals);
      },
      py::arg("path"), "Returns (shape, zero-based indices, values).");

  m.def(
      "write_tns",
      [](const std::string& path, const std::vector<std::size_t>& shape,
         const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& indices,
         const py::array_t<double, py::array::forcecast>& values) {
        if (indices.ndim() != 2 || indices.shape(0) != values.size())
          throw ContractError("indices must be nnz x order and match values");
        auto iv = indices.unchecked<2>();
        std::vector<SparseTensor::Entry> entries;
        for (py::ssize_t k = 0; k < indices.shape(0); ++k) {
          SparseTensor::Entry e;
          for (py::ssize_t d = 0; d < indices.shape(1); ++d) {
            if (iv(k, d) < 0) throw IndexError("negative index");
            e.index.push_back(static_cast<std::size_t>(iv(k, d)));
          }
          e.value = values.data()[k];
          entries.push_back(std::move(e));
        }
        write_tns(std::filesystem::path(path), SparseTensor(TensorShape(shape), std::move(entries)));
      },
      py::arg("path"), py::arg("shape"), py::arg("indices"), py::arg("values"));

  m.def(
      "verify",
      [](std::uint64_t seed) {
        VerifyOptions opt;
        opt.seed = seed;
        py::list out;
        for (const auto& c : run_verification(opt)) {
          py::dict d;
          d["suite"] = c.suite;
          d["name"] = c.name;
          d["error"] = c.error;
          d["tolerance"] = c.tolerance;
          d["passed"] = c.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 1, "Runs every self-check suite.");
}
