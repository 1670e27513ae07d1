#include "gcpmd/tensor.hpp"

#include "gcpmd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>

namespace gcpmd {

namespace {

void check_mode(std::size_t order, std::size_t mode) {
  if (mode >= order) {
    throw IndexError("mode " + std::to_string(mode) + " out of range for order " + std::to_string(order));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// TensorShape

TensorShape::TensorShape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2 || dims_.size() > kMaxOrder) {
    throw ConfigError("tensor order must be in [2, " + std::to_string(kMaxOrder) + "], got " +
                      std::to_string(dims_.size()));
  }
  strides_.resize(dims_.size());
  total_ = 1;
  for (std::size_t m = 0; m < dims_.size(); ++m) {
    if (dims_[m] == 0) throw ConfigError("tensor dimensions must be >= 1");
    if (dims_[m] > std::numeric_limits<std::uint32_t>::max()) {
      throw ConfigError("tensor dimension exceeds 32-bit coordinate range");
    }
    strides_[m] = total_;
    if (total_ > std::numeric_limits<std::size_t>::max() / dims_[m]) {
      throw ConfigError("tensor element count overflows");
    }
    total_ *= dims_[m];
  }
}

std::size_t TensorShape::dim(std::size_t mode) const {
  check_mode(order(), mode);
  return dims_[mode];
}

std::size_t TensorShape::fiber_count(std::size_t mode) const { return total_ / dim(mode); }

std::size_t TensorShape::stride(std::size_t mode) const {
  check_mode(order(), mode);
  return strides_[mode];
}

bool TensorShape::contains(std::span<const std::size_t> index) const noexcept {
  if (index.size() != dims_.size()) return false;
  for (std::size_t m = 0; m < dims_.size(); ++m) {
    if (index[m] >= dims_[m]) return false;
  }
  return true;
}

std::size_t TensorShape::linear_index(std::span<const std::size_t> index) const {
  if (!contains(index)) throw IndexError("multi-index out of bounds");
  std::size_t offset = 0;
  for (std::size_t m = 0; m < dims_.size(); ++m) offset += index[m] * strides_[m];
  return offset;
}

MultiIndex TensorShape::multi_index(std::size_t linear) const {
  if (linear >= total_) throw IndexError("linear index out of bounds");
  MultiIndex index(dims_.size());
  for (std::size_t m = 0; m < dims_.size(); ++m) {
    index[m] = linear % dims_[m];
    linear /= dims_[m];
  }
  return index;
}

// ---------------------------------------------------------------------------
// Fiber algebra

MultiIndex fiber_to_multi_index(const TensorShape& shape, std::size_t mode, std::size_t row) {
  check_mode(shape.order(), mode);
  if (row >= shape.fiber_count(mode)) {
    throw IndexError("fiber row " + std::to_string(row) + " out of range for mode " + std::to_string(mode) +
                     " (J = " + std::to_string(shape.fiber_count(mode)) + ")");
  }
  MultiIndex others;
  others.reserve(shape.order() - 1);
  for (std::size_t m = 0; m < shape.order(); ++m) {
    if (m == mode) continue;
    others.push_back(row % shape.dims()[m]);
    row /= shape.dims()[m];
  }
  return others;
}

std::size_t multi_index_to_fiber(const TensorShape& shape, std::size_t mode, std::span<const std::size_t> others) {
  check_mode(shape.order(), mode);
  if (others.size() + 1 != shape.order()) throw IndexError("fiber multi-index has wrong length");
  std::size_t row = 0;
  std::size_t scale = 1;
  std::size_t k = 0;
  for (std::size_t m = 0; m < shape.order(); ++m) {
    if (m == mode) continue;
    if (others[k] >= shape.dims()[m]) throw IndexError("fiber multi-index out of bounds");
    row += others[k] * scale;
    scale *= shape.dims()[m];
    ++k;
  }
  return row;
}

MultiIndex fiber_origin(const TensorShape& shape, std::size_t mode, std::size_t row) {
  const MultiIndex others = fiber_to_multi_index(shape, mode, row);
  MultiIndex index(shape.order(), 0);
  std::size_t k = 0;
  for (std::size_t m = 0; m < shape.order(); ++m) {
    if (m != mode) index[m] = others[k++];
  }
  return index;
}

std::size_t fiber_of(const TensorShape& shape, std::size_t mode, std::span<const std::size_t> index) {
  check_mode(shape.order(), mode);
  if (!shape.contains(index)) throw IndexError("multi-index out of bounds");
  std::size_t row = 0;
  std::size_t scale = 1;
  for (std::size_t m = 0; m < shape.order(); ++m) {
    if (m == mode) continue;
    row += index[m] * scale;
    scale *= shape.dims()[m];
  }
  return row;
}

std::vector<FiberIndex> all_fibers(const TensorShape& shape, std::size_t mode) {
  const std::size_t count = shape.fiber_count(mode);
  std::vector<FiberIndex> fibers(count);
  for (std::size_t j = 0; j < count; ++j) fibers[j] = {mode, j};
  return fibers;
}

// ---------------------------------------------------------------------------
// DenseTensor

DenseTensor::DenseTensor(TensorShape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_.total()) {
    throw ConfigError("dense tensor expects " + std::to_string(shape_.total()) + " values, got " +
                      std::to_string(values_.size()));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw DataError("dense tensor contains a non-finite value");
  }
}

DenseTensor DenseTensor::zeros(TensorShape shape) {
  std::vector<double> values(shape.total(), 0.0);
  return DenseTensor(std::move(shape), std::move(values));
}

double DenseTensor::operator()(std::span<const std::size_t> index) const {
  return values_[shape_.linear_index(index)];
}

void DenseTensor::read_fiber(std::size_t mode, std::size_t row, Eigen::Ref<Vector> out) const {
  const MultiIndex origin = fiber_origin(shape_, mode, row);
  const std::size_t base = shape_.linear_index(origin);
  const std::size_t stride = shape_.stride(mode);
  const std::size_t length = shape_.dims()[mode];
  for (std::size_t i = 0; i < length; ++i) out[static_cast<Eigen::Index>(i)] = values_[base + i * stride];
}

// ---------------------------------------------------------------------------
// SparseTensor

SparseTensor::SparseTensor(TensorShape shape, std::vector<Entry> entries, bool implicit_zero)
    : shape_(std::move(shape)), implicit_zero_(implicit_zero) {
  const std::size_t order = shape_.order();
  if (entries.size() > shape_.total()) throw DataError("more entries than tensor elements");

  std::vector<std::pair<std::size_t, std::size_t>> linear(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const Entry& e = entries[k];
    if (!shape_.contains(e.index)) {
      throw IndexError("sparse entry " + std::to_string(k) + " out of bounds");
    }
    if (!std::isfinite(e.value)) throw DataError("sparse entry " + std::to_string(k) + " is not finite");
    linear[k] = {shape_.linear_index(e.index), k};
  }
  std::sort(linear.begin(), linear.end());
  for (std::size_t k = 1; k < linear.size(); ++k) {
    if (linear[k].first == linear[k - 1].first) {
      throw DataError("duplicate coordinate in sparse tensor (entries " + std::to_string(linear[k - 1].second) +
                      " and " + std::to_string(linear[k].second) + ")");
    }
  }

  // Stored in linear (mode-1-fastest) order so the layout does not depend on input order.
  coords_.resize(entries.size() * order);
  values_.resize(entries.size());
  for (std::size_t k = 0; k < linear.size(); ++k) {
    const Entry& e = entries[linear[k].second];
    for (std::size_t m = 0; m < order; ++m) coords_[k * order + m] = static_cast<std::uint32_t>(e.index[m]);
    values_[k] = e.value;
  }

  by_mode_.resize(order);
  std::vector<std::tuple<std::uint64_t, std::uint32_t, double>> keyed(values_.size());
  for (std::size_t mode = 0; mode < order; ++mode) {
    for (std::size_t k = 0; k < values_.size(); ++k) {
      std::uint64_t row = 0;
      std::uint64_t scale = 1;
      for (std::size_t m = 0; m < order; ++m) {
        if (m == mode) continue;
        row += coords_[k * order + m] * scale;
        scale *= shape_.dims()[m];
      }
      keyed[k] = {row, coords_[k * order + mode], values_[k]};
    }
    std::sort(keyed.begin(), keyed.end(),
              [](const auto& a, const auto& b) { return std::tie(std::get<0>(a), std::get<1>(a)) <
                                                        std::tie(std::get<0>(b), std::get<1>(b)); });
    ModeIndex& index = by_mode_[mode];
    index.items.reserve(keyed.size());
    for (std::size_t k = 0; k < keyed.size(); ++k) {
      const auto& [row, coord, value] = keyed[k];
      if (index.rows.empty() || index.rows.back() != row) {
        index.rows.push_back(row);
        index.offsets.push_back(k);
      }
      index.items.push_back({coord, value});
    }
    index.offsets.push_back(keyed.size());
  }
}

SparseTensor SparseTensor::from_dense(const DenseTensor& dense, bool keep_zeros) {
  std::vector<Entry> entries;
  const auto values = dense.values();
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k] != 0.0 || keep_zeros) entries.push_back({dense.shape().multi_index(k), values[k]});
  }
  return SparseTensor(dense.shape(), std::move(entries), true);
}

DenseTensor SparseTensor::to_dense() const {
  if (!implicit_zero_) throw DataError("cannot densify a sparse tensor without implicit-zero semantics");
  std::vector<double> values(shape_.total(), 0.0);
  for (std::size_t k = 0; k < values_.size(); ++k) values[shape_.linear_index(index_of(k))] = values_[k];
  return DenseTensor(shape_, std::move(values));
}

std::vector<SparseTensor::Entry> SparseTensor::entries() const {
  std::vector<Entry> out(values_.size());
  for (std::size_t k = 0; k < values_.size(); ++k) out[k] = {index_of(k), values_[k]};
  return out;
}

MultiIndex SparseTensor::index_of(std::size_t k) const {
  const std::size_t order = shape_.order();
  MultiIndex index(order);
  for (std::size_t m = 0; m < order; ++m) index[m] = coords_[k * order + m];
  return index;
}

std::span<const SparseTensor::FiberEntry> SparseTensor::fiber(std::size_t mode, std::size_t row) const {
  if (row >= shape_.fiber_count(mode)) throw IndexError("fiber row out of range");
  const ModeIndex& index = by_mode_[mode];
  const auto it = std::lower_bound(index.rows.begin(), index.rows.end(), static_cast<std::uint64_t>(row));
  if (it == index.rows.end() || *it != row) return {};
  const auto slot = static_cast<std::size_t>(it - index.rows.begin());
  return std::span<const FiberEntry>(index.items).subspan(index.offsets[slot],
                                                          index.offsets[slot + 1] - index.offsets[slot]);
}

double SparseTensor::operator()(std::span<const std::size_t> index) const {
  const std::size_t row = fiber_of(shape_, 0, index);
  for (const FiberEntry& e : fiber(0, row)) {
    if (e.coord == index[0]) return e.value;
  }
  if (!implicit_zero_) throw DataError("coordinate not observed in a tensor without implicit zeros");
  return 0.0;
}

void SparseTensor::read_fiber(std::size_t mode, std::size_t row, Eigen::Ref<Vector> out) const {
  const auto entries = fiber(mode, row);
  if (!implicit_zero_ && entries.size() != shape_.dims()[mode]) {
    throw DataError("fiber is not fully observed in a tensor without implicit zeros");
  }
  out.setZero();
  for (const FiberEntry& e : entries) out[e.coord] = e.value;
}

// ---------------------------------------------------------------------------
// ObservedTensor helpers

const TensorShape& shape_of(const ObservedTensor& tensor) {
  return std::visit([](const auto& t) -> const TensorShape& { return t.shape(); }, tensor);
}

void read_fiber(const ObservedTensor& tensor, std::size_t mode, std::size_t row, Eigen::Ref<Vector> out) {
  std::visit([&](const auto& t) { t.read_fiber(mode, row, out); }, tensor);
}

double value_at(const ObservedTensor& tensor, std::span<const std::size_t> index) {
  return std::visit([&](const auto& t) { return t(index); }, tensor);
}

// ---------------------------------------------------------------------------
// KruskalModel

KruskalModel::KruskalModel(std::vector<Matrix> factors) : factors_(std::move(factors)) {
  if (factors_.size() < 2 || factors_.size() > kMaxOrder) {
    throw ConfigError("Kruskal model needs between 2 and " + std::to_string(kMaxOrder) + " factors");
  }
  rank_ = static_cast<std::size_t>(factors_.front().cols());
  if (rank_ == 0) throw ConfigError("Kruskal model rank must be >= 1");
  for (const Matrix& f : factors_) {
    if (static_cast<std::size_t>(f.cols()) != rank_) throw ConfigError("factor column counts differ");
    if (f.rows() == 0) throw ConfigError("factor with zero rows");
    if (!f.allFinite()) throw DomainError("factor contains a non-finite entry");
  }
}

KruskalModel KruskalModel::constant(const TensorShape& shape, std::size_t rank, double value) {
  std::vector<Matrix> factors;
  for (std::size_t d : shape.dims()) {
    factors.push_back(Matrix::Constant(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(rank), value));
  }
  return KruskalModel(std::move(factors));
}

TensorShape KruskalModel::shape() const {
  std::vector<std::size_t> dims;
  for (const Matrix& f : factors_) dims.push_back(static_cast<std::size_t>(f.rows()));
  return TensorShape(std::move(dims));
}

const Matrix& KruskalModel::factor(std::size_t mode) const {
  check_mode(order(), mode);
  return factors_[mode];
}

void KruskalModel::set_factor(std::size_t mode, Matrix value) {
  check_mode(order(), mode);
  if (value.rows() != factors_[mode].rows() || value.cols() != factors_[mode].cols()) {
    throw ContractError("replacement factor has the wrong dimensions");
  }
  if (!value.allFinite()) throw DomainError("factor update produced a non-finite entry");
  factors_[mode] = std::move(value);
}

double KruskalModel::min_entry() const {
  double lowest = std::numeric_limits<double>::infinity();
  for (const Matrix& f : factors_) lowest = std::min(lowest, f.minCoeff());
  return lowest;
}

bool KruskalModel::operator==(const KruskalModel& other) const {
  if (order() != other.order() || rank_ != other.rank_) return false;
  for (std::size_t n = 0; n < order(); ++n) {
    if (factors_[n].rows() != other.factors_[n].rows() || factors_[n] != other.factors_[n]) return false;
  }
  return true;
}

double model_entry(const KruskalModel& model, std::span<const std::size_t> index) {
  if (!model.shape().contains(index)) throw IndexError("model index out of bounds");
  double sum = 0.0;
  for (std::size_t r = 0; r < model.rank(); ++r) {
    double product = 1.0;
    for (std::size_t n = 0; n < model.order(); ++n) {
      product *= model.factor(n)(static_cast<Eigen::Index>(index[n]), static_cast<Eigen::Index>(r));
    }
    sum += product;
  }
  return sum;
}

DenseTensor reconstruct(const KruskalModel& model) {
  const TensorShape shape = model.shape();
  std::vector<double> values(shape.total());
  RowVector h(static_cast<Eigen::Index>(model.rank()));
  const std::size_t rows = shape.fiber_count(0);
  const std::size_t length = shape.dims()[0];
  for (std::size_t j = 0; j < rows; ++j) {
    khatri_rao_row(model, 0, j, h);
    // Mode-0 fibers are contiguous under mode-1-fastest storage.
    const Vector column = model.factor(0) * h.transpose();
    for (std::size_t i = 0; i < length; ++i) values[j * length + i] = column[static_cast<Eigen::Index>(i)];
  }
  return DenseTensor(shape, std::move(values));
}

void khatri_rao_row(const KruskalModel& model, std::size_t mode, std::size_t row, Eigen::Ref<RowVector> out) {
  check_mode(model.order(), mode);
  const auto& factors = model.factors();
  std::size_t rest = row;
  std::size_t count = 1;
  for (std::size_t m = 0; m < factors.size(); ++m) {
    if (m != mode) count *= static_cast<std::size_t>(factors[m].rows());
  }
  if (row >= count) throw IndexError("fiber row out of range");
  out.setOnes();
  for (std::size_t m = 0; m < factors.size(); ++m) {
    if (m == mode) continue;
    const auto rows = static_cast<std::size_t>(factors[m].rows());
    out.array() *= factors[m].row(static_cast<Eigen::Index>(rest % rows)).array();
    rest /= rows;
  }
}

Matrix khatri_rao_rows(const KruskalModel& model, std::size_t mode, std::span<const FiberIndex> fibers) {
  Matrix out(static_cast<Eigen::Index>(fibers.size()), static_cast<Eigen::Index>(model.rank()));
  RowVector h(static_cast<Eigen::Index>(model.rank()));
  for (std::size_t b = 0; b < fibers.size(); ++b) {
    if (fibers[b].mode != mode) throw ContractError("fiber mode does not match the requested mode");
    khatri_rao_row(model, mode, fibers[b].row, h);
    out.row(static_cast<Eigen::Index>(b)) = h;
  }
  return out;
}

Matrix model_fiber(const KruskalModel& model, std::size_t mode, std::span<const FiberIndex> fibers) {
  return khatri_rao_rows(model, mode, fibers) * model.factor(mode).transpose();
}

Matrix data_fiber(const ObservedTensor& tensor, std::size_t mode, std::span<const FiberIndex> fibers) {
  const TensorShape& shape = shape_of(tensor);
  const auto length = static_cast<Eigen::Index>(shape.dim(mode));
  Matrix out(static_cast<Eigen::Index>(fibers.size()), length);
  Vector buffer(length);
  for (std::size_t b = 0; b < fibers.size(); ++b) {
    if (fibers[b].mode != mode) throw ContractError("fiber mode does not match the requested mode");
    read_fiber(tensor, mode, fibers[b].row, buffer);
    out.row(static_cast<Eigen::Index>(b)) = buffer.transpose();
  }
  return out;
}

}  // namespace gcpmd
