#pragma once

// Tensor containers, Kruskal models, and the mode-n fiber algebra.
//
// Conventions (all indices are 0-based in the C++ API):
//   * Dense storage is mode-1 fastest: offset = sum_m i_m * prod_{l<m} I_l.
//   * The rows of the mode-n unfolding (the mode-n fibers) are linearized over
//     the remaining modes with the smallest remaining mode varying fastest.
//     This matches the Khatri-Rao ordering H_n = A_N (.) ... A_{n+1} (.) A_{n-1}
//     (.) ... (.) A_1, so row j of H_n belongs to fiber j.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace gcpmd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using MultiIndex = std::vector<std::size_t>;

inline constexpr std::size_t kMaxOrder = 8;

class TensorShape {
 public:
  /// Throws ConfigError unless 2 <= order <= kMaxOrder and every dim >= 1.
  explicit TensorShape(std::vector<std::size_t> dims);

  std::size_t order() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t mode) const;
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  /// prod_n I_n
  std::size_t total() const noexcept { return total_; }
  /// J_n = prod_{m != n} I_m
  std::size_t fiber_count(std::size_t mode) const;
  /// Dense stride of a mode under mode-1-fastest storage.
  std::size_t stride(std::size_t mode) const;

  bool contains(std::span<const std::size_t> index) const noexcept;
  std::size_t linear_index(std::span<const std::size_t> index) const;
  MultiIndex multi_index(std::size_t linear) const;

  bool operator==(const TensorShape& other) const noexcept { return dims_ == other.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::vector<std::size_t> strides_;
  std::size_t total_ = 0;
};

/// A row of the mode-n unfolding.
struct FiberIndex {
  std::size_t mode = 0;
  std::size_t row = 0;

  auto operator<=>(const FiberIndex&) const = default;
};

/// Indices over the modes other than `mode`, in increasing mode order.
MultiIndex fiber_to_multi_index(const TensorShape& shape, std::size_t mode, std::size_t row);
/// Inverse of fiber_to_multi_index.
std::size_t multi_index_to_fiber(const TensorShape& shape, std::size_t mode,
                                 std::span<const std::size_t> others);
/// Full N-index of the fiber entry whose mode-`mode` coordinate is zero.
MultiIndex fiber_origin(const TensorShape& shape, std::size_t mode, std::size_t row);
/// Fiber row holding a full N-index, for the given mode.
std::size_t fiber_of(const TensorShape& shape, std::size_t mode, std::span<const std::size_t> index);

class DenseTensor {
 public:
  /// Values in mode-1-fastest order; must be finite and sized shape.total().
  DenseTensor(TensorShape shape, std::vector<double> values);
  static DenseTensor zeros(TensorShape shape);

  const TensorShape& shape() const noexcept { return shape_; }
  std::span<const double> values() const noexcept { return values_; }
  double operator()(std::span<const std::size_t> index) const;
  double at_linear(std::size_t linear) const { return values_[linear]; }

  /// Reads fiber (mode, row) into `out` (length I_mode).
  void read_fiber(std::size_t mode, std::size_t row, Eigen::Ref<Vector> out) const;

 private:
  TensorShape shape_;
  std::vector<double> values_;
};

class SparseTensor {
 public:
  struct Entry {
    MultiIndex index;
    double value = 0.0;
  };

  /// Coordinate of one stored value along a fiber.
  struct FiberEntry {
    std::uint32_t coord = 0;
    double value = 0.0;
  };

  /// Rejects out-of-bounds indices, duplicates, and non-finite values.
  /// With implicit_zero, absent coordinates read as 0 (count data).
  SparseTensor(TensorShape shape, std::vector<Entry> entries, bool implicit_zero = true);

  static SparseTensor from_dense(const DenseTensor& dense, bool keep_zeros = false);
  DenseTensor to_dense() const;

  const TensorShape& shape() const noexcept { return shape_; }
  std::size_t nnz() const noexcept { return values_.size(); }
  bool implicit_zero() const noexcept { return implicit_zero_; }
  std::vector<Entry> entries() const;
  MultiIndex index_of(std::size_t k) const;
  double value_of(std::size_t k) const { return values_[k]; }

  /// Stored entries of fiber (mode, row), sorted by coordinate. O(log nnz).
  std::span<const FiberEntry> fiber(std::size_t mode, std::size_t row) const;
  double operator()(std::span<const std::size_t> index) const;
  void read_fiber(std::size_t mode, std::size_t row, Eigen::Ref<Vector> out) const;

 private:
  struct ModeIndex {
    std::vector<std::uint64_t> rows;    // sorted fiber rows with at least one entry
    std::vector<std::size_t> offsets;   // rows.size() + 1
    std::vector<FiberEntry> items;
  };

  TensorShape shape_;
  std::vector<std::uint32_t> coords_;  // nnz x N, row-major
  std::vector<double> values_;
  bool implicit_zero_ = true;
  std::vector<ModeIndex> by_mode_;
};

using ObservedTensor = std::variant<DenseTensor, SparseTensor>;

const TensorShape& shape_of(const ObservedTensor& tensor);
void read_fiber(const ObservedTensor& tensor, std::size_t mode, std::size_t row, Eigen::Ref<Vector> out);
double value_at(const ObservedTensor& tensor, std::span<const std::size_t> index);

/// CP model: sum_r A_1(:,r) o ... o A_N(:,r).
class KruskalModel {
 public:
  /// All factors need the same column count R >= 1 and finite entries.
  explicit KruskalModel(std::vector<Matrix> factors);
  static KruskalModel constant(const TensorShape& shape, std::size_t rank, double value);

  std::size_t rank() const noexcept { return rank_; }
  std::size_t order() const noexcept { return factors_.size(); }
  TensorShape shape() const;
  const Matrix& factor(std::size_t mode) const;
  const std::vector<Matrix>& factors() const noexcept { return factors_; }

  /// Replaces one factor; same dimensions and finite entries required.
  void set_factor(std::size_t mode, Matrix value);
  /// Minimum entry over all factors.
  double min_entry() const;

  bool operator==(const KruskalModel& other) const;

 private:
  std::size_t rank_ = 0;
  std::vector<Matrix> factors_;
};

double model_entry(const KruskalModel& model, std::span<const std::size_t> index);

/// Dense reconstruction of the model.
DenseTensor reconstruct(const KruskalModel& model);

/// Row `row` of H_n, computed without materializing H_n.
void khatri_rao_row(const KruskalModel& model, std::size_t mode, std::size_t row,
                    Eigen::Ref<RowVector> out);

/// Rows H_n(F, :) for the sampled fibers, B x R. Every fiber must have mode `mode`.
Matrix khatri_rao_rows(const KruskalModel& model, std::size_t mode, std::span<const FiberIndex> fibers);

/// Sampled rows of H_n A_n^T, B x I_n.
Matrix model_fiber(const KruskalModel& model, std::size_t mode, std::span<const FiberIndex> fibers);

/// Sampled rows of the mode-n unfolding X_(n), B x I_n.
Matrix data_fiber(const ObservedTensor& tensor, std::size_t mode, std::span<const FiberIndex> fibers);

/// Every fiber of one mode, in row order.
std::vector<FiberIndex> all_fibers(const TensorShape& shape, std::size_t mode);

}  // namespace gcpmd
