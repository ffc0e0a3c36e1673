#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gnndiff/tensor.hpp"

namespace gnndiff {

struct Triplet {
  std::uint32_t row;
  std::uint32_t col;
  float value;
};

/// Compressed-row sparse matrix built from a duplicate-free coordinate list.
/// Column indices are sorted within each row.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  /// Throws DimensionError on out-of-range indices, ContractError on duplicates.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> entries);
  /// Keeps the nonzero entries of a rank-2 tensor.
  static SparseMatrix from_dense(const Tensor& dense);
  static SparseMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  std::span<const std::uint32_t> row_ptr() const noexcept { return row_ptr_; }
  std::span<const std::uint32_t> col_idx() const noexcept { return col_idx_; }
  std::span<const float> values() const noexcept { return values_; }

  /// Same sparsity pattern, replaced values.
  SparseMatrix with_values(std::vector<float> values) const;
  std::vector<Triplet> triplets() const;
  SparseMatrix transposed() const;

  /// this * dense, dense of shape [cols, n].
  Tensor multiply(const Tensor& dense) const;
  /// this^T * dense, dense of shape [rows, n].
  Tensor transpose_multiply(const Tensor& dense) const;
  Tensor to_dense() const;

  bool is_symmetric() const;
  /// Sum of each row's values.
  std::vector<float> row_sums() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint32_t> row_ptr_;
  std::vector<std::uint32_t> col_idx_;
  std::vector<float> values_;
};

}  // namespace gnndiff
