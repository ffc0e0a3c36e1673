#include "gnndiff/sparse.hpp"

#include <algorithm>
#include <string>

#include "gnndiff/error.hpp"

namespace gnndiff {

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> entries) {
  if (rows == 0 || cols == 0) throw DimensionError("sparse matrix must have positive extents");
  for (const auto& t : entries) {
    if (t.row >= rows || t.col >= cols)
      throw DimensionError("sparse entry (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                           ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  SparseMatrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.row_ptr_.assign(rows + 1, 0);
  m.col_idx_.reserve(entries.size());
  m.values_.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i > 0 && entries[i].row == entries[i - 1].row && entries[i].col == entries[i - 1].col)
      throw ContractError("duplicate sparse coordinate (" + std::to_string(entries[i].row) + "," +
                          std::to_string(entries[i].col) + ")");
    m.row_ptr_[entries[i].row + 1]++;
    m.col_idx_.push_back(entries[i].col);
    m.values_.push_back(entries[i].value);
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
  return m;
}

SparseMatrix SparseMatrix::from_dense(const Tensor& dense) {
  std::vector<Triplet> entries;
  for (std::size_t r = 0; r < dense.rows(); ++r)
    for (std::size_t c = 0; c < dense.cols(); ++c)
      if (float v = dense.at(r, c); v != 0.0f)
        entries.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c), v});
  return from_triplets(dense.rows(), dense.cols(), std::move(entries));
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<Triplet> entries(n);
  for (std::size_t i = 0; i < n; ++i)
    entries[i] = {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i), 1.0f};
  return from_triplets(n, n, std::move(entries));
}

SparseMatrix SparseMatrix::with_values(std::vector<float> values) const {
  if (values.size() != values_.size())
    throw DimensionError("replacement values have length " + std::to_string(values.size()) + ", expected " +
                         std::to_string(values_.size()));
  SparseMatrix m = *this;
  m.values_ = std::move(values);
  return m;
}

std::vector<Triplet> SparseMatrix::triplets() const {
  std::vector<Triplet> out;
  out.reserve(nnz());
  for (std::size_t r = 0; r < rows_; ++r)
    for (auto k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
      out.push_back({static_cast<std::uint32_t>(r), col_idx_[k], values_[k]});
  return out;
}

SparseMatrix SparseMatrix::transposed() const {
  auto t = triplets();
  for (auto& e : t) std::swap(e.row, e.col);
  return from_triplets(cols_, rows_, std::move(t));
}

Tensor SparseMatrix::multiply(const Tensor& dense) const {
  if (dense.rank() != 2 || dense.rows() != cols_)
    throw DimensionError("sparse multiply: right operand " + shape_str(dense.shape()) + " needs " +
                         std::to_string(cols_) + " rows");
  const std::size_t n = dense.cols();
  Tensor out({rows_, n});
  const float* b = dense.data();
  float* o = out.data();
  for (std::size_t r = 0; r < rows_; ++r) {
    float* orow = o + r * n;
    for (auto k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      const float v = values_[k];
      const float* brow = b + static_cast<std::size_t>(col_idx_[k]) * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += v * brow[j];
    }
  }
  return out;
}

Tensor SparseMatrix::transpose_multiply(const Tensor& dense) const {
  if (dense.rank() != 2 || dense.rows() != rows_)
    throw DimensionError("sparse transpose multiply: right operand " + shape_str(dense.shape()) + " needs " +
                         std::to_string(rows_) + " rows");
  const std::size_t n = dense.cols();
  Tensor out({cols_, n});
  const float* b = dense.data();
  float* o = out.data();
  for (std::size_t r = 0; r < rows_; ++r) {
    const float* brow = b + r * n;
    for (auto k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      const float v = values_[k];
      float* orow = o + static_cast<std::size_t>(col_idx_[k]) * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += v * brow[j];
    }
  }
  return out;
}

Tensor SparseMatrix::to_dense() const {
  Tensor out({rows_, cols_});
  for (std::size_t r = 0; r < rows_; ++r)
    for (auto k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) out.at(r, col_idx_[k]) = values_[k];
  return out;
}

bool SparseMatrix::is_symmetric() const {
  if (rows_ != cols_) return false;
  const SparseMatrix t = transposed();
  return t.row_ptr_ == row_ptr_ && t.col_idx_ == col_idx_ && t.values_ == values_;
}

std::vector<float> SparseMatrix::row_sums() const {
  std::vector<float> sums(rows_, 0.0f);
  for (std::size_t r = 0; r < rows_; ++r)
    for (auto k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) sums[r] += values_[k];
  return sums;
}

}  // namespace gnndiff
