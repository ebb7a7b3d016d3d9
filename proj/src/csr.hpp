#pragma once
// Compressed-sparse-row matrix used by the assembly/factor pipeline.

#include "common.hpp"

namespace heterodyn {

struct Triplet {
  int row = 0;
  int col = 0;
  Scalar value = 0.0;
};

class CsrMatrix {
 public:
  CsrMatrix() = default;
  CsrMatrix(int rows, int cols) : rows_(rows), cols_(cols), row_offsets_(rows + 1, 0) {}

  // Builds from triplets: duplicate entries are summed, columns sorted within
  // each row, entries that cancel to exactly zero are dropped.
  static CsrMatrix from_triplets(int rows, int cols, std::vector<Triplet> triplets);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int nnz() const { return static_cast<int>(values_.size()); }

  const std::vector<int>& row_offsets() const { return row_offsets_; }
  const std::vector<int>& col_indices() const { return col_indices_; }
  const std::vector<Scalar>& values() const { return values_; }
  std::vector<Scalar>& values() { return values_; }

  // y = A x
  VecX multiply(const VecX& x) const;
  // y += alpha * A x
  void multiply_add(const VecX& x, Scalar alpha, VecX& y) const;
  // y = A^T x
  VecX multiply_transpose(const VecX& x) const;

  CsrMatrix transposed() const;

  // Keeps rows/cols selected by `keep_row`/`keep_col` (new index = rank among
  // kept); used to split the assembled operator into free/fixed blocks.
  CsrMatrix submatrix(const std::vector<int>& row_map, int new_rows,
                      const std::vector<int>& col_map, int new_cols) const;

  Scalar coeff(int row, int col) const;
  MatX to_dense() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<int> row_offsets_;
  std::vector<int> col_indices_;
  std::vector<Scalar> values_;

  friend class SparseFactor;
};

}  // namespace heterodyn
