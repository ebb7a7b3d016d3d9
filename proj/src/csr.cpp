#include "csr.hpp"

#include <algorithm>

namespace heterodyn {

CsrMatrix CsrMatrix::from_triplets(int rows, int cols, std::vector<Triplet> triplets) {
  CsrMatrix m(rows, cols);
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  std::vector<int> counts(rows, 0);
  m.col_indices_.reserve(triplets.size());
  m.values_.reserve(triplets.size());
  size_t i = 0;
  while (i < triplets.size()) {
    const int r = triplets[i].row;
    const int c = triplets[i].col;
    if (r < 0 || r >= rows || c < 0 || c >= cols)
      fail(ErrorCode::InvalidArgument, "triplet index out of range");
    Scalar sum = 0.0;
    while (i < triplets.size() && triplets[i].row == r && triplets[i].col == c)
      sum += triplets[i++].value;
    if (sum != 0.0) {
      m.col_indices_.push_back(c);
      m.values_.push_back(sum);
      ++counts[r];
    }
  }
  for (int r = 0; r < rows; ++r) m.row_offsets_[r + 1] = m.row_offsets_[r] + counts[r];
  return m;
}

VecX CsrMatrix::multiply(const VecX& x) const {
  VecX y = VecX::Zero(rows_);
  multiply_add(x, 1.0, y);
  return y;
}

void CsrMatrix::multiply_add(const VecX& x, Scalar alpha, VecX& y) const {
  for (int r = 0; r < rows_; ++r) {
    Scalar acc = 0.0;
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k)
      acc += values_[k] * x[col_indices_[k]];
    y[r] += alpha * acc;
  }
}

VecX CsrMatrix::multiply_transpose(const VecX& x) const {
  VecX y = VecX::Zero(cols_);
  for (int r = 0; r < rows_; ++r) {
    const Scalar xr = x[r];
    if (xr == 0.0) continue;
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k)
      y[col_indices_[k]] += values_[k] * xr;
  }
  return y;
}

CsrMatrix CsrMatrix::transposed() const {
  CsrMatrix t(cols_, rows_);
  std::vector<int> counts(cols_, 0);
  for (int c : col_indices_) ++counts[c];
  for (int c = 0; c < cols_; ++c) t.row_offsets_[c + 1] = t.row_offsets_[c] + counts[c];
  t.col_indices_.resize(values_.size());
  t.values_.resize(values_.size());
  std::vector<int> cursor(t.row_offsets_.begin(), t.row_offsets_.end() - 1);
  for (int r = 0; r < rows_; ++r) {
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
      const int pos = cursor[col_indices_[k]]++;
      t.col_indices_[pos] = r;
      t.values_[pos] = values_[k];
    }
  }
  return t;
}

CsrMatrix CsrMatrix::submatrix(const std::vector<int>& row_map, int new_rows,
                               const std::vector<int>& col_map, int new_cols) const {
  std::vector<Triplet> trips;
  for (int r = 0; r < rows_; ++r) {
    if (row_map[r] < 0) continue;
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
      const int c = col_map[col_indices_[k]];
      if (c < 0) continue;
      trips.push_back({row_map[r], c, values_[k]});
    }
  }
  return from_triplets(new_rows, new_cols, std::move(trips));
}

Scalar CsrMatrix::coeff(int row, int col) const {
  for (int k = row_offsets_[row]; k < row_offsets_[row + 1]; ++k)
    if (col_indices_[k] == col) return values_[k];
  return 0.0;
}

MatX CsrMatrix::to_dense() const {
  MatX d = MatX::Zero(rows_, cols_);
  for (int r = 0; r < rows_; ++r)
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k)
      d(r, col_indices_[k]) = values_[k];
  return d;
}

}  // namespace heterodyn
