#include "factor.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <chrono>

#include "ordering.hpp"

namespace heterodyn {

void SparseFactor::factorize(const CsrMatrix& a) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  if (a.rows() != a.cols()) fail(ErrorCode::InvalidArgument, "factorize: matrix must be square");
  n_ = a.rows();

  // Fill-reducing order over the sparsity graph.
  std::vector<std::vector<int>> adj(n_);
  for (int r = 0; r < n_; ++r)
    for (int k = a.row_offsets()[r]; k < a.row_offsets()[r + 1]; ++k) {
      const int c = a.col_indices()[k];
      if (c != r) adj[r].push_back(c);
    }
  const OrderingResult ordering = nested_dissection_order(adj);
  ordering_name_ = ordering.used_fallback ? "nested-dissection+min-degree-fallback"
                                          : "nested-dissection";
  perm_.assign(n_, 0);
  for (int pos = 0; pos < n_; ++pos) perm_[ordering.order[pos]] = pos;

  // Permuted matrix, numeric LDL^T with the ordering already applied.
  std::vector<Eigen::Triplet<Scalar>> trips;
  trips.reserve(a.nnz());
  for (int r = 0; r < n_; ++r)
    for (int k = a.row_offsets()[r]; k < a.row_offsets()[r + 1]; ++k)
      trips.emplace_back(perm_[r], perm_[a.col_indices()[k]], a.values()[k]);
  Eigen::SparseMatrix<Scalar> ap(n_, n_);
  ap.setFromTriplets(trips.begin(), trips.end());

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<Scalar>, Eigen::Lower, Eigen::NaturalOrdering<int>>
      ldlt;
  ldlt.compute(ap);
  if (ldlt.info() != Eigen::Success)
    fail(ErrorCode::NotPositiveDefinite, "sparse LDLT factorization failed");
  const VecX d = ldlt.vectorD();
  for (int i = 0; i < n_; ++i)
    if (!(d[i] > 0.0))
      fail(ErrorCode::NotPositiveDefinite,
           "non-positive pivot " + std::to_string(d[i]) + " at position " + std::to_string(i));
  Eigen::SparseMatrix<Scalar> l = ldlt.matrixL();
  l.makeCompressed();

  // Elimination tree: parent(j) = first below-diagonal row in column j of L.
  std::vector<int> parent(n_, -1);
  for (int j = 0; j < n_; ++j) {
    for (Eigen::SparseMatrix<Scalar>::InnerIterator it(l, j); it; ++it) {
      if (it.row() > j) {
        parent[j] = static_cast<int>(it.row());
        break;
      }
    }
  }

  // Column j of S = D^{-1/2} L^{-1} e_{perm(j)}: forward substitution whose
  // support is the ancestor path of perm(j) in the elimination tree.
  VecX dinv_sqrt(n_);
  for (int i = 0; i < n_; ++i) dinv_sqrt[i] = 1.0 / std::sqrt(d[i]);
  s_columns_.assign(n_, {});
  std::vector<Scalar> work(n_, 0.0);
  std::vector<int> path;
  std::vector<char> on_path(n_, 0);
  for (int j = 0; j < n_; ++j) {
    path.clear();
    for (int v = perm_[j]; v >= 0; v = parent[v]) {
      path.push_back(v);
      on_path[v] = 1;
    }
    work[perm_[j]] = 1.0;
    auto& column = s_columns_[j];
    column.reserve(path.size());
    for (int v : path) {  // ascending along the path by construction
      const Scalar xv = work[v];
      if (xv != 0.0) {
        for (Eigen::SparseMatrix<Scalar>::InnerIterator it(l, v); it; ++it) {
          const int r = static_cast<int>(it.row());
          if (r > v && on_path[r]) work[r] -= it.value() * xv;
        }
        column.emplace_back(v, xv * dinv_sqrt[v]);
      }
    }
    for (int v : path) {
      work[v] = 0.0;
      on_path[v] = 0;
    }
  }

  // Assemble S^T (rows = original indices, cols = permuted) then transpose.
  std::vector<Triplet> st_trips;
  for (int j = 0; j < n_; ++j)
    for (const auto& [row, val] : s_columns_[j]) st_trips.push_back({j, row, val});
  s_t_ = CsrMatrix::from_triplets(n_, n_, std::move(st_trips));
  s_ = s_t_.transposed();
  factor_millis_ =
      std::chrono::duration<Scalar, std::milli>(Clock::now() - t0).count();
}

VecX SparseFactor::apply_inverse(const VecX& v) const {
  ++apply_inverse_count;
  return s_t_.multiply(s_.multiply(v));
}

VecX SparseFactor::inverse_column(int v) const {
  VecX u = VecX::Zero(n_);
  for (const auto& [row, val] : s_columns_[v]) {
    // u += val * (row `row` of S) == S^T (S e_v) accumulated column-wise.
    for (int k = s_.row_offsets()[row]; k < s_.row_offsets()[row + 1]; ++k)
      u[s_.col_indices()[k]] += val * s_.values()[k];
  }
  return u;
}

CsrMatrix assemble_global_scalar(const TetMesh& mesh, const MaterialField& material, Scalar h) {
  if (h <= 0.0) fail(ErrorCode::Validation, "step size must be positive");
  const int nv = mesh.vertex_count();
  std::vector<Triplet> trips;
  trips.reserve(nv + mesh.element_count() * 16);
  const Scalar inertia_scale = (1.0 + material.alpha() * h) / (h * h);
  for (int v = 0; v < nv; ++v) trips.push_back({v, v, inertia_scale * mesh.vertex_mass(v)});
  for (int e = 0; e < mesh.element_count(); ++e) {
    const Scalar w = (material.total_weight(e) + material.beta(e) / h) * mesh.volume(e);
    const auto& g = mesh.shape_gradient(e);
    const auto& el = mesh.elements()[e];
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) trips.push_back({el[i], el[j], w * g.row(i).dot(g.row(j))});
  }
  return CsrMatrix::from_triplets(nv, nv, std::move(trips));
}

std::uint64_t hash_fixed_set(const std::vector<int>& fixed_vertices) {
  std::uint64_t h = 1469598103934665603ull;
  for (int v : fixed_vertices) {
    h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull;
    h *= 1099511628211ull;
  }
  return h;
}

bool GlobalSystem::refresh(const TetMesh& mesh, const MaterialField& material, Scalar h,
                           const std::vector<int>& fixed_vertices) {
  FactorSignature sig;
  sig.topology = mesh.topology_id();
  sig.material = material.version();
  sig.dirichlet = hash_fixed_set(fixed_vertices);
  sig.alpha = material.alpha();
  sig.beta0 = material.beta0();
  sig.h = h;
  if (has_signature_ && signature_.matches(sig) && factor_.ready()) return false;

  const int nv = mesh.vertex_count();
  vertex_to_free_.assign(nv, -1);
  fixed_ = fixed_vertices;
  std::vector<char> is_fixed(nv, 0);
  for (int v : fixed_) is_fixed[v] = 1;
  free_.clear();
  for (int v = 0; v < nv; ++v)
    if (!is_fixed[v]) {
      vertex_to_free_[v] = static_cast<int>(free_.size());
      free_.push_back(v);
    }
  if (free_.empty()) fail(ErrorCode::Validation, "all vertices are constrained");

  a_full_ = assemble_global_scalar(mesh, material, h);
  std::vector<int> row_map(nv, -1), col_map_fixed(nv, -1);
  for (size_t i = 0; i < free_.size(); ++i) row_map[free_[i]] = static_cast<int>(i);
  for (size_t i = 0; i < fixed_.size(); ++i) col_map_fixed[fixed_[i]] = static_cast<int>(i);
  a_ff_ = a_full_.submatrix(row_map, static_cast<int>(free_.size()), row_map,
                            static_cast<int>(free_.size()));
  a_fd_ = a_full_.submatrix(row_map, static_cast<int>(free_.size()), col_map_fixed,
                            static_cast<int>(fixed_.size()));
  factor_.factorize(a_ff_);
  signature_ = sig;
  has_signature_ = true;
  ++refactor_count_;
  return true;
}

VecX GlobalSystem::gather_free(const VecX& full, int axis) const {
  VecX out(free_.size());
  for (size_t i = 0; i < free_.size(); ++i) out[i] = full[3 * free_[i] + axis];
  return out;
}

void GlobalSystem::scatter_free(const VecX& scalar, int axis, VecX& full) const {
  for (size_t i = 0; i < free_.size(); ++i) full[3 * free_[i] + axis] = scalar[i];
}

VecX GlobalSystem::solve_free(const VecX& rhs_full, const VecX& fixed_q) const {
  VecX result = fixed_q;
  VecX qd(fixed_.size());
  for (int axis = 0; axis < 3; ++axis) {
    VecX rhs = gather_free(rhs_full, axis);
    if (!fixed_.empty()) {
      for (size_t i = 0; i < fixed_.size(); ++i) qd[i] = fixed_q[3 * fixed_[i] + axis];
      a_fd_.multiply_add(qd, -1.0, rhs);
    }
    scatter_free(factor_.apply_inverse(rhs), axis, result);
  }
  return result;
}

VecX GlobalSystem::apply_a_free(const VecX& x_free) const {
  ++a_spmv_count;
  const int nf = free_count();
  VecX y(3 * nf);
  VecX xa(nf), ya(nf);
  for (int axis = 0; axis < 3; ++axis) {
    for (int i = 0; i < nf; ++i) xa[i] = x_free[3 * i + axis];
    ya = a_ff_.multiply(xa);
    for (int i = 0; i < nf; ++i) y[3 * i + axis] = ya[i];
  }
  return y;
}

VecX GlobalSystem::restrict_free(const VecX& full) const {
  const int nf = free_count();
  VecX out(3 * nf);
  for (int i = 0; i < nf; ++i)
    for (int a = 0; a < 3; ++a) out[3 * i + a] = full[3 * free_[i] + a];
  return out;
}

void GlobalSystem::expand_free(const VecX& free_vec, VecX& full) const {
  const int nf = free_count();
  for (int i = 0; i < nf; ++i)
    for (int a = 0; a < 3; ++a) full[3 * free_[i] + a] = free_vec[3 * i + a];
}

DelassusResult GlobalSystem::delassus(const std::vector<SpikeRow>& rows) const {
  DelassusResult res;
  const int k = static_cast<int>(rows.size());
  res.w = MatX::Zero(k, k);
  if (k == 0) return res;

  // Unique free vertices referenced by the rows.
  std::vector<int> unique;
  std::vector<int> slot(free_count(), -1);
  for (const auto& row : rows) {
    if (slot[row.free_vertex] < 0) {
      slot[row.free_vertex] = static_cast<int>(unique.size());
      unique.push_back(row.free_vertex);
    }
  }

  // Batched path: the S-column of a unit spike IS the spike's column of S, so
  // the scalar Gram matrix comes from sparse column dot products and the
  // cached inverse columns from one column-wise accumulation each.
  const int nu = static_cast<int>(unique.size());
  MatX gram(nu, nu);
  std::vector<VecX> dense_cols(nu);
  for (int a = 0; a < nu; ++a) {
    dense_cols[a] = VecX::Zero(free_count());
    for (const auto& [row, val] : factor_.s_column(unique[a])) dense_cols[a][row] = val;
  }
  for (int a = 0; a < nu; ++a)
    for (int b = a; b < nu; ++b) {
      Scalar dot = 0.0;
      const auto& col = factor_.s_column(unique[a]);
      for (const auto& [row, val] : col) dot += val * dense_cols[b][row];
      gram(a, b) = gram(b, a) = dot;
    }
  res.scalar_cols.resize(nu);
  for (int a = 0; a < nu; ++a) res.scalar_cols[a] = factor_.inverse_column(unique[a]);

  for (int c = 0; c < k; ++c)
    for (int d = c; d < k; ++d) {
      const Scalar v = rows[c].direction.dot(rows[d].direction) *
                       gram(slot[rows[c].free_vertex], slot[rows[d].free_vertex]);
      res.w(c, d) = res.w(d, c) = v;
    }

  res.columns.resize(k);
  for (int c = 0; c < k; ++c) {
    const VecX& u = res.scalar_cols[slot[rows[c].free_vertex]];
    VecX col(3 * free_count());
    for (int i = 0; i < free_count(); ++i)
      for (int a = 0; a < 3; ++a) col[3 * i + a] = u[i] * rows[c].direction[a];
    res.columns[c] = std::move(col);
  }
  return res;
}

}  // namespace heterodyn
