#pragma once
// Persistent factorization of the scalar global operator. The inverse is kept
// as an explicit sparse factor S with A^{-1} = S^T S (S = D^{-1/2} L^{-1} P
// from P A P^T = L D L^T), so every inverse application is two sparse
// matrix-vector products and Delassus operators reduce to column extraction.

#include "csr.hpp"
#include "material.hpp"
#include "mesh.hpp"

namespace heterodyn {

class SparseFactor {
 public:
  // Factorizes a symmetric positive definite scalar matrix. Throws
  // NotPositiveDefinite when any pivot is <= 0.
  void factorize(const CsrMatrix& a);

  int size() const { return n_; }
  bool ready() const { return n_ > 0; }

  // w = A^{-1} v via the two-product pipeline S^T (S v).
  VecX apply_inverse(const VecX& v) const;

  // Sparse column of S for original index j (pairs of permuted row / value);
  // support is j's elimination-tree ancestor path.
  const std::vector<std::pair<int, Scalar>>& s_column(int j) const { return s_columns_[j]; }

  // Dense u = A^{-1} e_v, assembled from the cached S column (no SpMV with v).
  VecX inverse_column(int v) const;

  const CsrMatrix& s_factor() const { return s_; }
  const CsrMatrix& s_transpose() const { return s_t_; }
  int s_nnz() const { return s_.nnz(); }
  Scalar s_fill_ratio() const { return n_ ? Scalar(s_.nnz()) / (Scalar(n_) * n_) : 0.0; }
  const std::string& ordering_name() const { return ordering_name_; }
  Scalar factor_millis() const { return factor_millis_; }

  mutable std::uint64_t apply_inverse_count = 0;

 private:
  int n_ = 0;
  std::vector<int> perm_;  // perm_[original] = elimination position
  CsrMatrix s_;            // rows: permuted, cols: original
  CsrMatrix s_t_;
  std::vector<std::vector<std::pair<int, Scalar>>> s_columns_;
  std::string ordering_name_ = "none";
  Scalar factor_millis_ = 0.0;
};

// A row of the contact Jacobian: a unit-spike over one free vertex with a
// 3-vector direction.
struct SpikeRow {
  int free_vertex = 0;  // index into the free-vertex list
  Vec3 direction = Vec3::Zero();
};

struct DelassusResult {
  MatX w;                         // K x K dense, symmetric PSD
  std::vector<VecX> columns;      // a_c = A^{-1} j_c, each 3*n_free long
  std::vector<VecX> scalar_cols;  // per unique vertex u_v = A_s^{-1} e_v
};

struct FactorSignature {
  std::uint64_t topology = 0;
  std::uint64_t material = 0;
  std::uint64_t dirichlet = 0;
  Scalar alpha = 0.0;
  Scalar beta0 = 0.0;
  Scalar h = 0.0;
  bool matches(const FactorSignature& o) const {
    return topology == o.topology && material == o.material && dirichlet == o.dirichlet &&
           alpha == o.alpha && beta0 == o.beta0 && h == o.h;
  }
};

// Scalar global operator (one axis block):
//   A = (1 + alpha*h) M / h^2 + sum_e (w_e + beta_e/h) V_e g_e g_e^T
// assembled over all vertices.
CsrMatrix assemble_global_scalar(const TetMesh& mesh, const MaterialField& material, Scalar h);

// Owns the assembled free/fixed blocks, the sparse factor, and the staleness
// signature; refreshes itself only when mesh topology, material version,
// damping, or the step size change.
class GlobalSystem {
 public:
  // fixed_vertices: sorted unique vertex ids with prescribed positions.
  // Returns true when a refactorization happened.
  bool refresh(const TetMesh& mesh, const MaterialField& material, Scalar h,
               const std::vector<int>& fixed_vertices);

  bool ready() const { return factor_.ready(); }
  const SparseFactor& factor() const { return factor_; }
  const CsrMatrix& a_free() const { return a_ff_; }
  const CsrMatrix& a_free_fixed() const { return a_fd_; }

  int free_count() const { return static_cast<int>(free_.size()); }
  const std::vector<int>& free_vertices() const { return free_; }
  const std::vector<int>& fixed_vertices() const { return fixed_; }
  int free_index(int vertex) const { return vertex_to_free_[vertex]; }

  // Gather/scatter between full dof vectors (3*n_v) and per-axis free scalars.
  VecX gather_free(const VecX& full, int axis) const;
  void scatter_free(const VecX& scalar, int axis, VecX& full) const;

  // Solves A x = rhs on the free DoFs of all three axes; rhs and result are
  // full dof vectors (fixed entries of the result are copied from `fixed_q`).
  VecX solve_free(const VecX& rhs_full, const VecX& fixed_q) const;

  // y = A_ff x over stacked free DoFs (3 * n_free, vertex-major xyz).
  VecX apply_a_free(const VecX& x_free) const;
  // Flatten/unflatten between full dof vectors and stacked free vectors.
  VecX restrict_free(const VecX& full) const;
  void expand_free(const VecX& free_vec, VecX& full) const;

  // Batched Delassus over unit-spike rows; also caches scalar columns.
  DelassusResult delassus(const std::vector<SpikeRow>& rows) const;

  std::uint64_t refactor_count() const { return refactor_count_; }
  const FactorSignature& signature() const { return signature_; }
  mutable std::uint64_t a_spmv_count = 0;

 private:
  FactorSignature signature_;
  bool has_signature_ = false;
  std::vector<int> free_, fixed_, vertex_to_free_;
  CsrMatrix a_full_, a_ff_, a_fd_;
  SparseFactor factor_;
  std::uint64_t refactor_count_ = 0;
};

std::uint64_t hash_fixed_set(const std::vector<int>& fixed_vertices);

}  // namespace heterodyn
