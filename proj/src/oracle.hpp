#pragma once
// Independent dense reference implementations used only by tests and
// acceptance runs: a projected-Newton minimizer of the incremental objective,
// finite-difference gradients, a dense SPD inverse, and a dense transposed
// step-Jacobian adjoint.  Deliberately slow; capped at small scenes.

#include <functional>

#include "backward.hpp"

namespace heterodyn {

enum class NewtonFilter { None, Clamp, Abs };

struct NewtonConfig {
  NewtonFilter filter = NewtonFilter::Clamp;
  int max_iters = 200;
  Scalar grad_tol = 1e-10;   // on the free-DoF gradient norm
  Scalar shrink = 0.5;       // line-search backtracking factor
};

// Minimizes the incremental objective (inertia plus model elastic energy)
// over the free DoFs by projected Newton: per-element 12x12 elastic Hessians
// are eigenvalue-filtered per config, assembled densely with the inertia
// diagonal, and solved directly; a backtracking line search guarantees a
// strict objective decrease on every accepted step.  Contact-free; requires a
// refreshed system (for the free/fixed split) and at most 2000 DoF.
VecX newton_solve(const TetMesh& mesh, const MaterialField& material,
                  const GlobalSystem& system, const VecX& q_init,
                  const VecX& q_tilde, Scalar h, const NewtonConfig& config);

// Free-DoF gradient norm of the incremental objective at q (the quantity
// newton_solve drives below grad_tol).
Scalar stationarity_residual(const TetMesh& mesh, const MaterialField& material,
                             const GlobalSystem& system, const VecX& q,
                             const VecX& q_tilde, Scalar h);

// Central finite differences with per-parameter step
// max(rel * |p_i|, floor).  Ground truth for the backward tests.
VecX fd_gradient(const std::function<Scalar(const VecX&)>& loss,
                 const VecX& params, Scalar rel = 1e-6, Scalar floor = 1e-7);

// Dense SPD inverse (n <= 500); NotPositiveDefinite if the Cholesky fails.
MatX dense_inverse(const MatX& a);

// Dense transposed solve of the step linearisation
//   [[A - B, -J^T Omega], [Omega J, E]]^T [z; y] = [seed_free; 0]
// over the free DoFs, for cross-checking adjoint_solve on tiny scenes.
struct DenseAdjoint {
  VecX mu;        // full dof layout, zeros at fixed DoFs
  VecX y_lambda;  // one entry per contact row
};
DenseAdjoint dense_adjoint(const GlobalSystem& system, const DbDqOperator& db_dq,
                           const ForwardCache& cache, const VecX& seed_full);

}  // namespace heterodyn
