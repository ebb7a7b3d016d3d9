#pragma once

#include "forward.hpp"

namespace heterodyn {

// Loss sensitivities flowing into a step from the future: dL/dq_{t+1} and
// dL/dv_{t+1}, both full-length DoF vectors.
struct AdjointSeed {
  VecX dl_dq_next;
  VecX dl_dv_next;
};

// Gradients of the loss with respect to the inputs of one step.  Positional,
// velocity and force entries are full DoF vectors; per-element weight
// gradients hold one scalar per element for single-constraint materials and
// two (rotation block first, volume block second) for composite ones.
struct GradientBundle {
  VecX dl_dq_t;
  VecX dl_dv_t;
  VecX dl_df_ext;
  VecX dl_dw;
  VecX dl_de;
  Scalar tau_used = 1;
  Scalar tr_ratio = 1;
  int adjoint_iterations = 0;
  bool contact_path = false;
};

// Incremental objective whose stationary points the forward iteration seeks:
// inertia (free DoFs, M-weighted distance to the unconstrained target) plus
// the per-element model elastic energy.  Throws NonPositiveJacobian if any
// element is inverted at q.
Scalar primal_energy(const TetMesh& mesh, const MaterialField& material,
                     const GlobalSystem& system, const VecX& q,
                     const VecX& q_tilde, Scalar h);

// Trust-region ratio over the last accepted increment: compares the actual
// objective decrease against the quadratic model built from the system
// matrix, and selects the Hessian blend parameter for this step's
// linearisation.  Performs exactly one system-matrix product.  Returns
// {tau, rho}.
struct TrSelection {
  Scalar tau = 1;
  Scalar rho = 1;
};
TrSelection tr_select_tau(const TetMesh& mesh, const MaterialField& material,
                          const GlobalSystem& system, const ForwardCache& cache,
                          Scalar eps_tr);

// Sparse symmetric linearisation of the element-force side of the step
// equations at the converged state: sum over elements of
// w_e V_e G_e^T (dP*/dF) G_e, with the projection differential blended by
// tau for stretch-based materials.
struct DbDqOperator {
  CsrMatrix matrix;  // dof_count x dof_count, symmetric
  VecX apply(const VecX& dq) const;
  VecX apply_transpose(const VecX& dq) const;  // == apply (symmetric)
};
DbDqOperator assemble_db_dq(const TetMesh& mesh, const MaterialField& material,
                            const ForwardCache& cache, Scalar tau);

// Output of the linear adjoint stage.  mu is the backbone adjoint (zero at
// fixed DoFs); y_q = A mu restricted-expanded the same way; y_lambda holds one
// multiplier adjoint per contact row when the step had contacts.
struct AdjointResult {
  VecX mu;
  VecX y_q;
  VecX y_lambda;
  VecX b_mu;  // element-force linearisation applied to mu (all DoFs)
  int iterations = 0;
  bool contact_path = false;
};

// Solves the transposed step linearisation for the backbone adjoint.  Without
// contacts this is the preconditioned fixed point mu <- A^{-1}(s + B mu);
// with contacts the multiplier block is eliminated exactly through a reduced
// dense system built on the tangent Delassus operator, re-using the cached
// constraint columns as warm starts.  Throws AdjointDiverged if the fixed
// point fails to settle.
AdjointResult adjoint_solve(const GlobalSystem& system, const DbDqOperator& db_dq,
                            const ForwardCache& cache, const VecX& seed_full);

// Accumulates the adjoint into input-space gradients (state, force, per-element
// weights, stiffness moduli).  hook may be null.
GradientBundle route_gradients(const TetMesh& mesh, const MaterialField& material,
                               const GlobalSystem& system, const ForwardCache& cache,
                               const AdjointResult& adj, const AdjointSeed& seed,
                               const StateForce* hook);

// One reverse step: trust-region selection, linearisation, adjoint solve and
// gradient routing for the step recorded in cache.  Never mutates the cache or
// the factorisation (counters aside).
GradientBundle backward_step(const TetMesh& mesh, const MaterialField& material,
                             const GlobalSystem& system, const ForwardCache& cache,
                             const AdjointSeed& seed, const StateForce* hook,
                             Scalar eps_tr);

}  // namespace heterodyn
