// One forward timestep: free-fall target, projective fixed-point loop with
// bounded-window Type-II Anderson acceleration, dual-gate convergence,
// NCP contact coupling through cached factor columns, and the cache consumed
// by the adjoint pass.
#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "contact.hpp"
#include "factor.hpp"
#include "localstep.hpp"
#include "material.hpp"
#include "mesh.hpp"

namespace heterodyn {

struct SolverConfig {
  Scalar h = 0.01;
  Scalar eps_rel = 1e-4;
  Scalar eps_abs = 1e-9;
  int k_max = 500;
  Scalar eps_tr = 0.1;      // trust-region acceptance band (backward pass)
  int aa_window = 0;        // 0 = auto: 1 when weight contrast > 10, else 5
  Scalar contact_margin = 1e-4;
};

struct SimState {
  VecX q;
  VecX v;
  Scalar time = 0;
};

// Optional state-dependent force hook f(q, v) with transposed-Jacobian
// applies for the adjoint pass.  Unset members are treated as zero.
struct StateForce {
  std::function<VecX(const VecX& q, const VecX& v)> force;
  std::function<VecX(const VecX& q, const VecX& v, const VecX& mu)>
      dq_transpose_apply;
  std::function<VecX(const VecX& q, const VecX& v, const VecX& mu)>
      dv_transpose_apply;
};

// Converged per-element projection data.  Neo-Hookean elements use only
// `primary`; corotated elements pair the rotation target (`primary`) with
// the unit-volume or log-barrier target (`secondary`).
struct ElementProjection {
  ProxResult primary;
  ProxResult secondary;
  bool has_secondary = false;
};

// Bounded-window Type-II Anderson mixing with a Tikhonov-regularized
// coefficient solve and a norm guard that restarts the history.
class AaHistory {
 public:
  // guard_limit bounds the mixing-coefficient norm; beyond it the history is
  // discarded and a plain step taken.  The nonlinear forward loop keeps the
  // conservative default; linear consumers (the adjoint backbone) pass a
  // large bound because 1/(1 - rate) grows unbounded as the map stiffens.
  explicit AaHistory(int window, Scalar guard_limit = 10)
      : window_(window < 1 ? 1 : window), guard_limit_(guard_limit) {}

  int window() const { return window_; }
  int stored() const { return static_cast<int>(dq_.size()); }
  bool guard_tripped() const { return guard_tripped_; }

  // q_next from the current accepted iterate and fixed-point step
  // g = T(q_prev) - q_prev; records history diffs internally.
  VecX mix(const VecX& q_prev, const VecX& g);
  void clear();

 private:
  int window_ = 1;
  Scalar guard_limit_ = 10;
  std::deque<VecX> dq_;
  std::deque<VecX> dg_;
  bool has_last_ = false;
  bool guard_tripped_ = false;
  VecX last_q_;
  VecX last_g_;
};

// Everything the adjoint pass needs from one converged step.
struct ForwardCache {
  Scalar h = 0;
  VecX q_t, v_t;          // step inputs
  VecX f_ext;             // external force used for the target
  VecX q_tilde;           // free-fall target
  VecX q_prev_iterate;    // next-to-last accepted iterate
  VecX q_star, v_star;    // converged outputs
  VecX b_star;            // rhs assembled from the converged projections
  std::vector<ElementProjection> projections;  // at q_star
  ContactSet contacts;
  VecX lambda_star;
  WeightSet weights_star;  // NCP weights at the converged state
  MatX delassus;
  std::vector<VecX> cached_columns;  // stacked free-space columns a_c
  int iteration_count = 0;
  bool converged = false;
};

// q~ = q + h v + h^2 M^-1 (f_ext + hook(q, v)).
VecX free_fall_target(const TetMesh& mesh, const SimState& state,
                      const VecX& f_ext, const StateForce* hook, Scalar h);

// Per-element projections at the given configuration (means-only parameters
// for the Neo-Hookean prox; rotation plus volume/barrier for corotated).
std::vector<ElementProjection> local_solve(const TetMesh& mesh,
                                           const MaterialField& material,
                                           const VecX& q);

// b = (M/h^2) q~ + sum_e V_e G_e^T (sum of weighted projection targets).
VecX pd_rhs(const TetMesh& mesh, const MaterialField& material,
            const VecX& q_tilde,
            const std::vector<ElementProjection>& projections, Scalar h);

// Damping correction (alpha M / h) q_t + (1/h) sum_e beta_e V_e G^T G q_t,
// the exact counterpart of the damping terms folded into A: with it, damped
// rest states remain fixed points.
VecX damping_rhs(const TetMesh& mesh, const MaterialField& material,
                 const VecX& q_t, Scalar h);

// True iff k >= 1 and both consecutive-iterate and consecutive-rhs changes
// pass their relative/absolute thresholds.
bool dual_gate(const VecX& q_k, const VecX& q_k1, const VecX& b_k,
               const VecX& b_k1, Scalar eps_rel, Scalar eps_abs, int k);

// Advances `state` by one step of size config.h and emits the adjoint cache.
// Refreshes the factor via its staleness signature first.  When the
// iteration cap is reached the state is still advanced and the cache is
// flagged converged = false.
ForwardCache forward_step(const TetMesh& mesh, const MaterialField& material,
                          GlobalSystem& system, const SolverConfig& config,
                          const std::vector<Obstacle>& obstacles,
                          const std::vector<int>& fixed_vertices,
                          SimState& state, const VecX& f_ext,
                          const StateForce* hook);

}  // namespace heterodyn
