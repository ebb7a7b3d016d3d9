#include "forward.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace heterodyn {

namespace {

// vec(P) with column-major stacking, matching the element operator layout.
Eigen::Matrix<Scalar, 9, 1> vec3x3(const Mat3& p) {
  return Eigen::Map<const Eigen::Matrix<Scalar, 9, 1>>(p.data());
}

}  // namespace

VecX AaHistory::mix(const VecX& q_prev, const VecX& g) {
  guard_tripped_ = false;
  if (has_last_) {
    dq_.push_back(q_prev - last_q_);
    dg_.push_back(g - last_g_);
    while (static_cast<int>(dq_.size()) > window_) {
      dq_.pop_front();
      dg_.pop_front();
    }
  }
  last_q_ = q_prev;
  last_g_ = g;
  has_last_ = true;
  if (dq_.empty()) return q_prev + g;

  const int cols = static_cast<int>(dq_.size());
  MatX dg_mat(g.size(), cols);
  for (int c = 0; c < cols; ++c) dg_mat.col(c) = dg_[c];
  // Tikhonov term scaled to the residual-difference magnitudes so the
  // least-squares solve stays conditioned at any residual scale; an absolute
  // floor here would freeze the extrapolation once residuals get small.
  const Scalar fro2 = dg_mat.squaredNorm();
  if (fro2 <= Scalar(0)) return q_prev + g;
  MatX gram = dg_mat.transpose() * dg_mat;
  gram.diagonal().array() += Scalar(1e-6) * fro2 / Scalar(window_);
  const VecX gamma = gram.ldlt().solve(dg_mat.transpose() * g);
  if (!(gamma.norm() <= guard_limit_)) {
    clear();
    guard_tripped_ = true;
    return q_prev + g;
  }
  VecX out = q_prev + g;
  for (int c = 0; c < cols; ++c) out -= gamma[c] * (dq_[c] + dg_[c]);
  return out;
}

void AaHistory::clear() {
  dq_.clear();
  dg_.clear();
  has_last_ = false;
}

VecX free_fall_target(const TetMesh& mesh, const SimState& state,
                      const VecX& f_ext, const StateForce* hook, Scalar h) {
  if (!(h > 0)) fail(ErrorCode::InvalidArgument, "step size must be positive");
  VecX force = f_ext;
  if (hook != nullptr && hook->force) {
    force += hook->force(state.q, state.v);
  }
  return state.q + h * state.v +
         (h * h) * force.cwiseQuotient(mesh.lumped_mass());
}

std::vector<ElementProjection> local_solve(const TetMesh& mesh,
                                           const MaterialField& material,
                                           const VecX& q) {
  const int n_e = mesh.element_count();
  std::vector<ElementProjection> out(n_e);
  const ProxMeans means = material.prox_means();
  const bool corotated = material.kind() == EnergyKind::Corotated;
  const bool barrier = material.log_volume_barrier();
  parallel_for(n_e, [&](int e) {
    const Mat3 f = deformation_gradient(mesh, e, q);
    ElementProjection& p = out[e];
    if (corotated) {
      p.primary = corotated_project(f);
      p.secondary = barrier
                        ? log_barrier_prox(f, material.mu(e),
                                           material.lambda(e))
                        : volume_project(f);
      p.has_secondary = true;
    } else {
      p.primary = nh_prox(f, means.mu, means.lambda, means.stiffness);
      p.has_secondary = false;
    }
  });
  return out;
}

VecX pd_rhs(const TetMesh& mesh, const MaterialField& material,
            const VecX& q_tilde,
            const std::vector<ElementProjection>& projections, Scalar h) {
  VecX b = mesh.lumped_mass().cwiseProduct(q_tilde) / (h * h);
  const bool corotated = material.kind() == EnergyKind::Corotated;
  for (int e = 0; e < mesh.element_count(); ++e) {
    const ElementProjection& p = projections[e];
    Eigen::Matrix<Scalar, 9, 1> target;
    if (corotated) {
      target = material.rotation_weight(e) * vec3x3(p.primary.p_star) +
               material.volume_weight(e) * vec3x3(p.secondary.p_star);
    } else {
      target = material.total_weight(e) * vec3x3(p.primary.p_star);
    }
    const ElementOperator op = element_operator(mesh, e);
    const Eigen::Matrix<Scalar, 12, 1> local =
        mesh.volume(e) * (op.transpose() * target);
    const std::array<int, 12> dofs = mesh.element_dofs(e);
    for (int i = 0; i < 12; ++i) b[dofs[i]] += local[i];
  }
  return b;
}

VecX damping_rhs(const TetMesh& mesh, const MaterialField& material,
                 const VecX& q_t, Scalar h) {
  VecX d = VecX::Zero(q_t.size());
  if (material.alpha() > 0) {
    d += (material.alpha() / h) * mesh.lumped_mass().cwiseProduct(q_t);
  }
  if (material.beta0() > 0) {
    for (int e = 0; e < mesh.element_count(); ++e) {
      if (material.beta(e) == 0) continue;
      const Mat3 f_t = deformation_gradient(mesh, e, q_t);
      const ElementOperator op = element_operator(mesh, e);
      const Eigen::Matrix<Scalar, 12, 1> local =
          (material.beta(e) * mesh.volume(e) / h) *
          (op.transpose() * vec3x3(f_t));
      const std::array<int, 12> dofs = mesh.element_dofs(e);
      for (int i = 0; i < 12; ++i) d[dofs[i]] += local[i];
    }
  }
  return d;
}

bool dual_gate(const VecX& q_k, const VecX& q_k1, const VecX& b_k,
               const VecX& b_k1, Scalar eps_rel, Scalar eps_abs, int k) {
  if (k < 1) return false;
  const bool q_ok = (q_k1 - q_k).norm() <= eps_rel * q_k.norm() + eps_abs;
  const bool b_ok = (b_k1 - b_k).norm() <= eps_rel * b_k1.norm() + eps_abs;
  return q_ok && b_ok;
}

ForwardCache forward_step(const TetMesh& mesh, const MaterialField& material,
                          GlobalSystem& system, const SolverConfig& config,
                          const std::vector<Obstacle>& obstacles,
                          const std::vector<int>& fixed_vertices,
                          SimState& state, const VecX& f_ext,
                          const StateForce* hook) {
  const Scalar h = config.h;
  system.refresh(mesh, material, h, fixed_vertices);

  ForwardCache cache;
  cache.h = h;
  cache.q_t = state.q;
  cache.v_t = state.v;
  cache.f_ext = f_ext;
  cache.q_tilde = free_fall_target(mesh, state, f_ext, hook, h);

  // Pinned vertices keep their start-of-step coordinates everywhere below.
  auto pin = [&](VecX& q) {
    for (int v : system.fixed_vertices()) {
      q.segment<3>(3 * v) = state.q.segment<3>(3 * v);
    }
  };

  std::vector<char> vertex_free(mesh.vertex_count(), 1);
  for (int v : system.fixed_vertices()) vertex_free[v] = 0;
  cache.contacts = detect_contacts(mesh, cache.q_tilde, obstacles,
                                   config.contact_margin, vertex_free);
  ContactSet& set = cache.contacts;
  const int k_rows = set.row_count();

  DelassusResult del;
  if (k_rows > 0) {
    std::vector<SpikeRow> rows = set.rows();
    for (SpikeRow& r : rows) r.free_vertex = system.free_index(r.free_vertex);
    del = system.delassus(rows);
    for (int c = 0; c < set.normal_count(); ++c) {
      const int nr = set.normal_row(c);
      set.contacts[c].r_n = h * h * del.w(nr, nr);
    }
    const std::vector<int> fidx = set.friction_contacts();
    for (int f = 0; f < static_cast<int>(fidx.size()); ++f) {
      const int fr = set.friction_row(f);
      set.contacts[fidx[f]].r_f =
          h * h * Scalar(0.5) * (del.w(fr, fr) + del.w(fr + 1, fr + 1));
    }
  }

  // Contact-force position correction on top of the contact-free solve.
  auto contact_corrected = [&](const VecX& q0_full, const WeightSet& w,
                               const VecX& lambda) {
    VecX stacked = VecX::Zero(3 * system.free_count());
    for (int c = 0; c < k_rows; ++c) {
      const Scalar coef = w.omega[c] * lambda[c];
      if (coef != 0) stacked += coef * del.columns[c];
    }
    VecX corr = VecX::Zero(q0_full.size());
    system.expand_free(stacked, corr);
    return VecX(q0_full + corr);
  };

  const VecX damp = damping_rhs(mesh, material, state.q, h);
  VecX lambda = set.zero_multipliers();
  VecX q_cur = cache.q_tilde;
  pin(q_cur);
  VecX q_prev_iterate = q_cur;
  VecX b_prev;

  int window = config.aa_window;
  if (window <= 0) window = material.weight_contrast() > Scalar(10) ? 1 : 5;
  AaHistory aa(window);

  bool converged = false;
  int iterations = 0;
  WeightSet weights;
  for (int k = 0; k < config.k_max; ++k) {
    const std::vector<ElementProjection> proj =
        local_solve(mesh, material, q_cur);
    VecX b = pd_rhs(mesh, material, cache.q_tilde, proj, h) + damp;
    const VecX q0_full = system.solve_free(b, state.q);
    VecX q_hat;
    if (k_rows > 0) {
      weights = contact_weights(set, q_cur, state.q, lambda);
      const VecX q_mid = contact_corrected(q0_full, weights, lambda);
      const VecX h_vec = offset_vector(set, weights, state.q);
      lambda = contact_iteration(set, del.w, weights, h_vec,
                                 set.constraint_values(q_mid), lambda);
      q_hat = contact_corrected(q0_full, weights, lambda);
    } else {
      q_hat = q0_full;
    }
    VecX q_next = aa.mix(q_cur, q_hat - q_cur);
    pin(q_next);
    ++iterations;
    const bool gate =
        dual_gate(q_cur, q_next, b_prev, b, config.eps_rel, config.eps_abs, k);
    q_prev_iterate = q_cur;
    q_cur = q_next;
    b_prev = std::move(b);
    if (gate) {
      converged = true;
      break;
    }
  }

  cache.q_prev_iterate = q_prev_iterate;
  cache.q_star = q_cur;
  cache.v_star = (q_cur - state.q) / h;
  cache.iteration_count = iterations;
  cache.converged = converged;
  cache.lambda_star = lambda;
  if (k_rows > 0) {
    cache.weights_star = contact_weights(set, q_cur, state.q, lambda);
    cache.delassus = del.w;
    cache.cached_columns = del.columns;
  }
  // Projections, rhs, and weights re-evaluated at the converged point so the
  // adjoint pass linearizes exactly where the step landed.
  cache.projections = local_solve(mesh, material, q_cur);
  cache.b_star = pd_rhs(mesh, material, cache.q_tilde, cache.projections, h) + damp;

  state.q = cache.q_star;
  state.v = cache.v_star;
  state.time += h;
  return cache;
}

}  // namespace heterodyn
