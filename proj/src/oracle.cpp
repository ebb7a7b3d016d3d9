#include "oracle.hpp"

#include <algorithm>
#include <cmath>

namespace heterodyn {

namespace {

using Vec9 = Eigen::Matrix<Scalar, 9, 1>;
using Mat12 = Eigen::Matrix<Scalar, 12, 12>;

Vec9 vec3x3(const Mat3& p) { return Eigen::Map<const Vec9>(p.data()); }

// Gradient of the incremental objective over all DoFs (fixed rows zeroed by
// the caller where needed): (M/h^2)(q - q~) + sum_e w_e V_e G^T (F - P*).
VecX objective_gradient(const TetMesh& mesh, const MaterialField& material,
                        const VecX& q, const VecX& q_tilde, Scalar h,
                        const std::vector<ElementProjection>& projections) {
  VecX grad = mesh.lumped_mass().cwiseProduct(q - q_tilde) / (h * h);
  for (int e = 0; e < mesh.element_count(); ++e) {
    const ElementOperator op = element_operator(mesh, e);
    const std::array<int, 12> dofs = mesh.element_dofs(e);
    Eigen::Matrix<Scalar, 12, 1> q12;
    for (int i = 0; i < 12; ++i) q12[i] = q[dofs[i]];
    const Vec9 f_vec = op * q12;
    Vec9 resid;
    const ElementProjection& p = projections[e];
    if (material.kind() == EnergyKind::NeoHookean) {
      resid = material.total_weight(e) * (f_vec - vec3x3(p.primary.p_star));
    } else {
      resid = material.rotation_weight(e) * (f_vec - vec3x3(p.primary.p_star)) +
              material.volume_weight(e) * (f_vec - vec3x3(p.secondary.p_star));
    }
    const Eigen::Matrix<Scalar, 12, 1> g12 =
        mesh.volume(e) * (op.transpose() * resid);
    for (int i = 0; i < 12; ++i) grad[dofs[i]] += g12[i];
  }
  return grad;
}

// Exact (unfiltered) 9x9 curvature of the element's model elastic density.
Mat9 element_curvature(const MaterialField& material, int e,
                       const ElementProjection& p) {
  if (material.kind() == EnergyKind::NeoHookean) {
    const ProxMeans& m = material.prox_means();
    const ProxHessian hess =
        prox_hessian(p.primary.sigma_star, m.mu, m.lambda, m.stiffness);
    const ProxDifferential diff =
        nh_prox_differential(p.primary, hess, m.stiffness);
    return material.total_weight(e) * (Mat9::Identity() - diff.dense());
  }
  const ProxDifferential rot = polar_differential(p.primary);
  Mat9 curv =
      material.rotation_weight(e) * (Mat9::Identity() - rot.dense());
  const ProxDifferential vol =
      material.log_volume_barrier()
          ? barrier_differential(p.secondary, material.mu(e), material.lambda(e))
          : volume_differential(p.secondary);
  curv += material.volume_weight(e) * (Mat9::Identity() - vol.dense());
  return curv;
}

Mat12 filter_spectrum(const Mat12& h, NewtonFilter filter) {
  if (filter == NewtonFilter::None) return h;
  const Eigen::SelfAdjointEigenSolver<Mat12> eig(h);
  Eigen::Matrix<Scalar, 12, 1> vals = eig.eigenvalues();
  for (int i = 0; i < 12; ++i) {
    vals[i] = filter == NewtonFilter::Clamp ? std::max(vals[i], Scalar(0))
                                            : std::abs(vals[i]);
  }
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

Scalar stationarity_residual(const TetMesh& mesh, const MaterialField& material,
                             const GlobalSystem& system, const VecX& q,
                             const VecX& q_tilde, Scalar h) {
  const std::vector<ElementProjection> projections = local_solve(mesh, material, q);
  const VecX grad = objective_gradient(mesh, material, q, q_tilde, h, projections);
  return system.restrict_free(grad).norm();
}

VecX newton_solve(const TetMesh& mesh, const MaterialField& material,
                  const GlobalSystem& system, const VecX& q_init,
                  const VecX& q_tilde, Scalar h, const NewtonConfig& config) {
  if (mesh.dof_count() > 2000) {
    fail(ErrorCode::InvalidArgument,
         "newton oracle is capped at 2000 DoF (dense assembly)");
  }
  const int nf = system.free_count();
  const int nf3 = 3 * nf;

  VecX q = q_init;
  Scalar phi = primal_energy(mesh, material, system, q, q_tilde, h);

  for (int iter = 0; iter < config.max_iters; ++iter) {
    const std::vector<ElementProjection> projections =
        local_solve(mesh, material, q);
    const VecX grad_full =
        objective_gradient(mesh, material, q, q_tilde, h, projections);
    const VecX grad = system.restrict_free(grad_full);
    if (grad.norm() <= config.grad_tol) return q;

    // Dense assembly: inertia diagonal plus filtered element blocks.
    MatX hess = MatX::Zero(nf3, nf3);
    const VecX mass_free = system.restrict_free(mesh.lumped_mass());
    hess.diagonal() = mass_free / (h * h);
    for (int e = 0; e < mesh.element_count(); ++e) {
      const ElementOperator op = element_operator(mesh, e);
      const Mat12 block = filter_spectrum(
          mesh.volume(e) * (op.transpose() *
                            element_curvature(material, e, projections[e]) * op),
          config.filter);
      const std::array<int, 12> dofs = mesh.element_dofs(e);
      // Map element dofs to stacked free indices; skip fixed rows/cols.
      std::array<int, 12> freed{};
      for (int i = 0; i < 12; ++i) {
        const int v = dofs[i] / 3;
        const int axis = dofs[i] % 3;
        const int fi = system.free_index(v);
        freed[i] = fi < 0 ? -1 : 3 * fi + axis;
      }
      for (int r = 0; r < 12; ++r) {
        if (freed[r] < 0) continue;
        for (int c = 0; c < 12; ++c) {
          if (freed[c] < 0) continue;
          hess(freed[r], freed[c]) += block(r, c);
        }
      }
    }

    VecX step(nf3);
    if (config.filter == NewtonFilter::None) {
      step = hess.ldlt().solve(-grad);
    } else {
      const Eigen::LLT<MatX> llt(hess);
      if (llt.info() != Eigen::Success) {
        fail(ErrorCode::NotPositiveDefinite,
             "filtered newton Hessian failed its Cholesky factorization");
      }
      step = llt.solve(-grad);
    }

    const Scalar slope = grad.dot(step);
    const Scalar g_norm = grad.norm();
    VecX full_step = VecX::Zero(mesh.dof_count());
    system.expand_free(step, full_step);
    Scalar t = 1;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const VecX q_try = q + t * full_step;
      Scalar phi_try;
      bool phi_ok = true;
      try {
        phi_try = primal_energy(mesh, material, system, q_try, q_tilde, h);
      } catch (const Error& err) {
        if (err.code() != ErrorCode::NonPositiveJacobian &&
            err.code() != ErrorCode::ProxDiverged) {
          throw;
        }
        phi_ok = false;
        phi_try = phi;
      }
      // Near the minimizer the objective difference drops below round-off
      // before the gradient does; a strict gradient-norm decrease is then the
      // reliable acceptance signal (Newton contracts the gradient locally).
      bool grad_ok = false;
      if (phi_ok && !(phi_try <= phi + Scalar(1e-4) * t * slope && phi_try < phi)) {
        const std::vector<ElementProjection> try_proj =
            local_solve(mesh, material, q_try);
        const Scalar g_try = system
                                 .restrict_free(objective_gradient(
                                     mesh, material, q_try, q_tilde, h, try_proj))
                                 .norm();
        grad_ok = g_try <= (Scalar(1) - Scalar(1e-4) * t) * g_norm;
      }
      if (phi_ok &&
          ((phi_try <= phi + Scalar(1e-4) * t * slope && phi_try < phi) || grad_ok)) {
        q = q_try;
        phi = phi_try;
        accepted = true;
        break;
      }
      t *= config.shrink;
    }
    if (!accepted) {
      fail(ErrorCode::LineSearchFailed,
           "newton oracle line search could not decrease the objective "
           "(gradient norm " +
               std::to_string(g_norm) + ")");
    }
  }
  const std::vector<ElementProjection> projections = local_solve(mesh, material, q);
  const VecX grad = system.restrict_free(
      objective_gradient(mesh, material, q, q_tilde, h, projections));
  if (grad.norm() <= config.grad_tol) return q;
  fail(ErrorCode::LineSearchFailed,
       "newton oracle exhausted its iteration budget before reaching tolerance");
}

VecX fd_gradient(const std::function<Scalar(const VecX&)>& loss,
                 const VecX& params, Scalar rel, Scalar floor) {
  VecX grad(params.size());
  for (int i = 0; i < params.size(); ++i) {
    const Scalar step = std::max(rel * std::abs(params[i]), floor);
    VecX plus = params, minus = params;
    plus[i] += step;
    minus[i] -= step;
    grad[i] = (loss(plus) - loss(minus)) / (2 * step);
  }
  return grad;
}

MatX dense_inverse(const MatX& a) {
  if (a.rows() != a.cols()) {
    fail(ErrorCode::InvalidArgument, "dense_inverse requires a square matrix");
  }
  if (a.rows() > 500) {
    fail(ErrorCode::InvalidArgument, "dense_inverse is capped at n = 500");
  }
  const Eigen::LLT<MatX> llt(a);
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::NotPositiveDefinite,
         "dense_inverse: matrix is not positive definite");
  }
  return llt.solve(MatX::Identity(a.rows(), a.cols()));
}

DenseAdjoint dense_adjoint(const GlobalSystem& system, const DbDqOperator& db_dq,
                           const ForwardCache& cache, const VecX& seed_full) {
  const int nf3 = 3 * system.free_count();
  if (nf3 > 60) {
    fail(ErrorCode::InvalidArgument,
         "dense_adjoint is a tiny-scene oracle (<= 60 free DoF)");
  }
  const int k = cache.contacts.row_count();
  const int dn = seed_full.size();

  // Dense A - B over stacked free DoFs.
  MatX a_minus_b(nf3, nf3);
  for (int c = 0; c < nf3; ++c) {
    VecX basis = VecX::Zero(nf3);
    basis[c] = 1;
    VecX full = VecX::Zero(dn);
    system.expand_free(basis, full);
    const VecX col =
        system.apply_a_free(basis) - system.restrict_free(db_dq.apply(full));
    a_minus_b.col(c) = col;
  }

  MatX kkt(nf3 + k, nf3 + k);
  kkt.setZero();
  kkt.topLeftCorner(nf3, nf3) = a_minus_b;
  if (k > 0) {
    const std::vector<SpikeRow> rows = cache.contacts.rows();
    MatX j(k, nf3);
    j.setZero();
    for (int r = 0; r < k; ++r) {
      const int fi = system.free_index(rows[r].free_vertex);
      j.block<1, 3>(r, 3 * fi) = rows[r].direction.transpose();
    }
    const VecX& omega = cache.weights_star.omega;
    const VecX& e_diag = cache.weights_star.e_diag;
    kkt.topRightCorner(nf3, k) = -(j.transpose() * omega.asDiagonal());
    kkt.bottomLeftCorner(k, nf3) = omega.asDiagonal() * j;
    kkt.bottomRightCorner(k, k) = MatX(e_diag.asDiagonal());
  }

  VecX rhs = VecX::Zero(nf3 + k);
  rhs.head(nf3) = system.restrict_free(seed_full);
  const VecX sol = kkt.transpose().partialPivLu().solve(rhs);

  DenseAdjoint out;
  out.mu = VecX::Zero(dn);
  system.expand_free(sol.head(nf3), out.mu);
  out.y_lambda = sol.tail(k);
  return out;
}

}  // namespace heterodyn
