// Per-element local projections: corotated polar projection, volume
// projection onto the det-one stretch manifold, the Neo-Hookean proximal
// operator solved by Newton on principal stretches, the optional
// log-volume barrier prox, and closed-form differentials of each map.
//
// All operations are pure functions of per-element inputs and are safe to
// call concurrently from many threads.
#pragma once

#include "common.hpp"

namespace heterodyn {

using Mat9 = Eigen::Matrix<Scalar, 9, 9>;

// Rotation-normalized SVD: f = u * sigma.asDiagonal() * v^T with
// det(u) = det(v) = +1.  Any reflection is folded into the last singular
// value, so sigma[0] >= sigma[1] >= |sigma[2]| and sigma[2] < 0 exactly when
// det(f) < 0.
struct SvdResult {
  Mat3 u;
  Mat3 v;
  Vec3 sigma;
};

SvdResult signed_svd(const Mat3& f);

// Isotropic stretch-space energy density
//   psi(sigma) = mu/2 (sum sigma_i^2 - 3) - mu L + lambda/2 L^2,
//   L = ln(prod sigma_i),
// together with its exact gradient and Hessian:
//   grad_i = mu (sigma_i - 1/sigma_i) + lambda L / sigma_i
//   H_ii   = mu (1 + sigma_i^-2) + lambda (1 - L) sigma_i^-2
//   H_ij   = lambda / (sigma_i sigma_j)          (i != j)
// The Hessian decomposes as
//   diag(mu (1 + s^-2)) + lambda vv^T - lambda L diag(s^-2),  v_i = 1/sigma_i,
// so every term is positive semidefinite whenever prod sigma <= 1: the
// Hessian is provably positive definite on the whole compressive box and can
// only become indefinite under expansion (L > 1 with lambda large enough
// relative to mu).
Scalar stretch_energy(const Vec3& sigma, Scalar mu, Scalar lambda);
Vec3 stretch_gradient(const Vec3& sigma, Scalar mu, Scalar lambda);
Mat3 stretch_hessian(const Vec3& sigma, Scalar mu, Scalar lambda);

// Log-volume barrier density phi(sigma) = -mu sum ln sigma_i + lambda/2 L^2
// with exact derivatives.
Scalar barrier_energy(const Vec3& sigma, Scalar mu, Scalar lambda);
Vec3 barrier_gradient(const Vec3& sigma, Scalar mu, Scalar lambda);
Mat3 barrier_hessian(const Vec3& sigma, Scalar mu, Scalar lambda);

// Result of one local projection.  p_star is always recomposed exactly as
// u_rot * sigma_star.asDiagonal() * v_rot^T from the stored factors.
struct ProxResult {
  Mat3 p_star = Mat3::Identity();
  Vec3 sigma_star = Vec3::Ones();
  Mat3 u_rot = Mat3::Identity();
  Mat3 v_rot = Mat3::Identity();
  Vec3 sigma_f = Vec3::Ones();
  int newton_iters = 0;
};

// Nearest rotation: p* = u v^T (sigma_star = 1).
ProxResult corotated_project(const Mat3& f);

// Nearest deformation with unit volume: p* = u diag(s*) v^T with
// prod s* = 1, solved as an equality-constrained projection in stretch
// space (4x4 KKT Newton).
ProxResult volume_project(const Mat3& f);

// Neo-Hookean proximal map: s* = argmin_{s>0} k/2 |s - sigma_f|^2 +
// stretch_energy(s; mu, lambda), by Newton with backtracking and a
// positivity floor.  Stationarity |k (s*-sigma_f) + grad psi(s*)| <=
// 1e-10 * k holds at exit; ProxDiverged otherwise.
ProxResult nh_prox(const Mat3& f, Scalar mu_bar, Scalar lambda_bar,
                   Scalar k_bar);

// Log-volume barrier prox: s* = argmin_{s>0} k_log/2 |s - sigma_f|^2 +
// barrier_energy(s; mu_e, lambda_e) with k_log = 2 mu_e + lambda_e, so the
// penalty stays well-posed as lambda_e -> 0 (the equations then decouple
// into three scalar solves).
ProxResult log_barrier_prox(const Mat3& f, Scalar mu_e, Scalar lambda_e);

// Penalty weight used by log_barrier_prox.
inline Scalar log_barrier_penalty(Scalar mu_e, Scalar lambda_e) {
  return Scalar(2) * mu_e + lambda_e;
}

// Value of the smoothed (Moreau-envelope) Neo-Hookean density at the
// converged prox: k/2 |s*-sigma_f|^2 + psi_stretch(s*).
Scalar nh_envelope_value(const ProxResult& pr, Scalar mu_bar,
                         Scalar lambda_bar, Scalar k_bar);

// Same envelope value for the barrier prox.
Scalar barrier_envelope_value(const ProxResult& pr, Scalar mu_e,
                              Scalar lambda_e);

// Stretch-space prox Hessian H = H_psi(sigma*) + k I plus its filtered
// variant H~ = (1-tau) H + tau |H|; tau = 1/2 coincides with eigenvalue
// clamping and tau = 1 with the absolute-value filter.
struct ProxHessian {
  Mat3 h_prox = Mat3::Identity();
  Scalar tau = 0;
  Mat3 h_filtered = Mat3::Identity();
};

ProxHessian prox_hessian(const Vec3& sigma_star, Scalar mu_bar,
                         Scalar lambda_bar, Scalar k_bar);
ProxHessian tr_blend(const ProxHessian& h, Scalar tau);

// Linear map dF -> dp* for a converged projection.  The map is
//   dp* = u ( Jp o (u^T dF v) ) v^T
// where the hat-space action Jp applies the stretch Jacobian to the
// diagonal and closed-form 2x2 rotation solves to each off-diagonal pair.
// Every stretch Jacobian produced here is symmetric, which makes the full
// 9x9 map symmetric: apply_transpose(g) == apply(g).
class ProxDifferential {
 public:
  ProxDifferential() = default;
  // stretch_jac: 3x3 symmetric d(sigma*)/d(sigma_f); mapped: sigma* values.
  ProxDifferential(const Mat3& u, const Mat3& v, const Vec3& sigma_f,
                   const Vec3& mapped, const Mat3& stretch_jac);

  Mat3 apply(const Mat3& df) const;
  Mat3 apply_transpose(const Mat3& dg) const { return apply(dg); }
  Mat9 dense() const;  // column c is vec(apply(basis matrix c)), column-major

 private:
  Mat3 u_ = Mat3::Identity();
  Mat3 v_ = Mat3::Identity();
  Mat3 stretch_jac_ = Mat3::Identity();
  // Off-diagonal pair coefficients for (i,j) in {(0,1),(0,2),(1,2)}:
  // dp_ij = a*df_ij + b*df_ji, dp_ji = b*df_ij + a*df_ji (hat space).
  Scalar pair_a_[3] = {0, 0, 0};
  Scalar pair_b_[3] = {0, 0, 0};
};

// Differential of nh_prox with the (optionally filtered) Hessian:
// d(sigma*) = H~^-1 k d(sigma_f).  Throws SingularFilteredHessian when H~
// has an eigenvalue below 1e-12 * k (possible only without filtering).
ProxDifferential nh_prox_differential(const ProxResult& pr,
                                      const ProxHessian& h, Scalar k_bar);

// Differential of the polar projection (stretch Jacobian is zero; the
// rotation solves lose their singular direction exactly).
ProxDifferential polar_differential(const ProxResult& pr);

// Differential of the unit-volume projection via the linearized KKT system.
ProxDifferential volume_differential(const ProxResult& pr);

// Differential of the log-volume barrier prox.
ProxDifferential barrier_differential(const ProxResult& pr, Scalar mu_e,
                                      Scalar lambda_e);

}  // namespace heterodyn
