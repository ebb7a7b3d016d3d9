#include "localstep.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace heterodyn {

namespace {

constexpr Scalar kSigmaFloor = 1e-6;
constexpr int kNewtonCap = 50;
constexpr int kBacktrackCap = 30;

// Off-diagonal index pairs (i < j) in fixed order.
constexpr int kPairI[3] = {0, 0, 1};
constexpr int kPairJ[3] = {1, 2, 2};

struct StretchDensity {
  Scalar mu, lambda;
  Scalar value(const Vec3& s) const { return stretch_energy(s, mu, lambda); }
  Vec3 gradient(const Vec3& s) const { return stretch_gradient(s, mu, lambda); }
  Mat3 hessian(const Vec3& s) const { return stretch_hessian(s, mu, lambda); }
};

struct BarrierDensity {
  Scalar mu, lambda;
  Scalar value(const Vec3& s) const { return barrier_energy(s, mu, lambda); }
  Vec3 gradient(const Vec3& s) const { return barrier_gradient(s, mu, lambda); }
  Mat3 hessian(const Vec3& s) const { return barrier_hessian(s, mu, lambda); }
};

// Minimizes k/2 |s - sigma_f|^2 + density(s) over s > 0 by safeguarded
// Newton with Armijo backtracking.  The returned point satisfies the
// stationarity residual |k (s - sigma_f) + grad(s)| <= 1e-10 k.
template <class Density>
Vec3 newton_on_stretches(const Vec3& sigma_f, Scalar k, const Density& den,
                         int* iters_out) {
  Vec3 s = sigma_f.cwiseMax(kSigmaFloor);
  const Scalar tol = Scalar(1e-10) * k;
  auto objective = [&](const Vec3& x) {
    return Scalar(0.5) * k * (x - sigma_f).squaredNorm() + den.value(x);
  };
  int iter = 0;
  for (; iter < kNewtonCap; ++iter) {
    const Vec3 r = k * (s - sigma_f) + den.gradient(s);
    if (r.norm() <= tol) break;
    Mat3 h = den.hessian(s);
    h.diagonal().array() += k;
    Eigen::SelfAdjointEigenSolver<Mat3> es(h);
    const Vec3 lam = es.eigenvalues().cwiseMax(Scalar(1e-8) * k);
    const Vec3 dir =
        -(es.eigenvectors() *
          (es.eigenvectors().transpose() * r).cwiseQuotient(lam).eval());
    const Scalar f0 = objective(s);
    const Scalar r0 = r.norm();
    const Scalar slope = r.dot(dir);
    Scalar t = 1;
    bool accepted = false;
    for (int bt = 0; bt < kBacktrackCap; ++bt, t *= Scalar(0.5)) {
      const Vec3 cand = (s + t * dir).cwiseMax(kSigmaFloor);
      // Armijo on the objective, or a strict residual decrease — the latter
      // keeps progress once objective differences fall below roundoff.
      const bool objective_ok =
          objective(cand) <= f0 + Scalar(1e-4) * t * slope;
      const bool residual_ok =
          (k * (cand - sigma_f) + den.gradient(cand)).norm() <=
          (Scalar(1) - Scalar(1e-4) * t) * r0;
      if (objective_ok || residual_ok) {
        s = cand;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  const Vec3 r = k * (s - sigma_f) + den.gradient(s);
  if (!(r.norm() <= tol)) {
    fail(ErrorCode::ProxDiverged,
         "local stretch solve did not reach stationarity");
  }
  if (iters_out != nullptr) *iters_out = iter;
  return s;
}

ProxResult make_result(const SvdResult& sv, const Vec3& sigma_star,
                       int iters) {
  ProxResult pr;
  pr.u_rot = sv.u;
  pr.v_rot = sv.v;
  pr.sigma_f = sv.sigma;
  pr.sigma_star = sigma_star;
  pr.p_star = sv.u * sigma_star.asDiagonal() * sv.v.transpose();
  pr.newton_iters = iters;
  return pr;
}

}  // namespace

SvdResult signed_svd(const Mat3& f) {
  Eigen::JacobiSVD<Mat3> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  SvdResult r;
  r.u = svd.matrixU();
  r.v = svd.matrixV();
  r.sigma = svd.singularValues();
  if (r.u.determinant() < 0) {
    r.u.col(2) *= Scalar(-1);
    r.sigma[2] = -r.sigma[2];
  }
  if (r.v.determinant() < 0) {
    r.v.col(2) *= Scalar(-1);
    r.sigma[2] = -r.sigma[2];
  }
  return r;
}

Scalar stretch_energy(const Vec3& sigma, Scalar mu, Scalar lambda) {
  const Scalar big_l = std::log(sigma[0] * sigma[1] * sigma[2]);
  return Scalar(0.5) * mu * (sigma.squaredNorm() - Scalar(3)) - mu * big_l +
         Scalar(0.5) * lambda * big_l * big_l;
}

Vec3 stretch_gradient(const Vec3& sigma, Scalar mu, Scalar lambda) {
  const Scalar big_l = std::log(sigma[0] * sigma[1] * sigma[2]);
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    g[i] = mu * (sigma[i] - Scalar(1) / sigma[i]) + lambda * big_l / sigma[i];
  }
  return g;
}

Mat3 stretch_hessian(const Vec3& sigma, Scalar mu, Scalar lambda) {
  const Scalar big_l = std::log(sigma[0] * sigma[1] * sigma[2]);
  Mat3 h;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) {
        const Scalar inv2 = Scalar(1) / (sigma[i] * sigma[i]);
        h(i, i) = mu * (Scalar(1) + inv2) + lambda * (Scalar(1) - big_l) * inv2;
      } else {
        h(i, j) = lambda / (sigma[i] * sigma[j]);
      }
    }
  }
  return h;
}

Scalar barrier_energy(const Vec3& sigma, Scalar mu, Scalar lambda) {
  const Scalar big_l = std::log(sigma[0] * sigma[1] * sigma[2]);
  return -mu * big_l + Scalar(0.5) * lambda * big_l * big_l;
}

Vec3 barrier_gradient(const Vec3& sigma, Scalar mu, Scalar lambda) {
  const Scalar big_l = std::log(sigma[0] * sigma[1] * sigma[2]);
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    g[i] = (-mu + lambda * big_l) / sigma[i];
  }
  return g;
}

Mat3 barrier_hessian(const Vec3& sigma, Scalar mu, Scalar lambda) {
  const Scalar big_l = std::log(sigma[0] * sigma[1] * sigma[2]);
  Mat3 h;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) {
        h(i, i) = (mu - lambda * (big_l - Scalar(1))) / (sigma[i] * sigma[i]);
      } else {
        h(i, j) = lambda / (sigma[i] * sigma[j]);
      }
    }
  }
  return h;
}

ProxResult corotated_project(const Mat3& f) {
  const SvdResult sv = signed_svd(f);
  return make_result(sv, Vec3::Ones(), 0);
}

ProxResult volume_project(const Mat3& f) {
  const SvdResult sv = signed_svd(f);
  const Vec3 clamped = sv.sigma.cwiseMax(kSigmaFloor);
  Vec3 s = clamped * std::pow(clamped.prod(), Scalar(-1.0 / 3.0));
  Scalar gamma = 0;
  const Scalar tol =
      Scalar(1e-10) * std::max(Scalar(1), sv.sigma.cwiseAbs().maxCoeff());

  using Vec4 = Eigen::Matrix<Scalar, 4, 1>;
  using Mat4 = Eigen::Matrix<Scalar, 4, 4>;
  auto residual = [&](const Vec3& x, Scalar g) {
    const Scalar jx = x.prod();
    Vec4 out;
    for (int i = 0; i < 3; ++i) {
      out[i] = x[i] - sv.sigma[i] + g * jx / x[i];
    }
    out[3] = jx - Scalar(1);
    return out;
  };

  int iter = 0;
  for (; iter < kNewtonCap; ++iter) {
    const Vec4 res = residual(s, gamma);
    if (res.norm() <= tol) break;
    const Scalar jx = s.prod();
    Mat4 kkt = Mat4::Zero();
    for (int i = 0; i < 3; ++i) {
      kkt(i, i) = Scalar(1);
      for (int j = 0; j < 3; ++j) {
        if (i != j) kkt(i, j) = gamma * jx / (s[i] * s[j]);
      }
      kkt(i, 3) = jx / s[i];
      kkt(3, i) = jx / s[i];
    }
    const Vec4 step = kkt.fullPivLu().solve(-res);
    const Scalar m0 = res.squaredNorm();
    Scalar t = 1;
    bool accepted = false;
    for (int bt = 0; bt < kBacktrackCap; ++bt, t *= Scalar(0.5)) {
      const Vec3 cand = (s + t * step.head<3>()).cwiseMax(kSigmaFloor);
      const Scalar cand_gamma = gamma + t * step[3];
      if (residual(cand, cand_gamma).squaredNorm() <
          m0 * (Scalar(1) - Scalar(1e-4) * t)) {
        s = cand;
        gamma = cand_gamma;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (!(residual(s, gamma).norm() <= tol)) {
    fail(ErrorCode::ProxDiverged,
         "unit-volume projection did not reach stationarity");
  }
  return make_result(sv, s, iter);
}

ProxResult nh_prox(const Mat3& f, Scalar mu_bar, Scalar lambda_bar,
                   Scalar k_bar) {
  if (!(k_bar > 0)) {
    fail(ErrorCode::InvalidArgument, "prox penalty must be positive");
  }
  const SvdResult sv = signed_svd(f);
  const StretchDensity den{mu_bar, lambda_bar};
  int iters = 0;
  const Vec3 s = newton_on_stretches(sv.sigma, k_bar, den, &iters);
  return make_result(sv, s, iters);
}

ProxResult log_barrier_prox(const Mat3& f, Scalar mu_e, Scalar lambda_e) {
  const Scalar k_log = log_barrier_penalty(mu_e, lambda_e);
  if (!(k_log > 0)) {
    fail(ErrorCode::InvalidArgument, "barrier penalty must be positive");
  }
  const SvdResult sv = signed_svd(f);
  const BarrierDensity den{mu_e, lambda_e};
  int iters = 0;
  const Vec3 s = newton_on_stretches(sv.sigma, k_log, den, &iters);
  return make_result(sv, s, iters);
}

Scalar nh_envelope_value(const ProxResult& pr, Scalar mu_bar,
                         Scalar lambda_bar, Scalar k_bar) {
  return Scalar(0.5) * k_bar * (pr.sigma_star - pr.sigma_f).squaredNorm() +
         stretch_energy(pr.sigma_star, mu_bar, lambda_bar);
}

Scalar barrier_envelope_value(const ProxResult& pr, Scalar mu_e,
                              Scalar lambda_e) {
  const Scalar k_log = log_barrier_penalty(mu_e, lambda_e);
  return Scalar(0.5) * k_log * (pr.sigma_star - pr.sigma_f).squaredNorm() +
         barrier_energy(pr.sigma_star, mu_e, lambda_e);
}

ProxHessian prox_hessian(const Vec3& sigma_star, Scalar mu_bar,
                         Scalar lambda_bar, Scalar k_bar) {
  ProxHessian ph;
  ph.h_prox = stretch_hessian(sigma_star, mu_bar, lambda_bar);
  ph.h_prox.diagonal().array() += k_bar;
  ph.tau = 0;
  ph.h_filtered = ph.h_prox;
  return ph;
}

ProxHessian tr_blend(const ProxHessian& h, Scalar tau) {
  ProxHessian out;
  out.h_prox = h.h_prox;
  out.tau = tau;
  if (tau == Scalar(0)) {
    out.h_filtered = h.h_prox;
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(h.h_prox);
  const Vec3 kappa = es.eigenvalues();
  Vec3 blended;
  for (int i = 0; i < 3; ++i) {
    blended[i] = (Scalar(1) - tau) * kappa[i] + tau * std::abs(kappa[i]);
  }
  out.h_filtered = es.eigenvectors() * blended.asDiagonal() *
                   es.eigenvectors().transpose();
  return out;
}

ProxDifferential::ProxDifferential(const Mat3& u, const Mat3& v,
                                   const Vec3& sigma_f, const Vec3& mapped,
                                   const Mat3& stretch_jac)
    : u_(u), v_(v), stretch_jac_(stretch_jac) {
  for (int p = 0; p < 3; ++p) {
    const int i = kPairI[p];
    const int j = kPairJ[p];
    const Scalar si = sigma_f[i];
    const Scalar sj = sigma_f[j];
    // Rotation-sensitivity solve (s_j - s_i)/(sigma_j - sigma_i), computed
    // through the squared-difference with a sign-preserving floor.
    Scalar d2 = sj * sj - si * si;
    const Scalar floor2 =
        Scalar(1e-10) * std::max({Scalar(1), si * si, sj * sj});
    if (std::abs(d2) < floor2) d2 = (d2 >= 0 ? floor2 : -floor2);
    const Scalar cu = (mapped[j] - mapped[i]) * (sj + si) / d2;
    Scalar dsum = si + sj;
    const Scalar floor1 =
        Scalar(1e-10) * std::max({Scalar(1), std::abs(si), std::abs(sj)});
    if (std::abs(dsum) < floor1) dsum = (dsum >= 0 ? floor1 : -floor1);
    const Scalar cw = (mapped[i] + mapped[j]) / dsum;
    pair_a_[p] = Scalar(0.5) * (cu + cw);
    pair_b_[p] = Scalar(0.5) * (cu - cw);
  }
}

Mat3 ProxDifferential::apply(const Mat3& df) const {
  const Mat3 hat = u_.transpose() * df * v_;
  Mat3 out = Mat3::Zero();
  const Vec3 dsf(hat(0, 0), hat(1, 1), hat(2, 2));
  const Vec3 ds = stretch_jac_ * dsf;
  out(0, 0) = ds[0];
  out(1, 1) = ds[1];
  out(2, 2) = ds[2];
  for (int p = 0; p < 3; ++p) {
    const int i = kPairI[p];
    const int j = kPairJ[p];
    out(i, j) = pair_a_[p] * hat(i, j) + pair_b_[p] * hat(j, i);
    out(j, i) = pair_b_[p] * hat(i, j) + pair_a_[p] * hat(j, i);
  }
  return u_ * out * v_.transpose();
}

Mat9 ProxDifferential::dense() const {
  Mat9 m;
  for (int c = 0; c < 9; ++c) {
    Mat3 basis = Mat3::Zero();
    basis(c % 3, c / 3) = Scalar(1);
    const Mat3 img = apply(basis);
    for (int k = 0; k < 9; ++k) m(k, c) = img(k % 3, k / 3);
  }
  return m;
}

ProxDifferential nh_prox_differential(const ProxResult& pr,
                                      const ProxHessian& h, Scalar k_bar) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(h.h_filtered);
  const Vec3 lam = es.eigenvalues();
  if (lam.minCoeff() < Scalar(1e-12) * k_bar) {
    fail(ErrorCode::SingularFilteredHessian,
         "filtered prox Hessian is numerically singular");
  }
  const Mat3 jac = es.eigenvectors() *
                   (k_bar / lam.array()).matrix().asDiagonal() *
                   es.eigenvectors().transpose();
  return ProxDifferential(pr.u_rot, pr.v_rot, pr.sigma_f, pr.sigma_star, jac);
}

ProxDifferential polar_differential(const ProxResult& pr) {
  return ProxDifferential(pr.u_rot, pr.v_rot, pr.sigma_f, Vec3::Ones(),
                          Mat3::Zero());
}

ProxDifferential volume_differential(const ProxResult& pr) {
  using Vec4 = Eigen::Matrix<Scalar, 4, 1>;
  using Mat4 = Eigen::Matrix<Scalar, 4, 4>;
  const Vec3& s = pr.sigma_star;
  // Constraint gradient at the solution (product is one): g_i = 1/s_i.
  const Vec3 g(Scalar(1) / s[0], Scalar(1) / s[1], Scalar(1) / s[2]);
  // Recover the multiplier from stationarity s - sigma_f + gamma g = 0.
  const Scalar gamma = g.dot(pr.sigma_f - s) / g.squaredNorm();
  Mat4 kkt = Mat4::Zero();
  for (int i = 0; i < 3; ++i) {
    kkt(i, i) = Scalar(1);
    for (int j = 0; j < 3; ++j) {
      if (i != j) kkt(i, j) = gamma / (s[i] * s[j]);
    }
    kkt(i, 3) = g[i];
    kkt(3, i) = g[i];
  }
  const Eigen::FullPivLU<Mat4> lu(kkt);
  Mat3 jac;
  for (int c = 0; c < 3; ++c) {
    Vec4 rhs = Vec4::Zero();
    rhs[c] = Scalar(1);
    jac.col(c) = lu.solve(rhs).head<3>();
  }
  // The KKT matrix is symmetric, so the recovered block is symmetric up to
  // roundoff; symmetrize to keep the full map exactly self-adjoint.
  jac = Scalar(0.5) * (jac + jac.transpose()).eval();
  return ProxDifferential(pr.u_rot, pr.v_rot, pr.sigma_f, pr.sigma_star, jac);
}

ProxDifferential barrier_differential(const ProxResult& pr, Scalar mu_e,
                                      Scalar lambda_e) {
  const Scalar k_log = log_barrier_penalty(mu_e, lambda_e);
  Mat3 h = barrier_hessian(pr.sigma_star, mu_e, lambda_e);
  h.diagonal().array() += k_log;
  Eigen::SelfAdjointEigenSolver<Mat3> es(h);
  const Vec3 lam = es.eigenvalues();
  if (lam.minCoeff() < Scalar(1e-12) * k_log) {
    fail(ErrorCode::SingularFilteredHessian,
         "barrier prox Hessian is numerically singular");
  }
  const Mat3 jac = es.eigenvectors() *
                   (k_log / lam.array()).matrix().asDiagonal() *
                   es.eigenvectors().transpose();
  return ProxDifferential(pr.u_rot, pr.v_rot, pr.sigma_f, pr.sigma_star, jac);
}

}  // namespace heterodyn
