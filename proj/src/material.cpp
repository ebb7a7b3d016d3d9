#include "material.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace heterodyn {

namespace {
std::atomic<std::uint64_t> g_material_version{1};
}

Lame lame_from_young_poisson(Scalar young, Scalar poisson) {
  if (young <= 0.0) fail(ErrorCode::Validation, "Young's modulus must be positive");
  if (!(poisson > -1.0 && poisson < 0.5))
    fail(ErrorCode::InvalidPoisson,
         "Poisson ratio must lie in (-1, 0.5), got " + std::to_string(poisson));
  Lame l;
  l.mu = young / (2.0 * (1.0 + poisson));
  l.lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
  return l;
}

Scalar nh_energy(const Mat3& f, Scalar mu, Scalar lambda) {
  const Scalar j = f.determinant();
  if (j <= 0.0) fail(ErrorCode::NonPositiveJacobian, "nh_energy: det(F) <= 0");
  const Scalar logj = std::log(j);
  return 0.5 * mu * (f.squaredNorm() - 3.0) - mu * logj + 0.5 * lambda * logj * logj;
}

Mat3 nh_pk1(const Mat3& f, Scalar mu, Scalar lambda) {
  const Scalar j = f.determinant();
  if (j <= 0.0) fail(ErrorCode::NonPositiveJacobian, "nh_pk1: det(F) <= 0");
  const Mat3 finv_t = f.inverse().transpose();
  return mu * (f - finv_t) + lambda * std::log(j) * finv_t;
}

Scalar MaterialField::weight_contrast() const {
  Scalar wmin = total_weight(0), wmax = wmin;
  for (int e = 1; e < element_count(); ++e) {
    wmin = std::min(wmin, total_weight(e));
    wmax = std::max(wmax, total_weight(e));
  }
  return wmax / wmin;
}

void MaterialField::recompute(bool refresh_means) {
  const int ne = element_count();
  mu_.resize(ne);
  lambda_.resize(ne);
  beta_.resize(ne);
  Scalar mu_ref = 0.0;
  for (int e = 0; e < ne; ++e) {
    const Lame l = lame_from_young_poisson(young_[e], poisson_);
    mu_[e] = l.mu;
    lambda_[e] = l.lambda;
    mu_ref = std::max(mu_ref, l.mu);
  }
  for (int e = 0; e < ne; ++e) beta_[e] = beta0_ * mu_[e] / mu_ref;
  if (refresh_means && !means_frozen_) {
    Scalar vol = 0.0, mu_sum = 0.0, lambda_sum = 0.0;
    for (int e = 0; e < ne; ++e) {
      const Scalar v = volume_[e];
      vol += v;
      mu_sum += v * mu_[e];
      lambda_sum += v * lambda_[e];
    }
    means_.mu = mu_sum / vol;
    means_.lambda = lambda_sum / vol;
    means_.stiffness = 2.0 * means_.mu + means_.lambda;
  }
  version_ = g_material_version.fetch_add(1);
}

void MaterialField::set_young(const std::vector<Scalar>& young) {
  if (static_cast<int>(young.size()) != element_count())
    fail(ErrorCode::Validation, "set_young: element count mismatch");
  young_ = young;
  recompute(true);
}

void MaterialField::freeze_means(const ProxMeans& means) {
  means_ = means;
  means_frozen_ = true;
  version_ = g_material_version.fetch_add(1);
}

MaterialField build_material(const TetMesh& mesh, std::vector<Scalar> young, Scalar poisson,
                             EnergyKind kind, bool log_volume_barrier, Scalar alpha,
                             Scalar beta0) {
  if (static_cast<int>(young.size()) != mesh.element_count())
    fail(ErrorCode::Validation, "build_material: one Young's modulus per element required");
  if (alpha < 0.0 || beta0 < 0.0) fail(ErrorCode::Validation, "damping coefficients must be >= 0");
  if (log_volume_barrier && kind != EnergyKind::Corotated)
    fail(ErrorCode::Validation, "log volume barrier composes with the corotated rotation step");
  MaterialField m;
  m.volume_.resize(mesh.element_count());
  for (int e = 0; e < mesh.element_count(); ++e) m.volume_[e] = mesh.volume(e);
  m.kind_ = kind;
  m.log_barrier_ = log_volume_barrier;
  m.poisson_ = poisson;
  m.alpha_ = alpha;
  m.beta0_ = beta0;
  m.young_ = std::move(young);
  m.recompute(true);
  return m;
}

}  // namespace heterodyn
