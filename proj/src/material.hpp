#pragma once
// Heterogeneous material field: per-element Young's modulus over a shared
// Poisson ratio, energy kind, constraint weights, damping coefficients, and
// the mesh-wide volume-weighted moduli used by the local projection step.

#include "mesh.hpp"

namespace heterodyn {

enum class EnergyKind { Corotated, NeoHookean };

struct Lame {
  Scalar mu = 0.0;
  Scalar lambda = 0.0;
};

// Throws InvalidPoisson outside (-1, 0.5).
Lame lame_from_young_poisson(Scalar young, Scalar poisson);

// Neo-Hookean energy density and first Piola-Kirchhoff stress.
// Throw NonPositiveJacobian when det(F) <= 0.
Scalar nh_energy(const Mat3& f, Scalar mu, Scalar lambda);
Mat3 nh_pk1(const Mat3& f, Scalar mu, Scalar lambda);

struct ProxMeans {
  Scalar mu = 0.0;
  Scalar lambda = 0.0;
  Scalar stiffness = 0.0;  // 2*mu + lambda
};

class MaterialField {
 public:
  EnergyKind kind() const { return kind_; }
  bool log_volume_barrier() const { return log_barrier_; }
  Scalar poisson() const { return poisson_; }
  Scalar alpha() const { return alpha_; }
  Scalar beta0() const { return beta0_; }

  Scalar young(int e) const { return young_[e]; }
  Scalar mu(int e) const { return mu_[e]; }
  Scalar lambda(int e) const { return lambda_[e]; }
  Scalar beta(int e) const { return beta_[e]; }

  // Sum of the element's registered constraint weights (what enters the
  // global operator): 2*mu_e + lambda_e for every kind.
  Scalar total_weight(int e) const { return 2.0 * mu_[e] + lambda_[e]; }
  // Weight of the rotation constraint (corotated composite).
  Scalar rotation_weight(int e) const { return 2.0 * mu_[e]; }
  // Weight of the volume constraint (corotated composite, quadratic or log).
  Scalar volume_weight(int e) const { return lambda_[e]; }

  int element_count() const { return static_cast<int>(young_.size()); }
  const ProxMeans& prox_means() const { return means_; }

  // max_e total_weight / min_e total_weight; drives the acceleration window.
  Scalar weight_contrast() const;

  // Replaces the modulus field (same element count), bumping the version and
  // recomputing weights, damping, and (unless frozen) the prox means.
  void set_young(const std::vector<Scalar>& young);
  // Pins the prox means regardless of later set_young calls; used by the
  // finite-difference convention that holds means constant while perturbing E.
  void freeze_means(const ProxMeans& means);
  bool means_frozen() const { return means_frozen_; }

  std::uint64_t version() const { return version_; }

  friend MaterialField build_material(const TetMesh& mesh, std::vector<Scalar> young,
                                      Scalar poisson, EnergyKind kind, bool log_volume_barrier,
                                      Scalar alpha, Scalar beta0);

 private:
  void recompute(bool refresh_means);

  // Rest volumes copied from the mesh so the field owns everything it needs;
  // scenes copy and move freely without aliasing the source mesh.
  std::vector<Scalar> volume_;
  EnergyKind kind_ = EnergyKind::NeoHookean;
  bool log_barrier_ = false;
  Scalar poisson_ = 0.0;
  Scalar alpha_ = 0.0;
  Scalar beta0_ = 0.0;
  std::vector<Scalar> young_, mu_, lambda_, beta_;
  ProxMeans means_;
  bool means_frozen_ = false;
  std::uint64_t version_ = 0;
};

MaterialField build_material(const TetMesh& mesh, std::vector<Scalar> young, Scalar poisson,
                             EnergyKind kind, bool log_volume_barrier, Scalar alpha, Scalar beta0);

}  // namespace heterodyn
