#include <doctest.h>

#include <cmath>

#include "material.hpp"
#include "test_util.hpp"

using namespace heterodyn;

TEST_CASE("lame parameters from modulus and poisson ratio") {
  // Hand computation: mu = E / (2 (1 + nu)), lambda = E nu / ((1+nu)(1-2nu)).
  const Lame lame = lame_from_young_poisson(1e6, 0.4);
  CHECK(lame.mu == doctest::Approx(357142.85714285716).epsilon(1e-13));
  CHECK(lame.lambda == doctest::Approx(1428571.4285714286).epsilon(1e-13));

  const Lame zero_nu = lame_from_young_poisson(2e5, 0.0);
  CHECK(zero_nu.mu == doctest::Approx(1e5).epsilon(1e-13));
  CHECK(zero_nu.lambda == doctest::Approx(0.0));
}

TEST_CASE("poisson ratio outside the open stability interval is rejected") {
  for (Scalar bad : {0.5, 0.7, -1.0, -1.2}) {
    try {
      lame_from_young_poisson(1e6, bad);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidPoisson);
    }
  }
  CHECK_NOTHROW(lame_from_young_poisson(1e6, 0.4999));
  CHECK_NOTHROW(lame_from_young_poisson(1e6, -0.999));
}

TEST_CASE("neo-hookean energy at frozen configurations") {
  // psi(F) = mu/2 (|F|^2 - 3) - mu ln J + lambda/2 (ln J)^2.
  CHECK(nh_energy(Mat3::Identity(), 3.0, 7.0) == doctest::Approx(0.0));
  // F = 2I, mu = 1, lambda = 0: 0.5 * (12 - 3) - ln 8 = 4.5 - 3 ln 2.
  CHECK(nh_energy(2.0 * Mat3::Identity(), 1.0, 0.0) ==
        doctest::Approx(2.4205584583201643).epsilon(1e-14));
  // F = 2I, mu = 0, lambda = 2: (ln 8)^2.
  CHECK(nh_energy(2.0 * Mat3::Identity(), 0.0, 2.0) ==
        doctest::Approx(4.324077125263812).epsilon(1e-14));
}

TEST_CASE("neo-hookean stress matches finite differences of the energy") {
  const Mat3 f = testutil::bent_gradient();
  const Scalar mu = 2.3, lambda = 4.1;
  const Mat3 p = nh_pk1(f, mu, lambda);
  const Scalar step = 1e-6;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      Mat3 fp = f, fm = f;
      fp(r, c) += step;
      fm(r, c) -= step;
      const Scalar fd =
          (nh_energy(fp, mu, lambda) - nh_energy(fm, mu, lambda)) /
          (2.0 * step);
      CHECK(p(r, c) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("non-positive volume change is rejected") {
  Mat3 flat = Mat3::Identity();
  flat(2, 2) = 0.0;
  Mat3 inverted = Mat3::Identity();
  inverted(2, 2) = -1.0;
  for (const Mat3& f : {flat, inverted}) {
    try {
      nh_energy(f, 1.0, 1.0);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonPositiveJacobian);
    }
    try {
      nh_pk1(f, 1.0, 1.0);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonPositiveJacobian);
    }
  }
}

TEST_CASE("element weights split into rotation and volume parts") {
  const TetMesh mesh = testutil::two_tets_unequal();
  // nu = 0.25 makes mu = 0.4 E and lambda = 0.4 E exactly.
  MaterialField m = build_material(mesh, {3e5, 6e5}, 0.25,
                                   EnergyKind::Corotated, false, 0.0, 0.0);
  for (int e = 0; e < 2; ++e) {
    const Scalar young = m.young(e);
    CHECK(m.mu(e) == doctest::Approx(0.4 * young).epsilon(1e-13));
    CHECK(m.lambda(e) == doctest::Approx(0.4 * young).epsilon(1e-13));
    CHECK(m.rotation_weight(e) ==
          doctest::Approx(2.0 * m.mu(e)).epsilon(1e-14));
    CHECK(m.volume_weight(e) == doctest::Approx(m.lambda(e)).epsilon(1e-14));
    CHECK(m.total_weight(e) ==
          doctest::Approx(2.0 * m.mu(e) + m.lambda(e)).epsilon(1e-14));
  }
  // At a shared Poisson ratio the weight contrast equals the modulus ratio.
  CHECK(m.weight_contrast() == doctest::Approx(2.0).epsilon(1e-13));
}

TEST_CASE("projection means are volume weighted") {
  // Volumes 1/6 and 1/3: mean = (V0 x0 + V1 x1) / (V0 + V1).
  const TetMesh mesh = testutil::two_tets_unequal();
  MaterialField m = build_material(mesh, {3e5, 6e5}, 0.25,
                                   EnergyKind::NeoHookean, false, 0.0, 0.0);
  // mu_e = 0.4 E: mean mu = (1/6 * 1.2e5 + 1/3 * 2.4e5) / (1/2) = 2e5.
  CHECK(m.prox_means().mu == doctest::Approx(2e5).epsilon(1e-12));
  CHECK(m.prox_means().lambda == doctest::Approx(2e5).epsilon(1e-12));
  CHECK(m.prox_means().stiffness ==
        doctest::Approx(2.0 * m.prox_means().mu + m.prox_means().lambda)
            .epsilon(1e-13));
}

TEST_CASE("modulus updates bump the version and rescale the weights") {
  const TetMesh mesh = testutil::two_tets_unequal();
  MaterialField m = build_material(mesh, {3e5, 6e5}, 0.25,
                                   EnergyKind::NeoHookean, false, 0.0, 0.05);
  const std::uint64_t v0 = m.version();
  const Scalar w0 = m.total_weight(0);
  const Scalar mean0 = m.prox_means().mu;
  m.set_young({6e5, 12e5});
  CHECK(m.version() == v0 + 1);
  CHECK(m.total_weight(0) == doctest::Approx(2.0 * w0).epsilon(1e-13));
  CHECK(m.prox_means().mu == doctest::Approx(2.0 * mean0).epsilon(1e-13));
  // Damping coefficients track the modulus field: equal ratios.
  CHECK(m.beta(1) / m.beta(0) ==
        doctest::Approx(m.mu(1) / m.mu(0)).epsilon(1e-12));
}

TEST_CASE("frozen means survive modulus updates") {
  const TetMesh mesh = testutil::two_tets_unequal();
  MaterialField m = build_material(mesh, {3e5, 6e5}, 0.25,
                                   EnergyKind::NeoHookean, false, 0.0, 0.0);
  const ProxMeans pinned = m.prox_means();
  m.freeze_means(pinned);
  CHECK(m.means_frozen());
  m.set_young({9e5, 18e5});
  CHECK(m.prox_means().mu == doctest::Approx(pinned.mu).epsilon(1e-15));
  CHECK(m.prox_means().lambda ==
        doctest::Approx(pinned.lambda).epsilon(1e-15));
  // Weights still move even while the means are pinned.
  CHECK(m.total_weight(0) > 2.0 * pinned.mu);
}

TEST_CASE("material field stays valid after its source mesh is destroyed") {
  // The field copies the rest volumes at build time, so updating moduli must
  // not touch the (possibly relocated or destroyed) mesh object.
  MaterialField m = [] {
    const TetMesh mesh = testutil::two_tets_unequal();
    return build_material(mesh, {3e5, 6e5}, 0.25, EnergyKind::NeoHookean,
                          false, 0.0, 0.0);
  }();
  m.set_young({6e5, 12e5});
  CHECK(m.prox_means().mu == doctest::Approx(4e5).epsilon(1e-12));
}

TEST_CASE("homogeneous damping equals its base coefficient") {
  const TetMesh mesh = testutil::two_tets_unequal();
  MaterialField m = build_material(mesh, {4e5, 4e5}, 0.3,
                                   EnergyKind::Corotated, false, 0.02, 0.15);
  CHECK(m.alpha() == doctest::Approx(0.02));
  CHECK(m.beta(0) == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(m.beta(1) == doctest::Approx(0.15).epsilon(1e-12));
}
