#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracle.hpp"
#include "scene.hpp"
#include "test_util.hpp"

using namespace heterodyn;

TEST_CASE("newton reference: rest is an immediate stationary point") {
  const TetMesh mesh = testutil::two_tets_unequal();
  const MaterialField mat =
      build_material(mesh, {4e4, 9e4}, 0.35, EnergyKind::NeoHookean, false,
                     0.0, 0.0);
  const Scalar h = 0.01;
  GlobalSystem system;
  system.refresh(mesh, mat, h, {});
  const VecX rest = mesh.rest_vector();

  CHECK(stationarity_residual(mesh, mat, system, rest, rest, h) <= 1e-9);
  const VecX q = newton_solve(mesh, mat, system, rest, rest, h,
                              NewtonConfig{});
  CHECK((q - rest).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("newton reference agrees with the alternating solver") {
  for (EnergyKind kind : {EnergyKind::NeoHookean, EnergyKind::Corotated}) {
    testutil::BlockOptions opt;
    opt.kind = kind;
    opt.fix_x0_face = true;
    opt.gravity_z = -9.81;
    opt.v0_amp = 0.0;
    opt.alpha = 0.0;
    opt.beta0 = 0.0;
    SceneSpec spec = testutil::block_scene(opt);
    spec.solver.eps_rel = 1e-12;
    spec.solver.eps_abs = 1e-14;

    GlobalSystem system;
    SimState state;
    state.q = spec.q0;
    state.v = spec.v0;
    const VecX f_ext = scene_external_force(spec);
    const ForwardCache cache =
        forward_step(spec.mesh, spec.material, system, spec.solver,
                     spec.obstacles, spec.fixed_vertices, state, f_ext,
                     nullptr);
    REQUIRE(cache.converged);

    const VecX q_newton =
        newton_solve(spec.mesh, spec.material, system, cache.q_tilde,
                     cache.q_tilde, spec.solver.h, NewtonConfig{});
    const Scalar scale = cache.q_star.lpNorm<Eigen::Infinity>();
    CHECK((q_newton - cache.q_star).lpNorm<Eigen::Infinity>() <=
          1e-8 * std::max(scale, 1.0));

    // Both solutions drive the free-DoF gradient to the oracle's tolerance.
    CHECK(stationarity_residual(spec.mesh, spec.material, system, q_newton,
                                cache.q_tilde, spec.solver.h) <= 1e-9);
  }
}

TEST_CASE("newton eigenvalue filters coincide in the convex regime") {
  testutil::BlockOptions opt;
  opt.fix_x0_face = true;
  opt.gravity_z = -9.81;
  opt.v0_amp = 0.0;
  SceneSpec spec = testutil::block_scene(opt);
  GlobalSystem system;
  system.refresh(spec.mesh, spec.material, spec.solver.h,
                 spec.fixed_vertices);
  SimState state;
  state.q = spec.q0;
  state.v = spec.v0;
  const VecX f_ext = scene_external_force(spec);
  const VecX q_tilde =
      free_fall_target(spec.mesh, state, f_ext, nullptr, spec.solver.h);

  NewtonConfig clamp;
  clamp.filter = NewtonFilter::Clamp;
  NewtonConfig abs;
  abs.filter = NewtonFilter::Abs;
  const VecX qc = newton_solve(spec.mesh, spec.material, system, q_tilde,
                               q_tilde, spec.solver.h, clamp);
  const VecX qa = newton_solve(spec.mesh, spec.material, system, q_tilde,
                               q_tilde, spec.solver.h, abs);
  CHECK((qc - qa).lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("newton reference rejects oversized meshes and stalled searches") {
  // 2000-DoF cap.
  const TetMesh big = ingest_hex_grid({9, 9, 9}, 0.05, 1000.0);
  REQUIRE(big.dof_count() > 2000);
  const MaterialField mat = build_material(
      big, std::vector<Scalar>(big.element_count(), 5e4), 0.4,
      EnergyKind::NeoHookean, false, 0.0, 0.0);
  GlobalSystem system;
  system.refresh(big, mat, 0.01, {});
  bool threw = false;
  try {
    newton_solve(big, mat, system, big.rest_vector(), big.rest_vector(), 0.01,
                 NewtonConfig{});
  } catch (const Error& e) {
    threw = true;
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }
  CHECK(threw);

  // Exhausting the iteration budget far from stationarity fails loudly.
  const TetMesh mesh = testutil::two_tets_unequal();
  const MaterialField soft =
      build_material(mesh, {4e4, 9e4}, 0.35, EnergyKind::NeoHookean, false,
                     0.0, 0.0);
  GlobalSystem sys2;
  sys2.refresh(mesh, soft, 0.01, {});
  NewtonConfig starved;
  starved.max_iters = 0;
  const VecX far = testutil::wiggle(mesh.rest_vector(), 0.05, 0.9);
  bool stalled = false;
  try {
    newton_solve(mesh, soft, sys2, far, mesh.rest_vector(), 0.01, starved);
  } catch (const Error& e) {
    stalled = true;
    CHECK(e.code() == ErrorCode::LineSearchFailed);
  }
  CHECK(stalled);
}

TEST_CASE("finite-difference gradient is near-exact on quadratics") {
  const int n = 9;
  MatX d = MatX::Zero(n, n);
  VecX c(n);
  std::mt19937 rng(11);
  std::normal_distribution<Scalar> dist(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    c[i] = dist(rng);
    for (int j = 0; j <= i; ++j) {
      const Scalar v = dist(rng);
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  const auto loss = [&](const VecX& p) -> Scalar {
    return 0.5 * p.dot(d * p) + c.dot(p);
  };
  VecX p0(n);
  for (int i = 0; i < n; ++i) p0[i] = 0.3 * std::sin(1.3 * i) + 0.5;
  p0[2] = 0.0;  // exercises the absolute step floor

  const VecX fd = fd_gradient(loss, p0);
  const VecX exact = d * p0 + c;
  for (int i = 0; i < n; ++i) {
    CHECK(fd[i] == doctest::Approx(exact[i]).epsilon(1e-7));
  }
}

TEST_CASE("dense inverse round-trips SPD matrices and rejects the rest") {
  const int n = 20;
  MatX a = MatX::Zero(n, n);
  std::mt19937 rng(7);
  std::normal_distribution<Scalar> dist(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      const Scalar v = dist(rng);
      a(i, j) = v;
      a(j, i) = v;
    }
  }
  a = MatX(a.transpose() * a);
  a.diagonal().array() += 1.0;

  const MatX inv = dense_inverse(a);
  CHECK((a * inv - MatX::Identity(n, n)).norm() <= 1e-11);
  CHECK((inv * a - MatX::Identity(n, n)).norm() <= 1e-11);

  MatX indef = a;
  indef(3, 3) = -100.0;
  bool threw = false;
  try {
    dense_inverse(indef);
  } catch (const Error& e) {
    threw = true;
    CHECK(e.code() == ErrorCode::NotPositiveDefinite);
  }
  CHECK(threw);

  bool rect = false;
  try {
    dense_inverse(MatX::Zero(3, 4));
  } catch (const Error& e) {
    rect = true;
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }
  CHECK(rect);
}

TEST_CASE("dense transposed-system adjoint matches the iterative one") {
  // Contact-free case.
  {
    const TetMesh mesh = testutil::two_tets_unequal();
    const MaterialField mat =
        build_material(mesh, {4e4, 9e4}, 0.35, EnergyKind::NeoHookean, false,
                       0.01, 0.05);
    SolverConfig cfg;
    cfg.eps_rel = 1e-12;
    cfg.eps_abs = 1e-14;
    GlobalSystem system;
    SimState state;
    state.q = testutil::wiggle(mesh.rest_vector(), 0.01, 0.2);
    state.v = testutil::wiggle(VecX::Zero(mesh.dof_count()), 0.2, 1.0);
    VecX f_ext = VecX::Zero(mesh.dof_count());
    for (int v = 0; v < mesh.vertex_count(); ++v) {
      f_ext[3 * v + 2] = -2.0 * mesh.vertex_mass(v);
    }
    const ForwardCache cache = forward_step(mesh, mat, system, cfg, {}, {},
                                            state, f_ext, nullptr);
    REQUIRE(cache.converged);

    const TrSelection sel = tr_select_tau(mesh, mat, system, cache, cfg.eps_tr);
    const DbDqOperator db_dq = assemble_db_dq(mesh, mat, cache, sel.tau);
    const VecX seed =
        testutil::wiggle(VecX::Zero(mesh.dof_count()), 1.0, 0.5);

    const AdjointResult iter = adjoint_solve(system, db_dq, cache, seed);
    const DenseAdjoint dense = dense_adjoint(system, db_dq, cache, seed);
    CHECK((iter.mu - dense.mu).lpNorm<Eigen::Infinity>() <=
          1e-8 * std::max(1.0, dense.mu.lpNorm<Eigen::Infinity>()));
    CHECK_FALSE(iter.contact_path);
  }

  // Frictional resting contact.
  {
    testutil::BlockOptions opt;
    opt.floor = true;
    opt.friction = 0.5;
    opt.gravity_z = -2.0;
    opt.v0_amp = 0.0;
    SceneSpec spec = testutil::block_scene(opt);
    spec.solver.eps_rel = 1e-12;
    spec.solver.eps_abs = 1e-14;
    GlobalSystem system;
    SimState state;
    state.q = spec.q0;
    state.v = spec.v0;
    const VecX f_ext = scene_external_force(spec);
    ForwardCache cache;
    for (int s = 0; s < 6; ++s) {
      cache = forward_step(spec.mesh, spec.material, system, spec.solver,
                           spec.obstacles, spec.fixed_vertices, state, f_ext,
                           nullptr);
    }
    REQUIRE(cache.converged);
    REQUIRE_FALSE(cache.contacts.empty());

    const TrSelection sel =
        tr_select_tau(spec.mesh, spec.material, system, cache,
                      spec.solver.eps_tr);
    const DbDqOperator db_dq =
        assemble_db_dq(spec.mesh, spec.material, cache, sel.tau);
    const VecX seed =
        testutil::wiggle(VecX::Zero(spec.mesh.dof_count()), 1.0, 0.8);

    const AdjointResult iter = adjoint_solve(system, db_dq, cache, seed);
    const DenseAdjoint dense = dense_adjoint(system, db_dq, cache, seed);
    CHECK(iter.contact_path);
    REQUIRE(iter.y_lambda.size() == cache.contacts.row_count());
    REQUIRE(dense.y_lambda.size() == cache.contacts.row_count());
    const Scalar mu_scale = std::max(1.0, dense.mu.lpNorm<Eigen::Infinity>());
    CHECK((iter.mu - dense.mu).lpNorm<Eigen::Infinity>() <= 1e-7 * mu_scale);
    const Scalar y_scale =
        std::max(1.0, dense.y_lambda.lpNorm<Eigen::Infinity>());
    CHECK((iter.y_lambda - dense.y_lambda).lpNorm<Eigen::Infinity>() <=
          1e-6 * y_scale);
  }
}
