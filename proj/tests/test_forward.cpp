#include <doctest.h>

#include <cmath>
#include <vector>

#include "forward.hpp"
#include "scene.hpp"
#include "test_util.hpp"

using namespace heterodyn;

namespace {

struct Rig {
  SceneSpec spec;
  GlobalSystem system;
  SimState state;
  VecX f_ext;

  explicit Rig(const testutil::BlockOptions& opt)
      : spec(testutil::block_scene(opt)) {
    state.q = spec.q0;
    state.v = spec.v0;
    state.time = 0;
    f_ext = scene_external_force(spec);
  }

  ForwardCache step() {
    return forward_step(spec.mesh, spec.material, system, spec.solver,
                        spec.obstacles, spec.fixed_vertices, state, f_ext,
                        nullptr);
  }
};

}  // namespace

TEST_CASE("free-fall target combines inertia, external and hook forces") {
  const TetMesh mesh = testutil::two_tets_unequal();
  SimState state;
  state.q = testutil::wiggle(mesh.rest_vector(), 0.01);
  state.v = testutil::wiggle(VecX::Zero(mesh.dof_count()), 0.3, 1.0);
  const VecX f_ext = testutil::wiggle(VecX::Zero(mesh.dof_count()), 2.0, 2.0);
  const Scalar h = 0.02;

  const VecX plain = free_fall_target(mesh, state, f_ext, nullptr, h);
  for (int i = 0; i < mesh.dof_count(); ++i) {
    const Scalar expect =
        state.q[i] + h * state.v[i] + h * h * f_ext[i] / mesh.lumped_mass()[i];
    CHECK(plain[i] == doctest::Approx(expect).epsilon(1e-14));
  }

  // A state force is sampled at (q, v) and added to the external force.
  const VecX bonus = testutil::wiggle(VecX::Zero(mesh.dof_count()), 1.5, 3.0);
  StateForce hook;
  hook.force = [&](const VecX&, const VecX&) { return bonus; };
  const VecX hooked = free_fall_target(mesh, state, f_ext, &hook, h);
  for (int i = 0; i < mesh.dof_count(); ++i) {
    const Scalar expect = state.q[i] + h * state.v[i] +
                          h * h * (f_ext[i] + bonus[i]) / mesh.lumped_mass()[i];
    CHECK(hooked[i] == doctest::Approx(expect).epsilon(1e-14));
  }

  bool threw = false;
  try {
    free_fall_target(mesh, state, f_ext, nullptr, 0.0);
  } catch (const Error& e) {
    threw = true;
    CHECK(e.code() == ErrorCode::InvalidArgument);
  }
  CHECK(threw);
}

TEST_CASE("local projections at rest are identity targets") {
  const TetMesh mesh = ingest_hex_grid({2, 2, 2}, 0.1, 1000.0);
  const VecX rest = mesh.rest_vector();

  const std::vector<Scalar> young(mesh.element_count(), 5e4);
  const MaterialField nh = build_material(mesh, young, 0.4,
                                          EnergyKind::NeoHookean, false, 0.0,
                                          0.0);
  for (const ElementProjection& p : local_solve(mesh, nh, rest)) {
    CHECK_FALSE(p.has_secondary);
    CHECK((p.primary.p_star - Mat3::Identity()).norm() <= 1e-12);
  }

  const MaterialField cor = build_material(mesh, young, 0.4,
                                           EnergyKind::Corotated, false, 0.0,
                                           0.0);
  for (const ElementProjection& p : local_solve(mesh, cor, rest)) {
    CHECK(p.has_secondary);
    CHECK((p.primary.p_star - Mat3::Identity()).norm() <= 1e-12);
    CHECK((p.secondary.p_star - Mat3::Identity()).norm() <= 1e-12);
    CHECK(p.secondary.p_star.determinant() == doctest::Approx(1.0));
  }
}

TEST_CASE("heterogeneous neo-hookean local steps use the mean parameters") {
  const TetMesh mesh = testutil::two_tets_unequal();
  const std::vector<Scalar> young = {4e4, 9e4};
  const MaterialField mat = build_material(mesh, young, 0.35,
                                           EnergyKind::NeoHookean, false,
                                           0.0, 0.0);
  const VecX q = testutil::wiggle(mesh.rest_vector(), 0.03, 0.2);
  const ProxMeans means = mat.prox_means();
  const auto proj = local_solve(mesh, mat, q);
  for (int e = 0; e < mesh.element_count(); ++e) {
    const Mat3 f = deformation_gradient(mesh, e, q);
    const ProxResult expect = nh_prox(f, means.mu, means.lambda,
                                      means.stiffness);
    CHECK((proj[e].primary.p_star - expect.p_star).norm() <= 1e-13);
    CHECK((proj[e].primary.sigma_star - expect.sigma_star).norm() <= 1e-13);
  }
}

TEST_CASE("corotated log-barrier local steps match the barrier prox") {
  const TetMesh mesh = testutil::two_tets_unequal();
  const std::vector<Scalar> young = {4e4, 9e4};
  const MaterialField mat = build_material(mesh, young, 0.35,
                                           EnergyKind::Corotated, true, 0.0,
                                           0.0);
  const VecX q = testutil::wiggle(mesh.rest_vector(), 0.03, 0.2);
  const auto proj = local_solve(mesh, mat, q);
  for (int e = 0; e < mesh.element_count(); ++e) {
    const Mat3 f = deformation_gradient(mesh, e, q);
    CHECK(proj[e].has_secondary);
    const ProxResult expect = log_barrier_prox(f, mat.mu(e), mat.lambda(e));
    CHECK((proj[e].secondary.p_star - expect.p_star).norm() <= 1e-13);
  }
}

TEST_CASE("rhs assembly matches the per-element formula") {
  const TetMesh mesh = testutil::two_tets_unequal();
  const std::vector<Scalar> young = {4e4, 9e4};
  const MaterialField mat = build_material(mesh, young, 0.3,
                                           EnergyKind::Corotated, false,
                                           0.05, 0.2);
  const Scalar h = 0.01;
  const VecX q_tilde = testutil::wiggle(mesh.rest_vector(), 0.02, 0.5);
  const auto proj = local_solve(mesh, mat, q_tilde);

  const VecX b = pd_rhs(mesh, mat, q_tilde, proj, h);
  VecX expect = mesh.lumped_mass().cwiseProduct(q_tilde) / (h * h);
  for (int e = 0; e < mesh.element_count(); ++e) {
    Eigen::Matrix<Scalar, 9, 1> target;
    target = mat.rotation_weight(e) *
                 Eigen::Map<const Eigen::Matrix<Scalar, 9, 1>>(
                     proj[e].primary.p_star.data()) +
             mat.volume_weight(e) *
                 Eigen::Map<const Eigen::Matrix<Scalar, 9, 1>>(
                     proj[e].secondary.p_star.data());
    const auto op = element_operator(mesh, e);
    const Eigen::Matrix<Scalar, 12, 1> local =
        mesh.volume(e) * (op.transpose() * target);
    const auto dofs = mesh.element_dofs(e);
    for (int i = 0; i < 12; ++i) expect[dofs[i]] += local[i];
  }
  CHECK((b - expect).norm() <= 1e-10 * expect.norm());

  const VecX q_t = testutil::wiggle(mesh.rest_vector(), 0.015, 1.1);
  const VecX d = damping_rhs(mesh, mat, q_t, h);
  VecX d_expect = (mat.alpha() / h) * mesh.lumped_mass().cwiseProduct(q_t);
  for (int e = 0; e < mesh.element_count(); ++e) {
    const Mat3 f_t = deformation_gradient(mesh, e, q_t);
    const auto op = element_operator(mesh, e);
    const Eigen::Matrix<Scalar, 12, 1> local =
        (mat.beta(e) * mesh.volume(e) / h) *
        (op.transpose() *
         Eigen::Map<const Eigen::Matrix<Scalar, 9, 1>>(f_t.data()));
    const auto dofs = mesh.element_dofs(e);
    for (int i = 0; i < 12; ++i) d_expect[dofs[i]] += local[i];
  }
  CHECK((d - d_expect).norm() <= 1e-10 * (1.0 + d_expect.norm()));
}

TEST_CASE("damped rest configurations are fixed points of the global solve") {
  const TetMesh mesh = ingest_hex_grid({2, 2, 2}, 0.1, 1000.0);
  const VecX rest = mesh.rest_vector();
  const Scalar h = 0.01;
  for (EnergyKind kind : {EnergyKind::NeoHookean, EnergyKind::Corotated}) {
    const MaterialField mat = build_material(
        mesh, std::vector<Scalar>(mesh.element_count(), 5e4), 0.4, kind,
        false, 0.05, 0.2);
    GlobalSystem system;
    system.refresh(mesh, mat, h, {});
    const VecX b = pd_rhs(mesh, mat, rest, local_solve(mesh, mat, rest), h) +
                   damping_rhs(mesh, mat, rest, h);
    const VecX q = system.solve_free(b, rest);
    CHECK((q - rest).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
}

TEST_CASE("dual gate requires one full iterate and both tolerances") {
  const int n = 7;
  const VecX q_k = testutil::wiggle(VecX::Constant(n, 1.0), 0.2);
  const VecX b_k = testutil::wiggle(VecX::Constant(n, 3.0), 0.4, 1.0);
  const Scalar eps_rel = 1e-3;
  const Scalar eps_abs = 1e-9;

  // Exactly at the boundary both sides pass; never at k = 0.
  CHECK_FALSE(dual_gate(q_k, q_k, b_k, b_k, eps_rel, eps_abs, 0));
  CHECK(dual_gate(q_k, q_k, b_k, b_k, eps_rel, eps_abs, 1));
  CHECK(dual_gate(q_k, q_k, b_k, b_k, eps_rel, eps_abs, 7));

  VecX q_near = q_k;
  q_near[0] += 0.5 * (eps_rel * q_k.norm() + eps_abs);
  VecX q_far = q_k;
  q_far[0] += 2.0 * (eps_rel * q_k.norm() + eps_abs);
  CHECK(dual_gate(q_k, q_near, b_k, b_k, eps_rel, eps_abs, 2));
  CHECK_FALSE(dual_gate(q_k, q_far, b_k, b_k, eps_rel, eps_abs, 2));

  VecX b_far = b_k;
  b_far[0] += 2.0 * (eps_rel * b_k.norm() + eps_abs);
  CHECK_FALSE(dual_gate(q_k, q_k, b_k, b_far, eps_rel, eps_abs, 2));
}

TEST_CASE("anderson mixing: plain first step, bounded window, guard") {
  const int n = 6;
  const VecX q0 = testutil::wiggle(VecX::Zero(n), 1.0);
  const VecX g0 = testutil::wiggle(VecX::Zero(n), 0.5, 2.0);

  AaHistory clamped(0);
  CHECK(clamped.window() == 1);

  AaHistory aa(2);
  CHECK(aa.window() == 2);
  CHECK(aa.stored() == 0);
  // First call has no history: a plain fixed-point step.
  const VecX q1 = aa.mix(q0, g0);
  CHECK((q1 - (q0 + g0)).norm() == 0.0);
  CHECK_FALSE(aa.guard_tripped());

  // History depth never exceeds the window.
  VecX q = q1;
  for (int k = 0; k < 5; ++k) {
    q = aa.mix(q, testutil::wiggle(VecX::Zero(n), 0.1, 0.3 * k));
    CHECK(aa.stored() <= 2);
  }
  CHECK(aa.stored() == 2);

  // A near-singular residual history makes the coefficient norm explode;
  // the guard discards the history and falls back to the plain step.
  AaHistory guarded(3);
  VecX dir = VecX::Zero(n);
  dir[0] = 1.0;
  guarded.mix(q0, dir);
  const VecX q_g = testutil::wiggle(VecX::Zero(n), 0.7, 1.3);
  const VecX mixed = guarded.mix(q_g, (1.0 + 1e-8) * dir);
  CHECK(guarded.guard_tripped());
  CHECK(guarded.stored() == 0);
  CHECK((mixed - (q_g + (1.0 + 1e-8) * dir)).norm() == 0.0);

  // clear() resets everything.
  guarded.mix(q0, dir);
  guarded.clear();
  CHECK(guarded.stored() == 0);
  CHECK((guarded.mix(q0, dir) - (q0 + dir)).norm() == 0.0);
}

TEST_CASE("anderson mixing accelerates an affine contraction") {
  // T(q) = c + B q with spectral radius 0.8: plain iteration crawls, a
  // window-2 history solves the affine problem almost exactly.
  const int n = 2;
  Eigen::Matrix2d big;
  big << 0.5, 0.0, 0.0, 0.8;
  const Eigen::Vector2d c(1.0, 1.0);
  const Eigen::Vector2d q_star =
      (Eigen::Matrix2d::Identity() - big).inverse() * c;

  auto g_of = [&](const VecX& q) -> VecX { return c + big * q - q; };

  VecX plain = VecX::Zero(n);
  for (int k = 0; k < 10; ++k) plain += g_of(plain);

  AaHistory aa(2);
  VecX q = VecX::Zero(n);
  for (int k = 0; k < 10; ++k) q = aa.mix(q, g_of(q));

  const Scalar err_aa = (q - q_star).norm();
  const Scalar err_plain = (plain - q_star).norm();
  CHECK(err_aa <= 1e-8);
  CHECK(err_aa < 1e-3 * err_plain);
}

TEST_CASE("ballistic translation is integrated symplectically") {
  testutil::BlockOptions opt;
  opt.alpha = 0.0;
  opt.beta0 = 0.0;
  opt.v0_amp = 0.0;
  opt.gravity_z = -2.0;
  Rig rig(opt);
  rig.spec.solver.eps_rel = 1e-4;
  rig.spec.solver.eps_abs = 1e-9;

  const VecX q0 = rig.state.q;
  const Scalar h = rig.spec.solver.h;
  const Scalar g = -2.0;

  ForwardCache last;
  for (int s = 0; s < 3; ++s) last = rig.step();

  // Symplectic Euler for a uniform translation: v_N = N h g,
  // z_N = z_0 + g h^2 N (N + 1) / 2 on every vertex, x/y untouched.
  const int steps = 3;
  for (int v = 0; v < rig.spec.mesh.vertex_count(); ++v) {
    CHECK(rig.state.q[3 * v + 0] == doctest::Approx(q0[3 * v + 0]));
    CHECK(rig.state.q[3 * v + 1] == doctest::Approx(q0[3 * v + 1]));
    const Scalar expect_z =
        q0[3 * v + 2] + g * h * h * steps * (steps + 1) / 2.0;
    CHECK(rig.state.q[3 * v + 2] ==
          doctest::Approx(expect_z).epsilon(1e-10));
    CHECK(rig.state.v[3 * v + 2] ==
          doctest::Approx(steps * h * g).epsilon(1e-10));
  }

  CHECK(last.converged);
  CHECK(last.iteration_count <= 3);
  CHECK(last.contacts.empty());
  CHECK(last.h == h);
  CHECK(rig.state.time == doctest::Approx(steps * h));

  // Cache consistency: the velocity is the divided difference, the target
  // matches a recomputation, and the stored rhs reproduces the output.
  CHECK((last.v_star - (last.q_star - last.q_t) / h).norm() == 0.0);
  SimState probe;
  probe.q = last.q_t;
  probe.v = last.v_t;
  const VecX tilde =
      free_fall_target(rig.spec.mesh, probe, last.f_ext, nullptr, h);
  CHECK((tilde - last.q_tilde).norm() == 0.0);
  const VecX replay = rig.system.solve_free(last.b_star, last.q_t);
  CHECK((replay - last.q_star).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("pinned vertices remain bitwise fixed across steps") {
  testutil::BlockOptions opt;
  opt.fix_x0_face = true;
  opt.gravity_z = -2.0;
  opt.v0_amp = 0.0;
  Rig rig(opt);
  rig.spec.solver.eps_rel = 1e-6;
  rig.spec.solver.eps_abs = 1e-10;
  REQUIRE_FALSE(rig.spec.fixed_vertices.empty());

  const VecX q0 = rig.state.q;
  for (int s = 0; s < 3; ++s) rig.step();

  for (int v : rig.spec.fixed_vertices) {
    for (int a = 0; a < 3; ++a) {
      CHECK(rig.state.q[3 * v + a] == q0[3 * v + a]);  // bitwise
      CHECK(rig.state.v[3 * v + a] == 0.0);
    }
  }
  // The free side sagged.
  Scalar moved = 0;
  for (int v = 0; v < rig.spec.mesh.vertex_count(); ++v) {
    moved = std::max(moved, std::abs(rig.state.q[3 * v + 2] - q0[3 * v + 2]));
  }
  CHECK(moved > 1e-6);
}

TEST_CASE("iteration cap still advances the state, unconverged") {
  testutil::BlockOptions opt;
  opt.fix_x0_face = true;
  opt.gravity_z = -9.81;
  opt.v0_amp = 0.0;
  Rig rig(opt);
  rig.spec.solver.k_max = 1;
  rig.spec.solver.eps_rel = 1e-12;
  rig.spec.solver.eps_abs = 1e-14;

  const VecX q0 = rig.state.q;
  const ForwardCache cache = rig.step();
  CHECK_FALSE(cache.converged);
  CHECK(cache.iteration_count == 1);
  CHECK(rig.state.time == doctest::Approx(rig.spec.solver.h));
  CHECK((rig.state.q - q0).norm() > 0.0);
  CHECK((rig.state.q - cache.q_star).norm() == 0.0);
}

TEST_CASE("resting contact: penetration, cone, stamped r, force balance") {
  testutil::BlockOptions opt;
  opt.floor = true;
  opt.friction = 0.5;
  opt.gravity_z = -2.0;
  opt.v0_amp = 0.0;
  Rig rig(opt);
  rig.spec.solver.eps_rel = 1e-10;
  rig.spec.solver.eps_abs = 1e-12;

  ForwardCache last;
  for (int s = 0; s < 15; ++s) last = rig.step();
  CHECK(last.converged);
  REQUIRE_FALSE(last.contacts.empty());

  // Non-penetration at the solver's detection scale.
  const Obstacle& floor = rig.spec.obstacles[0];
  for (int v = 0; v < rig.spec.mesh.vertex_count(); ++v) {
    const Vec3 x = rig.state.q.segment<3>(3 * v);
    CHECK(obstacle_signed_distance(floor, x) >= -1e-6);
  }

  const ContactSet& set = last.contacts;
  const VecX& lam = last.lambda_star;
  REQUIRE(lam.size() == set.row_count());

  // Normal multipliers are nonnegative and the friction pairs sit inside
  // (or on) their cones.
  for (int c = 0; c < set.normal_count(); ++c) {
    CHECK(lam[set.normal_row(c)] >= 0.0);
  }
  const std::vector<int> fidx = set.friction_contacts();
  for (int f = 0; f < static_cast<int>(fidx.size()); ++f) {
    const int fr = set.friction_row(f);
    const Scalar bound = set.contacts[fidx[f]].friction *
                         lam[set.normal_row(fidx[f])];
    CHECK(std::hypot(lam[fr], lam[fr + 1]) <= bound + 1e-10);
  }

  // The detection pass stamps the diagonal-response scaling into each row.
  const Scalar h = rig.spec.solver.h;
  for (int c = 0; c < set.normal_count(); ++c) {
    const int nr = set.normal_row(c);
    CHECK(set.contacts[c].r_n ==
          doctest::Approx(h * h * last.delassus(nr, nr)).epsilon(1e-12));
  }
  for (int f = 0; f < static_cast<int>(fidx.size()); ++f) {
    const int fr = set.friction_row(f);
    const Scalar expect = h * h * 0.5 *
                          (last.delassus(fr, fr) + last.delassus(fr + 1, fr + 1));
    CHECK(set.contacts[fidx[f]].r_f == doctest::Approx(expect).epsilon(1e-12));
  }

  // Settled: weighted normal forces carry the block's weight.
  CHECK(rig.state.v.lpNorm<Eigen::Infinity>() <= 1e-6);
  const Scalar weight = (rig.spec.mesh.lumped_mass().sum() / 3.0) * 2.0;
  Scalar support = 0;
  for (int c = 0; c < set.normal_count(); ++c) {
    const int nr = set.normal_row(c);
    support += last.weights_star.omega[nr] * lam[nr];
  }
  CHECK(support == doctest::Approx(weight).epsilon(0.02));
}
