#include <doctest.h>

#include <cmath>

#include "mesh.hpp"
#include "test_util.hpp"

using namespace heterodyn;

TEST_CASE("unit tetrahedron: volume and quarter-lumped masses") {
  const TetMesh mesh = testutil::unit_tet(1000.0);
  CHECK(mesh.vertex_count() == 4);
  CHECK(mesh.element_count() == 1);
  CHECK(mesh.dof_count() == 12);

  // Hand computation: V = det([e1 e2 e3]) / 6 = 1/6 for the right-corner tet.
  CHECK(mesh.volume(0) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  CHECK(mesh.total_volume() == doctest::Approx(1.0 / 6.0).epsilon(1e-14));

  // Each vertex receives a quarter of the element mass rho * V.
  const Scalar quarter = 1000.0 * (1.0 / 6.0) / 4.0;
  for (int v = 0; v < 4; ++v) {
    CHECK(mesh.vertex_mass(v) == doctest::Approx(quarter).epsilon(1e-14));
    for (int c = 0; c < 3; ++c) {
      CHECK(mesh.lumped_mass()[3 * v + c] ==
            doctest::Approx(quarter).epsilon(1e-14));
    }
  }
}

TEST_CASE("lumped mass conserves the total mass") {
  const TetMesh mesh = ingest_hex_grid({2, 2, 2}, 0.5, 1234.0);
  // Every DoF axis carries the full mass once, so the per-DoF sum is 3x it.
  const Scalar total = mesh.lumped_mass().sum() / 3.0;
  CHECK(total ==
        doctest::Approx(1234.0 * mesh.total_volume()).epsilon(1e-12));
}

TEST_CASE("rest configuration has an identity deformation gradient") {
  const TetMesh tet = testutil::unit_tet();
  const TetMesh grid = ingest_hex_grid({2, 2, 2}, 0.3, 1000.0);
  for (const TetMesh* mesh : {&tet, &grid}) {
    const VecX rest = mesh->rest_vector();
    for (int e = 0; e < mesh->element_count(); ++e) {
      const Mat3 f = deformation_gradient(*mesh, e, rest);
      CHECK((f - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-13);
    }
  }
}

TEST_CASE("uniform scaling scales the deformation gradient uniformly") {
  const TetMesh mesh = ingest_hex_grid({2, 1, 1}, 0.2, 1000.0);
  const VecX q = 1.7 * mesh.rest_vector();
  for (int e = 0; e < mesh.element_count(); ++e) {
    const Mat3 f = deformation_gradient(mesh, e, q);
    CHECK((f - 1.7 * Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("element operator reproduces the deformation gradient linearly") {
  const TetMesh mesh = ingest_hex_grid({2, 2, 1}, 0.25, 1000.0);
  const VecX q = testutil::wiggle(mesh.rest_vector(), 0.03);
  for (int e = 0; e < mesh.element_count(); ++e) {
    const ElementOperator op = element_operator(mesh, e);
    const std::array<int, 12> dofs = mesh.element_dofs(e);
    Eigen::Matrix<Scalar, 12, 1> local;
    for (int i = 0; i < 12; ++i) local[i] = q[dofs[i]];
    const Eigen::Matrix<Scalar, 9, 1> vec_f = op * local;
    const Mat3 f = deformation_gradient(mesh, e, q);
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 3; ++r)
        CHECK(vec_f[3 * c + r] == doctest::Approx(f(r, c)).epsilon(1e-12));
  }
}

TEST_CASE("deformation gradient matches its shape-gradient definition") {
  // F(r, c) = sum_i g[i][c] * x_i[r] with g the per-node shape gradients.
  const TetMesh mesh = testutil::two_tets_unequal();
  const VecX q = testutil::wiggle(mesh.rest_vector(), 0.05, 1.3);
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto& g = mesh.shape_gradient(e);
    Mat3 f = Mat3::Zero();
    for (int i = 0; i < 4; ++i) {
      const int v = mesh.elements()[e][i];
      f += q.segment<3>(3 * v) * g.row(i);
    }
    const Mat3 ref = deformation_gradient(mesh, e, q);
    CHECK((f - ref).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("shape gradient rows sum to zero") {
  // Translation invariance: shifting all vertices must not change F.
  const TetMesh mesh = ingest_hex_grid({2, 2, 2}, 0.4, 1000.0);
  for (int e = 0; e < mesh.element_count(); ++e) {
    const Vec3 row_sum = mesh.shape_gradient(e).colwise().sum().transpose();
    CHECK(row_sum.cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("element dof indices enumerate vertex axes in element order") {
  const TetMesh mesh = testutil::two_tets_unequal();
  const std::array<int, 12> d0 = mesh.element_dofs(0);
  for (int i = 0; i < 12; ++i) CHECK(d0[i] == i);
  // Second element is {0, 2, 1, 4}.
  const std::array<int, 12> d1 = mesh.element_dofs(1);
  const std::array<int, 12> expect = {0, 1, 2, 6, 7, 8, 3, 4, 5, 12, 13, 14};
  for (int i = 0; i < 12; ++i) CHECK(d1[i] == expect[i]);
}

TEST_CASE("rest vector flattens positions vertex-major") {
  const TetMesh mesh = testutil::unit_tet();
  const VecX r = mesh.rest_vector();
  REQUIRE(r.size() == 12);
  for (int v = 0; v < 4; ++v)
    for (int c = 0; c < 3; ++c)
      CHECK(r[3 * v + c] == mesh.rest_positions()(v, c));
}

TEST_CASE("degenerate and inverted rest elements are rejected") {
  MatX flat(4, 3);
  flat << 0, 0, 0,
          1, 0, 0,
          0, 1, 0,
          1, 1, 0;  // coplanar: zero volume
  std::vector<std::array<int, 4>> el = {{0, 1, 2, 3}};
  try {
    build_tet_mesh(flat, el, 1000.0);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateElement);
  }

  MatX good(4, 3);
  good << 0, 0, 0,
          1, 0, 0,
          0, 1, 0,
          0, 0, 1;
  std::vector<std::array<int, 4>> swapped = {{0, 2, 1, 3}};  // negative volume
  try {
    build_tet_mesh(good, swapped, 1000.0);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateElement);
  }
}

TEST_CASE("hex grid: counts, positive orientation, exact volume") {
  const TetMesh one = ingest_hex_grid({1, 1, 1}, 0.3, 1000.0);
  CHECK(one.vertex_count() == 8);
  CHECK(one.element_count() == 6);
  CHECK(one.total_volume() == doctest::Approx(0.3 * 0.3 * 0.3).epsilon(1e-12));

  const TetMesh grid = ingest_hex_grid({2, 2, 2}, 0.5, 1000.0);
  CHECK(grid.vertex_count() == 27);
  CHECK(grid.element_count() == 48);
  CHECK(grid.total_volume() == doctest::Approx(1.0).epsilon(1e-12));
  for (int e = 0; e < grid.element_count(); ++e) CHECK(grid.volume(e) > 0.0);
}

TEST_CASE("boundary vertices of a block are exactly its shell") {
  // A 2x2x2-cell grid has 27 vertices with a single interior one.
  const TetMesh grid = ingest_hex_grid({2, 2, 2}, 0.5, 1000.0);
  const auto& boundary = grid.boundary_vertices();
  CHECK(static_cast<int>(boundary.size()) == 26);
  // The interior vertex sits at the center of the block.
  int interior = -1;
  for (int v = 0; v < grid.vertex_count(); ++v) {
    if ((grid.rest_positions().row(v).transpose() - Vec3(0.5, 0.5, 0.5))
            .norm() < 1e-12) {
      interior = v;
    }
  }
  REQUIRE(interior >= 0);
  CHECK(std::find(boundary.begin(), boundary.end(), interior) ==
        boundary.end());
}

TEST_CASE("topology ids distinguish separately built meshes") {
  const TetMesh a = testutil::unit_tet();
  const TetMesh b = testutil::unit_tet();
  // Ids are allocation-monotone: two builds are distinct factor topologies.
  CHECK(a.topology_id() != b.topology_id());
}
