#pragma once
// Shared deterministic fixtures for the unit tests: tiny meshes, materials,
// and fully assembled scenes small enough for dense cross-checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "material.hpp"
#include "mesh.hpp"
#include "scene.hpp"

namespace testutil {

using heterodyn::EnergyKind;
using heterodyn::Mat3;
using heterodyn::MatX;
using heterodyn::Scalar;
using heterodyn::SceneSpec;
using heterodyn::TetMesh;
using heterodyn::Vec3;
using heterodyn::VecX;

// Right-corner unit tetrahedron: rest volume 1/6.
inline TetMesh unit_tet(Scalar density = 1000.0) {
  MatX rest(4, 3);
  rest << 0, 0, 0,
          1, 0, 0,
          0, 1, 0,
          0, 0, 1;
  std::vector<std::array<int, 4>> elements = {{0, 1, 2, 3}};
  return heterodyn::build_tet_mesh(rest, elements, density);
}

// Two positively oriented tets sharing the triangle {0,1,2}, with rest
// volumes 1/6 and 1/3 (so volume-weighted means differ from plain means).
inline TetMesh two_tets_unequal(Scalar density = 1000.0) {
  MatX rest(5, 3);
  rest << 0, 0, 0,
          1, 0, 0,
          0, 1, 0,
          0, 0, 1,
          0, 0, -2;
  std::vector<std::array<int, 4>> elements = {{0, 1, 2, 3}, {0, 2, 1, 4}};
  return heterodyn::build_tet_mesh(rest, elements, density);
}

// Deterministic smooth displacement field: per-DoF sinusoid of amplitude
// `amp`.  Small amplitudes keep every element uninverted.
inline VecX wiggle(const VecX& rest, Scalar amp, Scalar phase = 0.0) {
  VecX q = rest;
  for (int i = 0; i < q.size(); ++i) q[i] += amp * std::sin(0.7 * i + phase);
  return q;
}

// A deterministic well-conditioned deformation gradient with distinct
// singular values and positive determinant.
inline Mat3 bent_gradient() {
  Mat3 f;
  f << 1.10, 0.20, -0.10,
       0.05, 0.85,  0.15,
      -0.20, 0.10,  1.25;
  return f;
}

// Options for a small grid-block scene used by the solver-level tests.
struct BlockOptions {
  std::array<int, 3> dims = {2, 2, 2};
  Scalar spacing = 0.1;
  EnergyKind kind = EnergyKind::NeoHookean;
  Scalar young_base = 5e4;
  Scalar contrast = 1.0;  // > 1: elements whose centroid sits above the
                          // mid-height plane get contrast * young_base
  Scalar poisson = 0.4;
  Scalar alpha = 0.01;
  Scalar beta0 = 0.0;
  bool floor = false;     // half-space z >= 0 directly under the block
  Scalar friction = 0.4;
  Scalar gravity_z = -2.0;
  int frames = 3;
  Scalar v0_amp = 0.05;   // sinusoidal initial velocity amplitude
  bool fix_x0_face = false;  // clamp every vertex on the x = 0 plane
  bool hook = false;         // point spring on the last vertex
};

inline SceneSpec block_scene(const BlockOptions& opt) {
  using namespace heterodyn;
  SceneSpec s;
  s.name = "block";
  s.mesh = ingest_hex_grid(opt.dims, opt.spacing, 1000.0);
  const int ne = s.mesh.element_count();
  const int nv = s.mesh.vertex_count();
  const MatX& rest = s.mesh.rest_positions();

  Scalar zmin = rest.col(2).minCoeff();
  Scalar zmax = rest.col(2).maxCoeff();
  const Scalar zmid = 0.5 * (zmin + zmax);
  std::vector<Scalar> young(ne, opt.young_base);
  if (opt.contrast != 1.0) {
    for (int e = 0; e < ne; ++e) {
      Vec3 c = Vec3::Zero();
      for (int k = 0; k < 4; ++k)
        c += rest.row(s.mesh.elements()[e][k]).transpose();
      c /= 4.0;
      if (c[2] > zmid) young[e] = opt.contrast * opt.young_base;
    }
  }
  s.material = build_material(s.mesh, young, opt.poisson, opt.kind,
                              /*log_volume_barrier=*/false, opt.alpha,
                              opt.beta0);

  s.gravity = Vec3(0, 0, opt.gravity_z);
  if (opt.floor) {
    // The grid's bottom face lies exactly on z = 0, so contacts are active
    // from the first frame and gravity keeps them pressed.
    s.obstacles.push_back(make_halfspace(Vec3(0, 0, 1), 0.0, opt.friction));
  }
  if (opt.fix_x0_face) {
    for (int v = 0; v < nv; ++v)
      if (rest(v, 0) <= 1e-12) s.fixed_vertices.push_back(v);
  }

  s.solver.h = 0.01;
  s.solver.eps_rel = 1e-12;
  s.solver.eps_abs = 1e-14;
  s.frames = opt.frames;
  s.q0 = s.mesh.rest_vector();
  s.v0 = VecX::Zero(s.mesh.dof_count());
  for (int i = 0; i < s.v0.size(); ++i)
    s.v0[i] = opt.v0_amp * std::sin(0.7 * i);
  for (int v : s.fixed_vertices) s.v0.segment<3>(3 * v).setZero();

  if (opt.hook) {
    s.has_hook = true;
    s.hook_vertex = nv - 1;
    s.hook_anchor =
        rest.row(nv - 1).transpose() + Vec3(0.02, -0.01, 0.05);
    s.hook_stiffness = 2e3;
    s.hook_damping = 5.0;
  }
  return s;
}

}  // namespace testutil
