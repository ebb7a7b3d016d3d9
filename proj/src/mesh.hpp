#pragma once
// Tetrahedral mesh: rest geometry, per-element reference inverses and volumes,
// lumped masses, and the linear deformation-gradient operators.

#include <array>

#include "common.hpp"

namespace heterodyn {

// 9x12 linear map from an element's stacked vertex positions to vec(F).
// vec(F) is column-major: vec(F)[3*c + r] = F(r, c). The 12 element DoFs are
// the four vertices' xyz triples in element order.
using ElementOperator = Eigen::Matrix<Scalar, 9, 12>;

class TetMesh {
 public:
  int vertex_count() const { return static_cast<int>(rest_.rows()); }
  int element_count() const { return static_cast<int>(elements_.size()); }
  int dof_count() const { return 3 * vertex_count(); }

  const MatX& rest_positions() const { return rest_; }
  const std::vector<std::array<int, 4>>& elements() const { return elements_; }
  Scalar volume(int e) const { return volumes_[e]; }
  Scalar total_volume() const { return total_volume_; }
  const Mat3& inv_reference(int e) const { return inv_reference_[e]; }

  // Diagonal lumped mass, one entry per DoF (each vertex's three axes equal).
  const VecX& lumped_mass() const { return lumped_mass_; }
  Scalar vertex_mass(int v) const { return lumped_mass_[3 * v]; }

  // Per-element shape-gradient rows g[i] (i over the 4 nodes):
  // F(r,c) = sum_i g[i][c] * x_i[r].
  const Eigen::Matrix<Scalar, 4, 3>& shape_gradient(int e) const { return shape_grad_[e]; }

  std::array<int, 12> element_dofs(int e) const;
  // Rest position vector flattened to dof_count entries (vertex-major xyz).
  VecX rest_vector() const;

  // Vertices on the surface (member of a face used by exactly one element);
  // contact candidate set.
  const std::vector<int>& boundary_vertices() const { return boundary_vertices_; }

  // Monotone id distinguishing topologies for factor staleness checks.
  std::uint64_t topology_id() const { return topology_id_; }

  friend TetMesh build_tet_mesh(const MatX& rest, const std::vector<std::array<int, 4>>& elements,
                                Scalar density);

 private:
  MatX rest_;
  std::vector<std::array<int, 4>> elements_;
  std::vector<Mat3> inv_reference_;
  std::vector<Eigen::Matrix<Scalar, 4, 3>> shape_grad_;
  std::vector<Scalar> volumes_;
  Scalar total_volume_ = 0.0;
  VecX lumped_mass_;
  std::vector<int> boundary_vertices_;
  std::uint64_t topology_id_ = 0;
};

// Validates connectivity and orientation (throws DegenerateElement on
// non-positive or near-zero rest volume), precomputes Dm^{-1}, volumes,
// shape gradients, and density-lumped vertex masses (quarter volume each).
TetMesh build_tet_mesh(const MatX& rest, const std::vector<std::array<int, 4>>& elements,
                       Scalar density);

// Axis-aligned hex grid of dims cells split into six positively oriented tets
// per cell; the split is mirrored on odd-parity cells to balance anisotropy.
TetMesh ingest_hex_grid(const std::array<int, 3>& dims, Scalar spacing, Scalar density);

// Deformation gradient of element e at configuration q (dof vector).
Mat3 deformation_gradient(const TetMesh& mesh, int e, const VecX& q);

// Dense 9x12 operator with matching global DoF indices.
ElementOperator element_operator(const TetMesh& mesh, int e);

}  // namespace heterodyn
