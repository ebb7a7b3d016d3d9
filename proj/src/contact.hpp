// Vertex-vs-analytic-obstacle contact: detection, Fischer-Burmeister NCP
// weights, the dense multiplier update with block cone projection, and the
// row layout shared with the factor's batched Delassus assembly.
//
// Stacked row order: normal rows first, then bilateral attachment rows,
// then two tangent rows per frictional contact.
#pragma once

#include <utility>
#include <vector>

#include "common.hpp"
#include "factor.hpp"
#include "mesh.hpp"

namespace heterodyn {

struct Obstacle {
  enum class Kind { HalfSpace, Sphere };
  Kind kind = Kind::HalfSpace;
  Vec3 normal = Vec3::UnitY();  // half-space only (unit length)
  Scalar offset = 0;            // half-space plane: normal . x = offset
  Vec3 center = Vec3::Zero();   // sphere only
  Scalar radius = 1;            // sphere only (> 0)
  Scalar friction = 0;          // Coulomb coefficient, >= 0
};

Obstacle make_halfspace(const Vec3& normal, Scalar offset, Scalar friction);
Obstacle make_sphere(const Vec3& center, Scalar radius, Scalar friction);

// Signed distance from point x to the obstacle surface (negative inside).
Scalar obstacle_signed_distance(const Obstacle& ob, const Vec3& x);

// Outward unit normal of the obstacle at (or nearest to) x.
Vec3 obstacle_normal(const Obstacle& ob, const Vec3& x);

// Deterministic orthonormal completion of a unit normal: the first tangent
// comes from crossing with the coordinate axis of smallest normal component.
std::pair<Vec3, Vec3> tangent_basis(const Vec3& normal);

struct ContactPoint {
  int vertex = -1;
  Vec3 normal = Vec3::UnitY();
  Scalar gap_offset = 0;  // signed gap is normal . q_v - gap_offset
  Vec3 t1 = Vec3::UnitX();
  Vec3 t2 = Vec3::UnitZ();
  int obstacle_id = -1;
  Scalar friction = 0;
  Scalar r_n = 0;  // h^2 * normal-row Delassus diagonal
  Scalar r_f = 0;  // h^2 * mean tangent-row Delassus diagonal
};

struct BilateralRow {
  int vertex = -1;
  Vec3 direction = Vec3::UnitX();  // unit row direction
  Scalar target = 0;               // enforces direction . q_v = target
};

class ContactSet {
 public:
  std::vector<ContactPoint> contacts;
  std::vector<BilateralRow> bilateral;

  int normal_count() const { return static_cast<int>(contacts.size()); }
  int bilateral_count() const { return static_cast<int>(bilateral.size()); }
  int friction_pair_count() const;
  int row_count() const {
    return normal_count() + bilateral_count() + 2 * friction_pair_count();
  }
  bool empty() const { return row_count() == 0; }

  int normal_row(int c) const { return c; }
  int bilateral_row(int i) const { return normal_count() + i; }
  // First row of the tangent pair for the f-th frictional contact.
  int friction_row(int f) const {
    return normal_count() + bilateral_count() + 2 * f;
  }
  // Indices into `contacts` of the frictional contacts, in order.
  std::vector<int> friction_contacts() const;

  // Constraint rows as single-vertex spikes, in stacked order.
  std::vector<SpikeRow> rows() const;

  VecX zero_multipliers() const { return VecX::Zero(row_count()); }

  // J q per stacked row.
  VecX constraint_values(const VecX& q) const;
};

// Scans free vertices against every obstacle; a vertex whose signed distance
// is at most `margin` produces one contact with the geometry frozen at the
// detection configuration.
ContactSet detect_contacts(const TetMesh& mesh, const VecX& q,
                           const std::vector<Obstacle>& obstacles,
                           Scalar margin, const std::vector<char>& vertex_free);

// Fischer-Burmeister residual phi = delta + r lambda - sqrt(delta^2 +
// r^2 lambda^2); zero exactly on the complementarity set.
Scalar fb_residual(Scalar delta, Scalar r, Scalar lambda);

// NCP weights (omega, E) of the linearized FB row; at the origin the
// active-branch limit (1, r) is used.
std::pair<Scalar, Scalar> ncp_weights(Scalar delta, Scalar r, Scalar lambda);

struct WeightSet {
  VecX omega;   // per stacked row
  VecX e_diag;  // per stacked row
};

// Weights evaluated at the current iterate: normal rows from the signed gap
// and normal multiplier, bilateral rows fixed at (1, 0), friction pairs from
// the within-step slip magnitude and cone slack (both tangent rows share the
// pair's weights).
WeightSet contact_weights(const ContactSet& set, const VecX& q,
                          const VecX& q_t, const VecX& lambda);

// Stacked constant offsets: omega_c * gap_offset for normals, attachment
// targets for bilateral rows, omega_f * (row . q_t) for friction rows (the
// slip constraint's constant term).
VecX offset_vector(const ContactSet& set, const WeightSet& weights,
                   const VecX& q_t);

// Block projection: normals clamped to >= 0, bilateral rows untouched,
// friction pairs radially projected onto || lambda_f || <= mu * lambda_n
// using the freshly projected normal multiplier.
VecX project_multipliers(const ContactSet& set, VecX lambda);

// One linearized NCP update: solves (Omega W Omega + diag(E) + lift I)
// dlambda = h_vec - Omega (J q_mid) and returns the projected multipliers.
// q_mid must already include the current multiplier forces, i.e.
// jq_mid = J A^-1 (b + J^T Omega lambda).
VecX contact_iteration(const ContactSet& set, const MatX& delassus,
                       const WeightSet& weights, const VecX& h_vec,
                       const VecX& jq_mid, const VecX& lambda);

}  // namespace heterodyn
