#include "contact.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace heterodyn {

Obstacle make_halfspace(const Vec3& normal, Scalar offset, Scalar friction) {
  const Scalar len = normal.norm();
  if (!(len > 0)) {
    fail(ErrorCode::Validation, "half-space normal must be nonzero");
  }
  if (friction < 0) {
    fail(ErrorCode::Validation, "friction coefficient must be nonnegative");
  }
  Obstacle ob;
  ob.kind = Obstacle::Kind::HalfSpace;
  ob.normal = normal / len;
  ob.offset = offset / len;
  ob.friction = friction;
  return ob;
}

Obstacle make_sphere(const Vec3& center, Scalar radius, Scalar friction) {
  if (!(radius > 0)) {
    fail(ErrorCode::Validation, "sphere radius must be positive");
  }
  if (friction < 0) {
    fail(ErrorCode::Validation, "friction coefficient must be nonnegative");
  }
  Obstacle ob;
  ob.kind = Obstacle::Kind::Sphere;
  ob.center = center;
  ob.radius = radius;
  ob.friction = friction;
  return ob;
}

Scalar obstacle_signed_distance(const Obstacle& ob, const Vec3& x) {
  if (ob.kind == Obstacle::Kind::HalfSpace) {
    return ob.normal.dot(x) - ob.offset;
  }
  return (x - ob.center).norm() - ob.radius;
}

Vec3 obstacle_normal(const Obstacle& ob, const Vec3& x) {
  if (ob.kind == Obstacle::Kind::HalfSpace) return ob.normal;
  const Vec3 d = x - ob.center;
  const Scalar len = d.norm();
  if (len < Scalar(1e-12)) return Vec3::UnitY();  // center-coincident fallback
  return d / len;
}

std::pair<Vec3, Vec3> tangent_basis(const Vec3& normal) {
  const Vec3 a = normal.cwiseAbs();
  Vec3 axis = Vec3::UnitX();
  if (a[1] <= a[0] && a[1] <= a[2]) {
    axis = Vec3::UnitY();
  } else if (a[2] <= a[0] && a[2] <= a[1]) {
    axis = Vec3::UnitZ();
  }
  Vec3 t1 = normal.cross(axis);
  t1.normalize();
  const Vec3 t2 = normal.cross(t1);
  return {t1, t2};
}

int ContactSet::friction_pair_count() const {
  int n = 0;
  for (const ContactPoint& c : contacts) {
    if (c.friction > 0) ++n;
  }
  return n;
}

std::vector<int> ContactSet::friction_contacts() const {
  std::vector<int> idx;
  for (int c = 0; c < normal_count(); ++c) {
    if (contacts[c].friction > 0) idx.push_back(c);
  }
  return idx;
}

std::vector<SpikeRow> ContactSet::rows() const {
  std::vector<SpikeRow> out;
  out.reserve(row_count());
  for (const ContactPoint& c : contacts) {
    out.push_back({c.vertex, c.normal});
  }
  for (const BilateralRow& b : bilateral) {
    out.push_back({b.vertex, b.direction});
  }
  for (int c : friction_contacts()) {
    out.push_back({contacts[c].vertex, contacts[c].t1});
    out.push_back({contacts[c].vertex, contacts[c].t2});
  }
  return out;
}

VecX ContactSet::constraint_values(const VecX& q) const {
  VecX vals(row_count());
  int row = 0;
  for (const ContactPoint& c : contacts) {
    vals[row++] = c.normal.dot(q.segment<3>(3 * c.vertex));
  }
  for (const BilateralRow& b : bilateral) {
    vals[row++] = b.direction.dot(q.segment<3>(3 * b.vertex));
  }
  for (int c : friction_contacts()) {
    const Vec3 x = q.segment<3>(3 * contacts[c].vertex);
    vals[row++] = contacts[c].t1.dot(x);
    vals[row++] = contacts[c].t2.dot(x);
  }
  return vals;
}

ContactSet detect_contacts(const TetMesh& mesh, const VecX& q,
                           const std::vector<Obstacle>& obstacles,
                           Scalar margin,
                           const std::vector<char>& vertex_free) {
  if (margin < 0) {
    fail(ErrorCode::Validation, "contact margin must be nonnegative");
  }
  ContactSet set;
  const int n_v = mesh.vertex_count();
  for (int v = 0; v < n_v; ++v) {
    if (!vertex_free.empty() && !vertex_free[v]) continue;
    const Vec3 x = q.segment<3>(3 * v);
    for (int o = 0; o < static_cast<int>(obstacles.size()); ++o) {
      const Obstacle& ob = obstacles[o];
      if (obstacle_signed_distance(ob, x) > margin) continue;
      ContactPoint cp;
      cp.vertex = v;
      cp.normal = obstacle_normal(ob, x);
      // Linearized gap: signed_distance(q_v) ~ normal . q_v - gap_offset.
      cp.gap_offset = cp.normal.dot(x) - obstacle_signed_distance(ob, x);
      std::tie(cp.t1, cp.t2) = tangent_basis(cp.normal);
      cp.obstacle_id = o;
      cp.friction = ob.friction;
      set.contacts.push_back(cp);
    }
  }
  return set;
}

Scalar fb_residual(Scalar delta, Scalar r, Scalar lambda) {
  return delta + r * lambda -
         std::sqrt(delta * delta + r * r * lambda * lambda);
}

std::pair<Scalar, Scalar> ncp_weights(Scalar delta, Scalar r, Scalar lambda) {
  const Scalar root =
      std::sqrt(delta * delta + r * r * lambda * lambda);
  if (root == 0) return {Scalar(1), r};  // active-branch limit at the origin
  const Scalar omega = Scalar(1) - delta / root;
  const Scalar e = (Scalar(1) - r * lambda / root) * r;
  return {omega, e};
}

WeightSet contact_weights(const ContactSet& set, const VecX& q,
                          const VecX& q_t, const VecX& lambda) {
  const int k = set.row_count();
  WeightSet w;
  w.omega = VecX::Zero(k);
  w.e_diag = VecX::Zero(k);
  for (int c = 0; c < set.normal_count(); ++c) {
    const ContactPoint& cp = set.contacts[c];
    const Scalar delta =
        cp.normal.dot(q.segment<3>(3 * cp.vertex)) - cp.gap_offset;
    const int row = set.normal_row(c);
    const auto [omega, e] = ncp_weights(delta, cp.r_n, lambda[row]);
    w.omega[row] = omega;
    w.e_diag[row] = e;
  }
  for (int i = 0; i < set.bilateral_count(); ++i) {
    w.omega[set.bilateral_row(i)] = Scalar(1);
    w.e_diag[set.bilateral_row(i)] = Scalar(0);
  }
  const std::vector<int> fidx = set.friction_contacts();
  for (int f = 0; f < static_cast<int>(fidx.size()); ++f) {
    const ContactPoint& cp = set.contacts[fidx[f]];
    const Vec3 d =
        q.segment<3>(3 * cp.vertex) - q_t.segment<3>(3 * cp.vertex);
    const Scalar slip = std::hypot(cp.t1.dot(d), cp.t2.dot(d));
    const int row = set.friction_row(f);
    const Scalar lam_n = lambda[set.normal_row(fidx[f])];
    const Scalar lam_f = std::hypot(lambda[row], lambda[row + 1]);
    const Scalar slack = cp.friction * lam_n - lam_f;
    const auto [omega, e] = ncp_weights(slip, cp.r_f, slack);
    w.omega[row] = omega;
    w.omega[row + 1] = omega;
    w.e_diag[row] = e;
    w.e_diag[row + 1] = e;
  }
  return w;
}

VecX offset_vector(const ContactSet& set, const WeightSet& weights,
                   const VecX& q_t) {
  VecX h = VecX::Zero(set.row_count());
  for (int c = 0; c < set.normal_count(); ++c) {
    h[c] = weights.omega[c] * set.contacts[c].gap_offset;
  }
  for (int i = 0; i < set.bilateral_count(); ++i) {
    h[set.bilateral_row(i)] = set.bilateral[i].target;
  }
  const std::vector<int> fidx = set.friction_contacts();
  for (int f = 0; f < static_cast<int>(fidx.size()); ++f) {
    const ContactPoint& cp = set.contacts[fidx[f]];
    const Vec3 x_t = q_t.segment<3>(3 * cp.vertex);
    const int row = set.friction_row(f);
    h[row] = weights.omega[row] * cp.t1.dot(x_t);
    h[row + 1] = weights.omega[row + 1] * cp.t2.dot(x_t);
  }
  return h;
}

VecX project_multipliers(const ContactSet& set, VecX lambda) {
  for (int c = 0; c < set.normal_count(); ++c) {
    lambda[c] = std::max(Scalar(0), lambda[c]);
  }
  const std::vector<int> fidx = set.friction_contacts();
  for (int f = 0; f < static_cast<int>(fidx.size()); ++f) {
    const ContactPoint& cp = set.contacts[fidx[f]];
    const int row = set.friction_row(f);
    const Scalar bound = cp.friction * lambda[set.normal_row(fidx[f])];
    const Scalar lam_f = std::hypot(lambda[row], lambda[row + 1]);
    if (lam_f > bound) {
      const Scalar scale = bound > 0 ? bound / lam_f : Scalar(0);
      lambda[row] *= scale;
      lambda[row + 1] *= scale;
    }
  }
  return lambda;
}

VecX contact_iteration(const ContactSet& set, const MatX& delassus,
                       const WeightSet& weights, const VecX& h_vec,
                       const VecX& jq_mid, const VecX& lambda) {
  const int k = set.row_count();
  if (k == 0) return lambda;
  MatX m = weights.omega.asDiagonal() * delassus *
           weights.omega.asDiagonal();
  m.diagonal() += weights.e_diag;
  const Scalar lift = Scalar(1e-10) * m.trace() / Scalar(k);
  m.diagonal().array() += lift;
  const VecX rhs = h_vec - weights.omega.cwiseProduct(jq_mid);
  Eigen::LDLT<MatX> ldlt(m);
  VecX step;
  if (ldlt.info() == Eigen::Success) step = ldlt.solve(rhs);
  if (ldlt.info() != Eigen::Success || !step.allFinite()) {
    fail(ErrorCode::SingularContactSystem,
         "contact system is singular even after the diagonal lift");
  }
  return project_multipliers(set, lambda + step);
}

}  // namespace heterodyn
