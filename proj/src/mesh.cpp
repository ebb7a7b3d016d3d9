#include "mesh.hpp"

#include <algorithm>
#include <atomic>
#include <map>

namespace heterodyn {

namespace {
std::atomic<std::uint64_t> g_topology_counter{1};
}

std::array<int, 12> TetMesh::element_dofs(int e) const {
  std::array<int, 12> dofs{};
  for (int i = 0; i < 4; ++i)
    for (int a = 0; a < 3; ++a) dofs[3 * i + a] = 3 * elements_[e][i] + a;
  return dofs;
}

VecX TetMesh::rest_vector() const {
  VecX q(dof_count());
  for (int v = 0; v < vertex_count(); ++v)
    for (int a = 0; a < 3; ++a) q[3 * v + a] = rest_(v, a);
  return q;
}

TetMesh build_tet_mesh(const MatX& rest, const std::vector<std::array<int, 4>>& elements,
                       Scalar density) {
  if (rest.cols() != 3) fail(ErrorCode::Validation, "rest positions must be n x 3");
  if (density <= 0.0) fail(ErrorCode::Validation, "density must be positive");
  const int nv = static_cast<int>(rest.rows());
  if (nv < 4) fail(ErrorCode::Validation, "mesh needs at least 4 vertices");

  TetMesh m;
  m.rest_ = rest;
  m.elements_ = elements;
  m.topology_id_ = g_topology_counter.fetch_add(1);

  // Characteristic length for the degeneracy floor.
  Vec3 lo = rest.colwise().minCoeff(), hi = rest.colwise().maxCoeff();
  const Scalar char_len = std::max((hi - lo).norm(), Scalar(1e-12));
  const Scalar vol_floor = 1e-12 * char_len * char_len * char_len;

  const int ne = static_cast<int>(elements.size());
  m.inv_reference_.resize(ne);
  m.shape_grad_.resize(ne);
  m.volumes_.resize(ne);
  m.lumped_mass_ = VecX::Zero(3 * nv);

  for (int e = 0; e < ne; ++e) {
    const auto& el = elements[e];
    for (int i = 0; i < 4; ++i) {
      if (el[i] < 0 || el[i] >= nv) fail(ErrorCode::Validation, "element vertex out of range");
      for (int j = i + 1; j < 4; ++j)
        if (el[i] == el[j]) fail(ErrorCode::DegenerateElement, "repeated vertex in element");
    }
    Mat3 dm;
    for (int k = 0; k < 3; ++k)
      dm.col(k) = (rest.row(el[k + 1]) - rest.row(el[0])).transpose();
    const Scalar det = dm.determinant();
    const Scalar vol = det / 6.0;
    if (vol <= vol_floor)
      fail(ErrorCode::DegenerateElement,
           "element " + std::to_string(e) + " has non-positive or degenerate rest volume");
    m.volumes_[e] = vol;
    m.total_volume_ += vol;
    m.inv_reference_[e] = dm.inverse();
    // F(r,c) = sum_k (x_{k+1}-x_0)[r] * Bm(k,c)  =>  g[k+1] = Bm row k.
    const Mat3& bm = m.inv_reference_[e];
    Eigen::Matrix<Scalar, 4, 3>& g = m.shape_grad_[e];
    g.row(0).setZero();
    for (int k = 0; k < 3; ++k) {
      g.row(k + 1) = bm.row(k);
      g.row(0) -= bm.row(k);
    }
    const Scalar quarter = density * vol / 4.0;
    for (int i = 0; i < 4; ++i)
      for (int a = 0; a < 3; ++a) m.lumped_mass_[3 * el[i] + a] += quarter;
  }

  // Boundary faces appear in exactly one element.
  std::map<std::array<int, 3>, int> face_count;
  static const int faces[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};
  for (const auto& el : elements) {
    for (const auto& f : faces) {
      std::array<int, 3> key{el[f[0]], el[f[1]], el[f[2]]};
      std::sort(key.begin(), key.end());
      ++face_count[key];
    }
  }
  std::vector<char> on_boundary(nv, 0);
  for (const auto& [key, count] : face_count)
    if (count == 1)
      for (int v : key) on_boundary[v] = 1;
  for (int v = 0; v < nv; ++v)
    if (on_boundary[v]) m.boundary_vertices_.push_back(v);
  return m;
}

TetMesh ingest_hex_grid(const std::array<int, 3>& dims, Scalar spacing, Scalar density) {
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  if (nx < 1 || ny < 1 || nz < 1) fail(ErrorCode::Validation, "grid dims must be >= 1");
  if (spacing <= 0.0) fail(ErrorCode::Validation, "grid spacing must be positive");
  const int vx = nx + 1, vy = ny + 1, vz = nz + 1;
  MatX rest(vx * vy * vz, 3);
  auto vid = [&](int i, int j, int k) { return i + vx * (j + vy * k); };
  for (int k = 0; k < vz; ++k)
    for (int j = 0; j < vy; ++j)
      for (int i = 0; i < vx; ++i)
        rest.row(vid(i, j, k)) = Vec3(i * spacing, j * spacing, k * spacing).transpose();

  // Six tets around the main diagonal of the unit cube; corner ids encode
  // bits (x, y, z) -> x + 2y + 4z.
  static const int kuhn[6][4] = {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7},
                                 {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};
  std::vector<std::array<int, 4>> elements;
  elements.reserve(static_cast<size_t>(nx) * ny * nz * 6);
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const bool mirror = ((i + j + k) & 1) != 0;
        int corner[8];
        for (int c = 0; c < 8; ++c) {
          int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
          if (mirror) bx = 1 - bx;  // reflect in x on odd cells
          corner[c] = vid(i + bx, j + by, k + bz);
        }
        for (const auto& t : kuhn) {
          std::array<int, 4> el{corner[t[0]], corner[t[1]], corner[t[2]], corner[t[3]]};
          Mat3 dm;
          for (int c = 0; c < 3; ++c)
            dm.col(c) = (rest.row(el[c + 1]) - rest.row(el[0])).transpose();
          if (dm.determinant() < 0.0) std::swap(el[2], el[3]);
          elements.push_back(el);
        }
      }
    }
  }
  return build_tet_mesh(rest, elements, density);
}

Mat3 deformation_gradient(const TetMesh& mesh, int e, const VecX& q) {
  const auto& el = mesh.elements()[e];
  const auto& g = mesh.shape_gradient(e);
  Mat3 f = Mat3::Zero();
  for (int i = 0; i < 4; ++i) {
    const Vec3 x(q[3 * el[i]], q[3 * el[i] + 1], q[3 * el[i] + 2]);
    f += x * g.row(i);  // F(r,c) += x[r] * g[i][c]
  }
  return f;
}

ElementOperator element_operator(const TetMesh& mesh, int e) {
  ElementOperator op = ElementOperator::Zero();
  const auto& g = mesh.shape_gradient(e);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r)
      for (int i = 0; i < 4; ++i) op(3 * c + r, 3 * i + r) = g(i, c);
  return op;
}

}  // namespace heterodyn
