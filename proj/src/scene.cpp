#include "scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace heterodyn {

namespace {

using nlohmann::json;

Vec3 parse_vec3(const json& j, const std::string& field,
                std::vector<std::string>& errs) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() ||
      !j[1].is_number() || !j[2].is_number()) {
    errs.push_back(field + ": expected an array of 3 numbers");
    return Vec3::Zero();
  }
  return Vec3(j[0].get<Scalar>(), j[1].get<Scalar>(), j[2].get<Scalar>());
}

// Vertices of an icosahedron of the given circumradius around the origin,
// plus a 13th center vertex; one tet per face.
TetMesh icosahedron_ball(Scalar radius, Scalar density, const Vec3& center) {
  const Scalar phi = (Scalar(1) + std::sqrt(Scalar(5))) / Scalar(2);
  const Scalar raw[12][3] = {
      {-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
  static const int faces[20][3] = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

  MatX rest(13, 3);
  const Scalar scale = radius / std::sqrt(Scalar(1) + phi * phi);
  for (int i = 0; i < 12; ++i) {
    rest.row(i) = (center + scale * Vec3(raw[i][0], raw[i][1], raw[i][2])).transpose();
  }
  rest.row(12) = center.transpose();

  std::vector<std::array<int, 4>> elements;
  elements.reserve(20);
  for (const auto& f : faces) {
    std::array<int, 4> el = {12, f[0], f[1], f[2]};
    Mat3 dm;
    for (int k = 0; k < 3; ++k) {
      dm.col(k) = Vec3(rest.row(el[k + 1]) - rest.row(el[0]));
    }
    if (dm.determinant() < 0) std::swap(el[2], el[3]);
    elements.push_back(el);
  }
  return build_tet_mesh(rest, elements, density);
}

std::vector<int> vertices_in_box(const TetMesh& mesh, const Vec3& lo,
                                 const Vec3& hi) {
  std::vector<int> out;
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    const Vec3 p = mesh.rest_positions().row(v);
    if ((p.array() >= lo.array()).all() && (p.array() <= hi.array()).all()) {
      out.push_back(v);
    }
  }
  return out;
}

// Thirds along the given axis of the element centroids: region 0/1/2.
std::vector<int> regions_by_thirds(const TetMesh& mesh, int axis) {
  Scalar lo = std::numeric_limits<Scalar>::max();
  Scalar hi = std::numeric_limits<Scalar>::lowest();
  std::vector<Scalar> centroid(mesh.element_count());
  for (int e = 0; e < mesh.element_count(); ++e) {
    Scalar c = 0;
    for (int k = 0; k < 4; ++k) {
      c += mesh.rest_positions()(mesh.elements()[e][k], axis);
    }
    centroid[e] = c / 4;
    lo = std::min(lo, centroid[e]);
    hi = std::max(hi, centroid[e]);
  }
  std::vector<int> region(mesh.element_count());
  const Scalar span = std::max(hi - lo, Scalar(1e-12));
  for (int e = 0; e < mesh.element_count(); ++e) {
    const int r = std::min(2, static_cast<int>(3 * (centroid[e] - lo) / span));
    region[e] = r;
  }
  return region;
}

std::vector<Scalar> young_from_regions(const std::vector<int>& region,
                                       const std::vector<Scalar>& per_region) {
  std::vector<Scalar> young(region.size());
  for (std::size_t e = 0; e < region.size(); ++e) {
    young[e] = per_region[region[e]];
  }
  return young;
}

void finish_state(SceneSpec& s) {
  if (s.q0.size() == 0) s.q0 = s.mesh.rest_vector();
  if (s.v0.size() == 0) s.v0 = VecX::Zero(s.mesh.dof_count());
  if (s.f_ext_extra.size() == 0) s.f_ext_extra = VecX::Zero(s.mesh.dof_count());
}

SceneSpec make_two_tet() {
  SceneSpec s;
  s.name = "two-tet";
  MatX rest(5, 3);
  rest << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1;
  s.mesh = build_tet_mesh(rest, {{0, 1, 2, 3}, {1, 2, 3, 4}}, 1000.0);
  s.material = build_material(s.mesh, {5e4, 8e4}, 0.35, EnergyKind::NeoHookean,
                              false, 0.01, 0.0);
  s.region_of_element = {0, 1};
  s.region_count = 2;
  s.gravity = Vec3(0, 0, -2.0);
  s.frames = 3;
  s.solver.h = 0.01;
  // Gradient-check scene: adjoint exactness needs a tightly converged
  // fixed point, so run the forward loop to near machine precision.
  s.solver.eps_rel = 1e-12;
  s.solver.eps_abs = 1e-14;
  finish_state(s);
  for (int i = 0; i < s.v0.size(); ++i) s.v0[i] = 0.05 * std::sin(0.7 * i);
  return s;
}

SceneSpec make_beam(const std::string& name, Scalar contrast, Scalar twist,
                    EnergyKind kind) {
  SceneSpec s;
  s.name = name;
  const Scalar spacing = 0.05;
  s.mesh = ingest_hex_grid({12, 3, 3}, spacing, 1000.0);
  s.region_of_element = regions_by_thirds(s.mesh, 0);
  s.region_count = 3;
  const Scalar e0 = 5e4;
  s.material = build_material(
      s.mesh, young_from_regions(s.region_of_element, {e0, contrast * e0, e0}),
      0.35, kind, false, 0.02, 0.01);
  const Vec3 extent(12 * spacing, 3 * spacing, 3 * spacing);
  s.fixed_vertices = vertices_in_box(
      s.mesh, Vec3(-1e-9, -1, -1), Vec3(0.5 * spacing, 1, 1));
  finish_state(s);
  if (twist != 0) {
    // Rotate each cross-section about the beam centerline, linearly in x.
    const Scalar cy = extent[1] / 2, cz = extent[2] / 2;
    for (int v = 0; v < s.mesh.vertex_count(); ++v) {
      const Vec3 p = s.mesh.rest_positions().row(v);
      const Scalar angle = twist * p[0] / extent[0];
      const Scalar dy = p[1] - cy, dz = p[2] - cz;
      s.q0[3 * v + 1] = cy + std::cos(angle) * dy - std::sin(angle) * dz;
      s.q0[3 * v + 2] = cz + std::sin(angle) * dy + std::cos(angle) * dz;
    }
  } else {
    s.gravity = Vec3(0, 0, -9.81);
  }
  s.frames = twist != 0 ? 40 : 60;
  s.solver.h = 0.01;
  return s;
}

SceneSpec make_ball_drop(int regions) {
  SceneSpec s;
  s.name = "ball-drop";
  const Scalar radius = 0.25;
  s.mesh = icosahedron_ball(radius, 800.0, Vec3(0, 0, 0.5));
  if (regions == 3) {
    s.region_of_element = regions_by_thirds(s.mesh, 2);
    s.region_count = 3;
    s.material = build_material(
        s.mesh, young_from_regions(s.region_of_element, {2e5, 1e6, 2e6}), 0.3,
        EnergyKind::NeoHookean, false, 0.02, 0.0);
  } else {
    s.region_of_element.assign(s.mesh.element_count(), 0);
    s.region_count = 1;
    s.material =
        build_material(s.mesh, std::vector<Scalar>(s.mesh.element_count(), 1e6),
                       0.3, EnergyKind::NeoHookean, false, 0.02, 0.0);
  }
  s.obstacles.push_back(make_halfspace(Vec3(0, 0, 1), 0.0, 0.4));
  s.gravity = Vec3(0, 0, -9.81);
  s.frames = 50;
  s.solver.h = 0.01;
  finish_state(s);
  for (int v = 0; v < s.mesh.vertex_count(); ++v) s.v0[3 * v + 2] = -1.0;
  return s;
}

SceneSpec make_slab_on_sphere() {
  SceneSpec s;
  s.name = "slab-on-sphere";
  s.mesh = ingest_hex_grid({8, 8, 1}, 0.05, 900.0);
  s.material = build_material(
      s.mesh, std::vector<Scalar>(s.mesh.element_count(), 3e4), 0.45,
      EnergyKind::Corotated, false, 0.03, 0.01);
  s.obstacles.push_back(make_sphere(Vec3(0.2, 0.2, -0.13), 0.12, 0.3));
  s.gravity = Vec3(0, 0, -9.81);
  s.frames = 60;
  s.solver.h = 0.01;
  finish_state(s);
  return s;
}

SceneSpec make_resting_box() {
  SceneSpec s;
  s.name = "resting-box";
  s.mesh = ingest_hex_grid({2, 2, 2}, 0.1, 1000.0);
  s.material = build_material(
      s.mesh, std::vector<Scalar>(s.mesh.element_count(), 1e5), 0.35,
      EnergyKind::Corotated, false, 0.05, 0.01);
  s.obstacles.push_back(make_halfspace(Vec3(0, 0, 1), 0.0, 0.5));
  s.gravity = Vec3(0, 0, -9.81);
  s.frames = 30;
  s.solver.h = 0.01;
  finish_state(s);
  return s;
}

SceneSpec builtin_with_params(const std::string& name, const json& params,
                              std::vector<std::string>& errs) {
  const Scalar contrast =
      params.contains("contrast") ? params["contrast"].get<Scalar>() : 10.0;
  if (name == "two-tet") return make_two_tet();
  if (name == "cantilever3") {
    return make_beam("cantilever3", contrast, 0.0, EnergyKind::Corotated);
  }
  if (name == "twist-bar") {
    const Scalar twist =
        params.contains("twist") ? params["twist"].get<Scalar>() : 1.2;
    return make_beam("twist-bar", contrast, twist, EnergyKind::NeoHookean);
  }
  if (name == "ball-drop") {
    const int regions =
        params.contains("regions") ? params["regions"].get<int>() : 1;
    if (regions != 1 && regions != 3) {
      errs.push_back("mesh.regions: ball-drop supports 1 or 3 regions");
      return make_ball_drop(1);
    }
    return make_ball_drop(regions);
  }
  if (name == "slab-on-sphere") return make_slab_on_sphere();
  if (name == "resting-box") return make_resting_box();
  errs.push_back("mesh.generator: unknown generator \"" + name + "\"");
  return make_two_tet();
}

// Applies document-level overrides on top of a generator default (or fills a
// from-scratch scene).  Material overrides force a rebuild.
void apply_overrides(SceneSpec& s, const json& j, bool from_generator,
                     std::vector<std::string>& errs) {
  if (j.contains("name") && j["name"].is_string()) {
    s.name = j["name"].get<std::string>();
  }

  if (j.contains("material")) {
    const json& m = j["material"];
    if (!m.is_object()) {
      errs.push_back("material: expected an object");
    } else {
      Scalar poisson = s.material.poisson();
      EnergyKind kind = s.material.kind();
      bool barrier = s.material.log_volume_barrier();
      Scalar alpha = s.material.alpha();
      Scalar beta0 = s.material.beta0();
      std::vector<Scalar> young(s.mesh.element_count());
      for (int e = 0; e < s.mesh.element_count(); ++e) {
        young[e] = s.material.young(e);
      }
      if (m.contains("poisson")) {
        if (!m["poisson"].is_number()) {
          errs.push_back("material.poisson: expected a number");
        } else {
          poisson = m["poisson"].get<Scalar>();
        }
      } else if (!from_generator) {
        errs.push_back("material.poisson: required");
      }
      if (m.contains("energy")) {
        const std::string en = m["energy"].is_string()
                                   ? m["energy"].get<std::string>()
                                   : std::string();
        if (en == "neo-hookean") {
          kind = EnergyKind::NeoHookean;
        } else if (en == "corotated") {
          kind = EnergyKind::Corotated;
        } else {
          errs.push_back(
              "material.energy: expected \"neo-hookean\" or \"corotated\"");
        }
      }
      if (m.contains("log_barrier")) {
        if (!m["log_barrier"].is_boolean()) {
          errs.push_back("material.log_barrier: expected a boolean");
        } else {
          barrier = m["log_barrier"].get<bool>();
        }
      }
      if (m.contains("alpha")) alpha = m["alpha"].get<Scalar>();
      if (m.contains("beta0")) beta0 = m["beta0"].get<Scalar>();
      if (m.contains("young")) {
        const json& y = m["young"];
        if (y.is_number()) {
          std::fill(young.begin(), young.end(), y.get<Scalar>());
        } else if (y.is_array() &&
                   static_cast<int>(y.size()) == s.mesh.element_count()) {
          for (int e = 0; e < s.mesh.element_count(); ++e) {
            young[e] = y[e].get<Scalar>();
          }
        } else if (y.is_object() && y.contains("per_region")) {
          const json& pr = y["per_region"];
          if (s.region_count == 0 ||
              static_cast<int>(pr.size()) != s.region_count) {
            errs.push_back(
                "material.young.per_region: size must match the scene's "
                "region count");
          } else {
            for (int e = 0; e < s.mesh.element_count(); ++e) {
              young[e] = pr[s.region_of_element[e]].get<Scalar>();
            }
          }
        } else {
          errs.push_back(
              "material.young: expected a number, a per-element array, or "
              "{\"per_region\": [...]}");
        }
      }
      for (Scalar y : young) {
        if (!(y > 0)) {
          errs.push_back("material.young: moduli must be positive");
          break;
        }
      }
      if (errs.empty()) {
        try {
          s.material = build_material(s.mesh, young, poisson, kind, barrier,
                                      alpha, beta0);
        } catch (const Error& err) {
          errs.push_back(std::string("material: ") + err.what());
        }
      }
    }
  } else if (!from_generator) {
    errs.push_back("material: required (with poisson) for non-generator scenes");
  }

  if (j.contains("gravity")) {
    s.gravity = parse_vec3(j["gravity"], "gravity", errs);
  }

  if (j.contains("obstacles")) {
    if (!j["obstacles"].is_array()) {
      errs.push_back("obstacles: expected an array");
    } else {
      s.obstacles.clear();
      int idx = 0;
      for (const json& ob : j["obstacles"]) {
        const std::string tag = "obstacles[" + std::to_string(idx++) + "]";
        const std::string type =
            ob.contains("type") && ob["type"].is_string()
                ? ob["type"].get<std::string>()
                : std::string();
        const Scalar friction =
            ob.contains("friction") ? ob["friction"].get<Scalar>() : 0.0;
        try {
          if (type == "halfspace") {
            s.obstacles.push_back(
                make_halfspace(parse_vec3(ob["normal"], tag + ".normal", errs),
                               ob.value("offset", 0.0), friction));
          } else if (type == "sphere") {
            s.obstacles.push_back(
                make_sphere(parse_vec3(ob["center"], tag + ".center", errs),
                            ob.value("radius", 1.0), friction));
          } else {
            errs.push_back(tag + ".type: expected \"halfspace\" or \"sphere\"");
          }
        } catch (const Error& err) {
          errs.push_back(tag + ": " + err.what());
        }
      }
    }
  }

  if (j.contains("dirichlet")) {
    if (!j["dirichlet"].is_array()) {
      errs.push_back("dirichlet: expected an array");
    } else {
      std::set<int> fixed(s.fixed_vertices.begin(), s.fixed_vertices.end());
      int idx = 0;
      for (const json& d : j["dirichlet"]) {
        const std::string tag = "dirichlet[" + std::to_string(idx++) + "]";
        if (!d.contains("vertex") || !d["vertex"].is_number_integer()) {
          errs.push_back(tag + ".vertex: expected an integer");
          continue;
        }
        const int v = d["vertex"].get<int>();
        if (v < 0 || v >= s.mesh.vertex_count()) {
          errs.push_back(tag + ".vertex: index out of range");
          continue;
        }
        fixed.insert(v);
        if (d.contains("position")) {
          const Vec3 p = parse_vec3(d["position"], tag + ".position", errs);
          s.q0.segment<3>(3 * v) = p;
        }
      }
      s.fixed_vertices.assign(fixed.begin(), fixed.end());
    }
  }

  if (j.contains("fix_region")) {
    const json& fr = j["fix_region"];
    if (!fr.is_object() || !fr.contains("min") || !fr.contains("max")) {
      errs.push_back("fix_region: expected {\"min\": [...], \"max\": [...]}");
    } else {
      const Vec3 lo = parse_vec3(fr["min"], "fix_region.min", errs);
      const Vec3 hi = parse_vec3(fr["max"], "fix_region.max", errs);
      std::set<int> fixed(s.fixed_vertices.begin(), s.fixed_vertices.end());
      for (int v : vertices_in_box(s.mesh, lo, hi)) fixed.insert(v);
      s.fixed_vertices.assign(fixed.begin(), fixed.end());
    }
  }

  if (j.contains("f_ext")) {
    if (!j["f_ext"].is_array()) {
      errs.push_back("f_ext: expected an array of {vertex, force}");
    } else {
      s.f_ext_extra = VecX::Zero(s.mesh.dof_count());
      int idx = 0;
      for (const json& f : j["f_ext"]) {
        const std::string tag = "f_ext[" + std::to_string(idx++) + "]";
        if (!f.contains("vertex") || !f["vertex"].is_number_integer()) {
          errs.push_back(tag + ".vertex: expected an integer");
          continue;
        }
        const int v = f["vertex"].get<int>();
        if (v < 0 || v >= s.mesh.vertex_count()) {
          errs.push_back(tag + ".vertex: index out of range");
          continue;
        }
        s.f_ext_extra.segment<3>(3 * v) +=
            parse_vec3(f["force"], tag + ".force", errs);
      }
    }
  }

  if (j.contains("f_state")) {
    const json& fs = j["f_state"];
    if (!fs.is_object() || !fs.contains("point_spring")) {
      errs.push_back("f_state: expected {\"point_spring\": {...}}");
    } else {
      const json& ps = fs["point_spring"];
      if (!ps.contains("vertex") || !ps["vertex"].is_number_integer()) {
        errs.push_back("f_state.point_spring.vertex: expected an integer");
      } else {
        s.has_hook = true;
        s.hook_vertex = ps["vertex"].get<int>();
        if (s.hook_vertex < 0 || s.hook_vertex >= s.mesh.vertex_count()) {
          errs.push_back("f_state.point_spring.vertex: index out of range");
        }
        s.hook_anchor = ps.contains("anchor")
                            ? parse_vec3(ps["anchor"],
                                         "f_state.point_spring.anchor", errs)
                            : Vec3::Zero();
        s.hook_stiffness = ps.value("stiffness", 0.0);
        s.hook_damping = ps.value("damping", 0.0);
      }
    }
  }

  if (j.contains("solver")) {
    const json& so = j["solver"];
    if (!so.is_object()) {
      errs.push_back("solver: expected an object");
    } else {
      s.solver.h = so.value("h", s.solver.h);
      s.solver.eps_rel = so.value("eps_rel", s.solver.eps_rel);
      s.solver.eps_abs = so.value("eps_abs", s.solver.eps_abs);
      s.solver.k_max = so.value("k_max", s.solver.k_max);
      s.solver.eps_tr = so.value("eps_tr", s.solver.eps_tr);
      s.solver.aa_window = so.value("aa_window", s.solver.aa_window);
      s.solver.contact_margin =
          so.value("contact_margin", s.solver.contact_margin);
      if (!(s.solver.h > 0)) errs.push_back("solver.h: must be positive");
    }
  }

  if (j.contains("frames")) {
    if (!j["frames"].is_number_integer() || j["frames"].get<int>() < 1) {
      errs.push_back("frames: expected an integer >= 1");
    } else {
      s.frames = j["frames"].get<int>();
    }
  }

  if (j.contains("initial")) {
    const json& in = j["initial"];
    if (in.contains("velocity")) {
      const json& vel = in["velocity"];
      if (vel.is_array() && vel.size() == 3) {
        const Vec3 u = parse_vec3(vel, "initial.velocity", errs);
        for (int v = 0; v < s.mesh.vertex_count(); ++v) {
          s.v0.segment<3>(3 * v) = u;
        }
      } else if (vel.is_array() &&
                 static_cast<int>(vel.size()) == s.mesh.dof_count()) {
        for (int i = 0; i < s.mesh.dof_count(); ++i) {
          s.v0[i] = vel[i].get<Scalar>();
        }
      } else {
        errs.push_back(
            "initial.velocity: expected a 3-vector or a full DoF array");
      }
    }
    if (in.contains("position_offset")) {
      const Vec3 u = parse_vec3(in["position_offset"],
                                "initial.position_offset", errs);
      for (int v = 0; v < s.mesh.vertex_count(); ++v) {
        s.q0.segment<3>(3 * v) += u;
      }
    }
  }
}

}  // namespace

VecX scene_external_force(const SceneSpec& scene) {
  VecX f = scene.f_ext_extra.size() == scene.mesh.dof_count()
               ? scene.f_ext_extra
               : VecX::Zero(scene.mesh.dof_count());
  for (int v = 0; v < scene.mesh.vertex_count(); ++v) {
    f.segment<3>(3 * v) += scene.mesh.vertex_mass(v) * scene.gravity;
  }
  return f;
}

StateForce make_hook(const SceneSpec& scene) {
  StateForce hook;
  if (!scene.has_hook) return hook;
  const int v = scene.hook_vertex;
  const Vec3 anchor = scene.hook_anchor;
  const Scalar k = scene.hook_stiffness;
  const Scalar d = scene.hook_damping;
  hook.force = [v, anchor, k, d](const VecX& q, const VecX& vel) {
    VecX f = VecX::Zero(q.size());
    f.segment<3>(3 * v) =
        -k * (q.segment<3>(3 * v) - anchor) - d * vel.segment<3>(3 * v);
    return f;
  };
  hook.dq_transpose_apply = [v, k](const VecX&, const VecX&, const VecX& mu) {
    VecX out = VecX::Zero(mu.size());
    out.segment<3>(3 * v) = -k * mu.segment<3>(3 * v);
    return out;
  };
  hook.dv_transpose_apply = [v, d](const VecX&, const VecX&, const VecX& mu) {
    VecX out = VecX::Zero(mu.size());
    out.segment<3>(3 * v) = -d * mu.segment<3>(3 * v);
    return out;
  };
  return hook;
}

SceneSpec builtin_scene(const std::string& name) {
  std::vector<std::string> errs;
  SceneSpec s = builtin_with_params(name, json::object(), errs);
  if (!errs.empty()) fail(ErrorCode::Validation, errs.front());
  return s;
}

SceneSpec parse_scene_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& err) {
    fail(ErrorCode::Parse, std::string("scene JSON: ") + err.what());
  }
  std::vector<std::string> errs;
  if (!j.is_object()) fail(ErrorCode::Validation, "scene: expected a JSON object");

  SceneSpec s;
  bool have_mesh = false;
  if (j.contains("mesh") && j["mesh"].is_object()) {
    const json& m = j["mesh"];
    try {
      if (m.contains("generator")) {
        if (!m["generator"].is_string()) {
          errs.push_back("mesh.generator: expected a string");
        } else {
          s = builtin_with_params(m["generator"].get<std::string>(), m, errs);
          have_mesh = true;
        }
      } else if (m.contains("grid")) {
        const json& g = m["grid"];
        std::array<int, 3> dims = {1, 1, 1};
        if (g.contains("dims") && g["dims"].is_array() && g["dims"].size() == 3) {
          for (int i = 0; i < 3; ++i) dims[i] = g["dims"][i].get<int>();
        } else {
          errs.push_back("mesh.grid.dims: expected an array of 3 integers");
        }
        s.mesh = ingest_hex_grid(dims, g.value("spacing", 0.1),
                                 g.value("density", 1000.0));
        have_mesh = true;
      } else if (m.contains("vertices") && m.contains("elements")) {
        const json& verts = m["vertices"];
        const json& els = m["elements"];
        if (!verts.is_array() || verts.empty()) {
          errs.push_back("mesh.vertices: expected a non-empty array");
        } else if (!els.is_array() || els.empty()) {
          errs.push_back("mesh.elements: expected a non-empty array");
        } else {
          MatX rest(verts.size(), 3);
          for (std::size_t i = 0; i < verts.size(); ++i) {
            const Vec3 p = parse_vec3(
                verts[i], "mesh.vertices[" + std::to_string(i) + "]", errs);
            rest.row(static_cast<int>(i)) = p.transpose();
          }
          std::vector<std::array<int, 4>> elements;
          for (std::size_t i = 0; i < els.size(); ++i) {
            if (!els[i].is_array() || els[i].size() != 4) {
              errs.push_back("mesh.elements[" + std::to_string(i) +
                             "]: expected 4 vertex indices");
              continue;
            }
            std::array<int, 4> el{};
            for (int k = 0; k < 4; ++k) el[k] = els[i][k].get<int>();
            elements.push_back(el);
          }
          if (errs.empty()) {
            s.mesh = build_tet_mesh(rest, elements, m.value("density", 1000.0));
            have_mesh = true;
          }
        }
      } else {
        errs.push_back(
            "mesh: expected \"generator\", \"grid\", or \"vertices\"+"
            "\"elements\"");
      }
    } catch (const Error& err) {
      errs.push_back(std::string("mesh: ") + err.what());
    }
  } else {
    errs.push_back("mesh: required object");
  }

  if (!have_mesh) {
    fail(ErrorCode::Validation, [&errs] {
      std::string msg = "scene validation failed:";
      for (const std::string& e : errs) msg += "\n  - " + e;
      return msg;
    }());
  }

  // Non-generator scenes need a material; install a placeholder the override
  // pass replaces (it reports a violation when material is absent).
  if (s.material.element_count() == 0) {
    s.material = build_material(
        s.mesh, std::vector<Scalar>(s.mesh.element_count(), 1e5), 0.3,
        EnergyKind::NeoHookean, false, 0.0, 0.0);
  }
  finish_state(s);
  const bool from_generator =
      j["mesh"].is_object() && j["mesh"].contains("generator");
  try {
    apply_overrides(s, j, from_generator, errs);
  } catch (const json::exception& err) {
    errs.push_back(std::string("scene: ") + err.what());
  }

  if (!errs.empty()) {
    std::string msg = "scene validation failed:";
    for (const std::string& e : errs) msg += "\n  - " + e;
    fail(ErrorCode::Validation, msg);
  }
  return s;
}

SceneSpec load_scene_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open scene file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scene_json(buf.str());
}

}  // namespace heterodyn
