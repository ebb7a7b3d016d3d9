#include "drivers.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "forward.hpp"
#include "lbfgs.hpp"

namespace heterodyn {

namespace {

using nlohmann::json;

struct Rollout {
  std::vector<ForwardCache> caches;       // only when keep_caches
  std::vector<VecX> frame_q, frame_v;     // only when keep_trajectory
  SimState final_state;
  std::vector<int> iterations;
  std::vector<int> contact_counts;
  bool all_converged = true;
};

Rollout roll(const TetMesh& mesh, const MaterialField& material,
             GlobalSystem& system, const SceneSpec& scene, const VecX& q0,
             const VecX& v0, const VecX& f_ext, const StateForce* hook,
             bool keep_caches, bool keep_trajectory) {
  Rollout r;
  SimState state;
  state.q = q0;
  state.v = v0;
  for (int t = 0; t < scene.frames; ++t) {
    ForwardCache cache =
        forward_step(mesh, material, system, scene.solver, scene.obstacles,
                     scene.fixed_vertices, state, f_ext, hook);
    r.iterations.push_back(cache.iteration_count);
    r.contact_counts.push_back(cache.contacts.normal_count());
    r.all_converged = r.all_converged && cache.converged;
    if (keep_trajectory) {
      r.frame_q.push_back(state.q);
      r.frame_v.push_back(state.v);
    }
    if (keep_caches) r.caches.push_back(std::move(cache));
  }
  r.final_state = state;
  return r;
}

struct ChainResult {
  VecX dl_dq0, dl_dv0, dl_df_ext, dl_dw, dl_de;
  std::vector<Scalar> tau, rho;  // forward frame order
  int adjoint_iterations = 0;
};

// Chains adjoint steps from the last frame back to the initial state.
// dl_dq_direct[t] is the loss's direct partial with respect to the state
// after frame t (index 0 = initial state); dl_dv_final seeds the final
// velocity partial.
ChainResult chain_backward(const TetMesh& mesh, const MaterialField& material,
                           const GlobalSystem& system,
                           const std::vector<ForwardCache>& caches,
                           const std::vector<VecX>& dl_dq_direct,
                           const VecX& dl_dv_final, const StateForce* hook,
                           Scalar eps_tr) {
  const int frames = static_cast<int>(caches.size());
  const int n = mesh.dof_count();
  ChainResult out;
  out.dl_df_ext = VecX::Zero(n);
  out.tau.assign(frames, 1.0);
  out.rho.assign(frames, 1.0);

  AdjointSeed seed;
  seed.dl_dq_next = dl_dq_direct[frames];
  seed.dl_dv_next = dl_dv_final;
  for (int t = frames - 1; t >= 0; --t) {
    GradientBundle g =
        backward_step(mesh, material, system, caches[t], seed, hook, eps_tr);
    out.dl_df_ext += g.dl_df_ext;
    if (out.dl_dw.size() == 0) out.dl_dw = VecX::Zero(g.dl_dw.size());
    if (out.dl_de.size() == 0) out.dl_de = VecX::Zero(g.dl_de.size());
    out.dl_dw += g.dl_dw;
    out.dl_de += g.dl_de;
    out.tau[t] = g.tau_used;
    out.rho[t] = g.tr_ratio;
    out.adjoint_iterations += g.adjoint_iterations;
    seed.dl_dq_next = g.dl_dq_t + dl_dq_direct[t];
    seed.dl_dv_next = g.dl_dv_t;
  }
  out.dl_dq0 = seed.dl_dq_next;
  out.dl_dv0 = seed.dl_dv_next;
  return out;
}

Scalar max_penetration_at(const SceneSpec& scene, const VecX& q) {
  Scalar pen = 0;
  for (const Obstacle& ob : scene.obstacles) {
    for (int v = 0; v < scene.mesh.vertex_count(); ++v) {
      const Scalar d = obstacle_signed_distance(ob, q.segment<3>(3 * v));
      pen = std::max(pen, -d);
    }
  }
  return pen;
}

// Worst vertex distance to the group's best rigid fit (rotation + translation
// from rest to q): the part of the group's displacement that is deformation
// rather than carried rigid motion.
Scalar rigid_fit_residual(const std::vector<int>& verts, const VecX& rest,
                          const VecX& q) {
  if (verts.empty()) return 0;
  const Scalar m = static_cast<Scalar>(verts.size());
  Vec3 rest_center = Vec3::Zero(), cur_center = Vec3::Zero();
  for (int v : verts) {
    rest_center += rest.segment<3>(3 * v);
    cur_center += q.segment<3>(3 * v);
  }
  rest_center /= m;
  cur_center /= m;
  Mat3 covariance = Mat3::Zero();
  for (int v : verts) {
    covariance += (rest.segment<3>(3 * v) - rest_center) *
                  (q.segment<3>(3 * v) - cur_center).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(covariance,
                             Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 rot = svd.matrixV() * svd.matrixU().transpose();
  if (rot.determinant() < 0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1;
    rot = svd.matrixV() * flip * svd.matrixU().transpose();
  }
  Scalar worst = 0;
  for (int v : verts) {
    const Vec3 fit = rot * (rest.segment<3>(3 * v) - rest_center) + cur_center;
    worst = std::max(worst, (q.segment<3>(3 * v) - fit).norm());
  }
  return worst;
}

Scalar max_normal_fb_residual(const ForwardCache& cache) {
  Scalar worst = 0;
  const ContactSet& cs = cache.contacts;
  for (int c = 0; c < cs.normal_count(); ++c) {
    const ContactPoint& cp = cs.contacts[c];
    const Scalar delta =
        cp.normal.dot(cache.q_star.segment<3>(3 * cp.vertex)) - cp.gap_offset;
    worst = std::max(worst, std::abs(fb_residual(
                                delta, cp.r_n,
                                cache.lambda_star[cs.normal_row(c)])));
  }
  return worst;
}

json vec_to_json(const VecX& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::Io, "cannot open output file: " + path.string());
  return out;
}

// Deterministic strided sample of at most `cap` indices in [0, n).
std::vector<int> sample_indices(int n, int cap) {
  const int m = std::min(n, cap);
  std::vector<int> idx(m);
  for (int k = 0; k < m; ++k) {
    idx[k] = static_cast<int>((static_cast<long long>(k) * n) / m);
  }
  return idx;
}

Mat3 rot_x(Scalar a) {
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}
Mat3 rot_y(Scalar b) {
  Mat3 r;
  r << std::cos(b), 0, std::sin(b), 0, 1, 0, -std::sin(b), 0, std::cos(b);
  return r;
}
Mat3 rot_z(Scalar c) {
  Mat3 r;
  r << std::cos(c), -std::sin(c), 0, std::sin(c), std::cos(c), 0, 0, 0, 1;
  return r;
}
Mat3 drot_x(Scalar a) {
  Mat3 r;
  r << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
  return r;
}
Mat3 drot_y(Scalar b) {
  Mat3 r;
  r << -std::sin(b), 0, std::cos(b), 0, 0, 0, -std::cos(b), 0, -std::sin(b);
  return r;
}
Mat3 drot_z(Scalar c) {
  Mat3 r;
  r << -std::sin(c), -std::cos(c), 0, std::cos(c), -std::sin(c), 0, 0, 0, 0;
  return r;
}

// Euler angles (x, y, z order): R = Rz(c) Ry(b) Rx(a).
Mat3 euler_rotation(const Vec3& angles) {
  return rot_z(angles[2]) * rot_y(angles[1]) * rot_x(angles[0]);
}
Mat3 euler_rotation_derivative(const Vec3& angles, int axis) {
  switch (axis) {
    case 0: return rot_z(angles[2]) * rot_y(angles[1]) * drot_x(angles[0]);
    case 1: return rot_z(angles[2]) * drot_y(angles[1]) * rot_x(angles[0]);
    default: return drot_z(angles[2]) * rot_y(angles[1]) * rot_x(angles[0]);
  }
}

Vec3 mass_center(const TetMesh& mesh, const VecX& q) {
  Vec3 com = Vec3::Zero();
  Scalar total = 0;
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    com += mesh.vertex_mass(v) * q.segment<3>(3 * v);
    total += mesh.vertex_mass(v);
  }
  return com / total;
}

}  // namespace

SimulateSummary run_simulate(const SceneSpec& scene,
                             const std::string& out_dir) {
  const TetMesh& mesh = scene.mesh;
  GlobalSystem system;
  const VecX f_ext = scene_external_force(scene);
  StateForce hook_storage;
  const StateForce* hook = nullptr;
  if (scene.has_hook) {
    hook_storage = make_hook(scene);
    hook = &hook_storage;
  }

  // Region deformation tracking: per-region displacement net of the region's
  // own best rigid motion (Kabsch fit from rest), so a stiff segment carried
  // rigidly by a bending soft one registers near zero.  Softest and stiffest
  // groups are selected by modulus value, so tied regions pool together.
  std::vector<std::vector<int>> region_verts;
  std::vector<char> region_soft, region_stiff;
  bool track_regions = false;
  if (scene.region_count >= 2 &&
      static_cast<int>(scene.region_of_element.size()) ==
          mesh.element_count()) {
    std::vector<Scalar> mean(scene.region_count, 0);
    std::vector<int> count(scene.region_count, 0);
    region_verts.assign(scene.region_count, {});
    std::vector<std::vector<char>> seen(
        scene.region_count, std::vector<char>(mesh.vertex_count(), 0));
    for (int e = 0; e < mesh.element_count(); ++e) {
      const int r = scene.region_of_element[e];
      mean[r] += scene.material.young(e);
      ++count[r];
      for (int k = 0; k < 4; ++k) {
        const int v = mesh.elements()[e][k];
        if (!seen[r][v]) {
          seen[r][v] = 1;
          region_verts[r].push_back(v);
        }
      }
    }
    for (int r = 0; r < scene.region_count; ++r) {
      if (count[r] > 0) mean[r] /= count[r];
    }
    const Scalar lo = *std::min_element(mean.begin(), mean.end());
    const Scalar hi = *std::max_element(mean.begin(), mean.end());
    region_soft.assign(scene.region_count, 0);
    region_stiff.assign(scene.region_count, 0);
    for (int r = 0; r < scene.region_count; ++r) {
      if (count[r] == 0) continue;
      if (mean[r] <= lo * (1 + 1e-9)) region_soft[r] = 1;
      if (mean[r] >= hi * (1 - 1e-9)) region_stiff[r] = 1;
    }
    track_regions = hi > lo * (1 + 1e-9);
  }

  std::ofstream traj, metrics;
  const bool emit = !out_dir.empty();
  if (emit) {
    std::filesystem::create_directories(out_dir);
    traj = open_output(std::filesystem::path(out_dir) / "trajectory.jsonl");
    metrics = open_output(std::filesystem::path(out_dir) / "metrics.csv");
    metrics << "frame,time,iterations,converged,contact_count,"
               "max_fb_residual,max_penetration\n";
  }

  SimulateSummary summary;
  summary.frames = scene.frames;
  const VecX rest = mesh.rest_vector();
  Scalar soft_disp = 0, stiff_disp = 0;

  SimState state;
  state.q = scene.q0;
  state.v = scene.v0;
  for (int t = 0; t < scene.frames; ++t) {
    ForwardCache cache =
        forward_step(mesh, scene.material, system, scene.solver,
                     scene.obstacles, scene.fixed_vertices, state, f_ext, hook);
    summary.iterations.push_back(cache.iteration_count);
    summary.all_converged = summary.all_converged && cache.converged;
    const Scalar pen = max_penetration_at(scene, state.q);
    summary.max_penetration = std::max(summary.max_penetration, pen);
    if (track_regions) {
      for (int r = 0; r < scene.region_count; ++r) {
        if (!region_soft[r] && !region_stiff[r]) continue;
        const Scalar d = rigid_fit_residual(region_verts[r], rest, state.q);
        if (region_soft[r]) soft_disp = std::max(soft_disp, d);
        if (region_stiff[r]) stiff_disp = std::max(stiff_disp, d);
      }
    }
    if (emit) {
      json rec;
      rec["time"] = state.time;
      rec["q"] = vec_to_json(state.q);
      rec["v"] = vec_to_json(state.v);
      rec["iterations"] = cache.iteration_count;
      rec["converged"] = cache.converged;
      rec["contact_count"] = cache.contacts.normal_count();
      traj << rec.dump() << "\n";
      metrics << t + 1 << "," << state.time << "," << cache.iteration_count
              << "," << (cache.converged ? 1 : 0) << ","
              << cache.contacts.normal_count() << ","
              << max_normal_fb_residual(cache) << "," << pen << "\n";
    }
  }
  summary.refactorizations = system.refactor_count();
  if (track_regions && stiff_disp > 0) {
    summary.has_displacement_ratio = true;
    summary.displacement_ratio = soft_disp / stiff_disp;
  }

  if (emit) {
    open_output(std::filesystem::path(out_dir) / "summary.json")
        << summary_to_json(summary) << "\n";
  }
  return summary;
}

std::string summary_to_json(const SimulateSummary& summary) {
  json s;
  s["frames"] = summary.frames;
  s["iterations"] = summary.iterations;
  s["refactorizations"] = summary.refactorizations;
  s["all_converged"] = summary.all_converged;
  s["max_penetration"] = summary.max_penetration;
  if (summary.has_displacement_ratio) {
    s["displacement_ratio"] = summary.displacement_ratio;
  }
  return s.dump(2);
}

GradCheckReport run_gradcheck(const SceneSpec& scene_in,
                              const std::vector<std::string>& vars,
                              const std::string& out_path) {
  static const std::set<std::string> known = {"q0", "v0", "f_ext", "E", "w"};
  for (const std::string& v : vars) {
    if (!known.count(v)) {
      fail(ErrorCode::InvalidArgument,
           "gradcheck: unknown variable \"" + v +
               "\" (expected q0, v0, f_ext, E, w)");
    }
  }
  if (vars.empty()) {
    fail(ErrorCode::InvalidArgument, "gradcheck: no variables given");
  }

  SceneSpec scene = scene_in;
  const TetMesh& mesh = scene.mesh;
  MaterialField material = scene.material;
  // The finite-difference convention holds the mesh-wide projection means
  // constant while individual moduli move.
  material.freeze_means(material.prox_means());

  GlobalSystem system;
  const VecX f_ext0 = scene_external_force(scene);
  StateForce hook_storage;
  const StateForce* hook = nullptr;
  if (scene.has_hook) {
    hook_storage = make_hook(scene);
    hook = &hook_storage;
  }
  const VecX rest = mesh.rest_vector();
  const int n = mesh.dof_count();

  auto loss_of = [&](const VecX& q0, const VecX& v0,
                     const VecX& f_ext) -> Scalar {
    Rollout r = roll(mesh, material, system, scene, q0, v0, f_ext, hook,
                     false, false);
    return 0.5 * (r.final_state.q - rest).squaredNorm() +
           0.5 * r.final_state.v.squaredNorm();
  };

  // Analytic pass: rollout with caches, then the chained adjoint.
  Rollout base = roll(mesh, material, system, scene, scene.q0, scene.v0,
                      f_ext0, hook, true, false);
  std::vector<VecX> dl_dq_direct(scene.frames + 1, VecX::Zero(n));
  dl_dq_direct[scene.frames] = base.final_state.q - rest;
  ChainResult grads =
      chain_backward(mesh, material, system, base.caches, dl_dq_direct,
                     base.final_state.v, hook, scene.solver.eps_tr);

  GradCheckReport report;
  report.vars = vars;
  report.tau = grads.tau;
  report.rho = grads.rho;
  report.iterations = base.iterations;

  const int n_e = mesh.element_count();
  std::vector<Scalar> base_young(n_e);
  for (int e = 0; e < n_e; ++e) base_young[e] = material.young(e);

  auto check_var = [&](const std::string& var, const VecX& analytic,
                       int param_count, auto&& eval_at) {
    report.grad_norms[var] = analytic.norm();
    const Scalar scale =
        std::max(analytic.cwiseAbs().maxCoeff(), Scalar(1e-30));
    Scalar worst = 0;
    int worst_index = -1;
    for (int i : sample_indices(param_count, 24)) {
      const auto [fd, g] = eval_at(i, analytic);
      const Scalar denom =
          std::max({std::abs(fd), std::abs(g), 1e-4 * scale, Scalar(1e-12)});
      const Scalar rel = std::abs(fd - g) / denom;
      if (rel > worst) {
        worst = rel;
        worst_index = i;
      }
    }
    report.per_var_max_rel_err[var] = worst;
    if (worst > report.max_rel_err) {
      report.max_rel_err = worst;
      report.worst_param = var + "[" + std::to_string(worst_index) + "]";
    }
  };

  for (const std::string& var : vars) {
    if (var == "q0" || var == "v0" || var == "f_ext") {
      const VecX& analytic = var == "q0"   ? grads.dl_dq0
                             : var == "v0" ? grads.dl_dv0
                                           : grads.dl_df_ext;
      const VecX& center = var == "q0"   ? scene.q0
                           : var == "v0" ? scene.v0
                                         : f_ext0;
      // Step floor tied to the variable's overall magnitude: a per-entry
      // floor alone starves the difference quotient on zero entries of
      // large-scale variables (forces), burying it in solver truncation.
      const Scalar center_scale = center.cwiseAbs().maxCoeff();
      check_var(var, analytic, n,
                [&](int i, const VecX& g) -> std::pair<Scalar, Scalar> {
                  const Scalar step =
                      std::max({1e-6 * std::abs(center[i]),
                                1e-4 * center_scale, Scalar(1e-7)});
                  VecX plus = center, minus = center;
                  plus[i] += step;
                  minus[i] -= step;
                  Scalar lp, lm;
                  if (var == "q0") {
                    lp = loss_of(plus, scene.v0, f_ext0);
                    lm = loss_of(minus, scene.v0, f_ext0);
                  } else if (var == "v0") {
                    lp = loss_of(scene.q0, plus, f_ext0);
                    lm = loss_of(scene.q0, minus, f_ext0);
                  } else {
                    lp = loss_of(scene.q0, scene.v0, plus);
                    lm = loss_of(scene.q0, scene.v0, minus);
                  }
                  return {(lp - lm) / (2 * step), g[i]};
                });
    } else if (var == "E") {
      check_var("E", grads.dl_de, n_e,
                [&](int e, const VecX& g) -> std::pair<Scalar, Scalar> {
                  const Scalar step = 1e-4 * base_young[e];
                  std::vector<Scalar> young = base_young;
                  young[e] = base_young[e] + step;
                  material.set_young(young);
                  const Scalar lp = loss_of(scene.q0, scene.v0, f_ext0);
                  young[e] = base_young[e] - step;
                  material.set_young(young);
                  const Scalar lm = loss_of(scene.q0, scene.v0, f_ext0);
                  young[e] = base_young[e];
                  material.set_young(young);
                  return {(lp - lm) / (2 * step), g[e]};
                });
    } else {  // "w": norm-only (weights are linear images of the moduli)
      report.grad_norms["w"] = grads.dl_dw.norm();
    }
  }
  material.set_young(base_young);
  report.pass = report.max_rel_err <= 2e-3;

  if (!out_path.empty()) {
    const std::filesystem::path path(out_path);
    if (path.has_parent_path()) {
      std::filesystem::create_directories(path.parent_path());
    }
    open_output(path) << report_to_json(report) << "\n";
  }
  return report;
}

std::string report_to_json(const GradCheckReport& report) {
  json j;
  j["vars"] = report.vars;
  j["tau"] = report.tau;
  j["rho"] = report.rho;
  j["iterations"] = report.iterations;
  j["grad_norms"] = report.grad_norms;
  json fd;
  fd["max_rel_err"] = report.max_rel_err;
  fd["worst_param"] = report.worst_param;
  fd["per_var_max_rel_err"] = report.per_var_max_rel_err;
  j["fd_check"] = fd;
  j["pass"] = report.pass;
  return j.dump(2);
}

namespace {

enum class DesignVar { Young, YoungRegions, V0, Orientation };
enum class LossKind { Trajectory, FinalPose, TargetCom };

struct IdentifyProblem {
  SceneSpec scene;
  DesignVar design = DesignVar::Young;
  VecX initial;      // optimizer space (log-moduli for Young designs)
  VecX true_params;  // natural space; empty when absent
  LossKind loss = LossKind::Trajectory;
  Vec3 target = Vec3::Zero();
  int loss_frame = 0;  // 1-based; 0 = last frame
  LbfgsConfig optimizer;
};

VecX json_number_or_array(const json& j, const std::string& field,
                          std::vector<std::string>& errs) {
  if (j.is_number()) {
    VecX v(1);
    v[0] = j.get<Scalar>();
    return v;
  }
  if (j.is_array() && !j.empty()) {
    VecX v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_number()) {
        errs.push_back(field + ": expected numbers");
        return VecX();
      }
      v[static_cast<int>(i)] = j[i].get<Scalar>();
    }
    return v;
  }
  errs.push_back(field + ": expected a number or a non-empty numeric array");
  return VecX();
}

IdentifyProblem parse_identify_problem(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& err) {
    fail(ErrorCode::Parse, std::string("problem JSON: ") + err.what());
  }
  std::vector<std::string> errs;
  IdentifyProblem p;

  if (j.contains("scene_file") && j["scene_file"].is_string()) {
    p.scene = load_scene_file(j["scene_file"].get<std::string>());
  } else if (j.contains("scene") && j["scene"].is_object()) {
    p.scene = parse_scene_json(j["scene"].dump());
  } else {
    fail(ErrorCode::Validation,
         "problem: expected \"scene\" object or \"scene_file\" path");
  }

  if (!j.contains("design") || !j["design"].is_object() ||
      !j["design"].contains("variable")) {
    errs.push_back("design.variable: required");
  } else {
    const json& d = j["design"];
    const std::string var = d["variable"].is_string()
                                ? d["variable"].get<std::string>()
                                : std::string();
    VecX initial_natural;
    if (d.contains("initial")) {
      initial_natural = json_number_or_array(d["initial"], "design.initial", errs);
    } else {
      errs.push_back("design.initial: required");
    }
    if (var == "young") {
      p.design = DesignVar::Young;
      if (initial_natural.size() == 1 && initial_natural[0] > 0) {
        p.initial = initial_natural.array().log();
      } else if (initial_natural.size() != 0) {
        errs.push_back("design.initial: young expects one positive modulus");
      }
    } else if (var == "young_regions") {
      p.design = DesignVar::YoungRegions;
      if (p.scene.region_count < 1) {
        errs.push_back("design.variable: scene has no element regions");
      } else if (initial_natural.size() != p.scene.region_count) {
        errs.push_back("design.initial: expected one modulus per region (" +
                       std::to_string(p.scene.region_count) + ")");
      } else if ((initial_natural.array() <= 0).any()) {
        errs.push_back("design.initial: moduli must be positive");
      } else {
        p.initial = initial_natural.array().log();
      }
    } else if (var == "v0") {
      p.design = DesignVar::V0;
      if (initial_natural.size() != 3) {
        errs.push_back("design.initial: v0 expects a 3-vector");
      } else {
        p.initial = initial_natural;
      }
    } else if (var == "orientation") {
      p.design = DesignVar::Orientation;
      if (initial_natural.size() != 3) {
        errs.push_back("design.initial: orientation expects 3 Euler angles");
      } else {
        p.initial = initial_natural;
      }
    } else {
      errs.push_back("design.variable: expected young, young_regions, v0, or "
                     "orientation");
    }
  }

  if (j.contains("true")) {
    p.true_params = json_number_or_array(j["true"], "true", errs);
    if (p.initial.size() != 0 && p.true_params.size() != 0 &&
        p.true_params.size() != p.initial.size() &&
        !(p.design == DesignVar::Young && p.true_params.size() == 1)) {
      errs.push_back("true: size must match design.initial");
    }
  }

  std::string loss_kind = "trajectory";
  if (j.contains("loss") && j["loss"].is_object()) {
    const json& l = j["loss"];
    if (l.contains("kind") && l["kind"].is_string()) {
      loss_kind = l["kind"].get<std::string>();
    }
    if (l.contains("target")) {
      p.target = [&] {
        std::vector<std::string> verrs;
        VecX t = json_number_or_array(l["target"], "loss.target", verrs);
        if (t.size() != 3) {
          errs.push_back("loss.target: expected a 3-vector");
          return Vec3(Vec3::Zero());
        }
        return Vec3(t[0], t[1], t[2]);
      }();
    }
    if (l.contains("frame")) p.loss_frame = l["frame"].get<int>();
  }
  if (loss_kind == "trajectory") {
    p.loss = LossKind::Trajectory;
  } else if (loss_kind == "final_pose") {
    p.loss = LossKind::FinalPose;
  } else if (loss_kind == "target_com") {
    p.loss = LossKind::TargetCom;
    if (!j.contains("loss") || !j["loss"].contains("target")) {
      errs.push_back("loss.target: required for target_com");
    }
  } else {
    errs.push_back(
        "loss.kind: expected trajectory, final_pose, or target_com");
  }
  if (p.loss != LossKind::TargetCom && p.true_params.size() == 0) {
    errs.push_back("true: required to synthesize the reference trajectory");
  }
  if (p.loss_frame < 0 || p.loss_frame > p.scene.frames) {
    errs.push_back("loss.frame: out of range");
  }
  if (p.loss_frame == 0) p.loss_frame = p.scene.frames;

  if (j.contains("optimizer") && j["optimizer"].is_object()) {
    const json& o = j["optimizer"];
    p.optimizer.memory = o.value("memory", p.optimizer.memory);
    p.optimizer.max_evals = o.value("max_evals", p.optimizer.max_evals);
    p.optimizer.grad_tol = o.value("grad_tol", p.optimizer.grad_tol);
  }

  if (!errs.empty()) {
    std::string msg = "problem validation failed:";
    for (const std::string& e : errs) msg += "\n  - " + e;
    fail(ErrorCode::Validation, msg);
  }
  return p;
}

// Applies a design point (optimizer space) to the evaluation inputs.
struct DesignState {
  VecX q0, v0;
  std::vector<Scalar> young;
  bool material_changed = false;
};

DesignState apply_design(const IdentifyProblem& p, const VecX& x) {
  DesignState s;
  s.q0 = p.scene.q0;
  s.v0 = p.scene.v0;
  const int n_e = p.scene.mesh.element_count();
  switch (p.design) {
    case DesignVar::Young: {
      s.young.assign(n_e, std::exp(x[0]));
      s.material_changed = true;
      break;
    }
    case DesignVar::YoungRegions: {
      s.young.resize(n_e);
      for (int e = 0; e < n_e; ++e) {
        s.young[e] = std::exp(x[p.scene.region_of_element[e]]);
      }
      s.material_changed = true;
      break;
    }
    case DesignVar::V0: {
      for (int v = 0; v < p.scene.mesh.vertex_count(); ++v) {
        s.v0.segment<3>(3 * v) = Vec3(x[0], x[1], x[2]);
      }
      break;
    }
    case DesignVar::Orientation: {
      const Vec3 angles(x[0], x[1], x[2]);
      const Mat3 r = euler_rotation(angles);
      const VecX rest = p.scene.mesh.rest_vector();
      const Vec3 com = mass_center(p.scene.mesh, rest);
      for (int v = 0; v < p.scene.mesh.vertex_count(); ++v) {
        s.q0.segment<3>(3 * v) =
            com + r * (rest.segment<3>(3 * v) - com).eval();
      }
      break;
    }
  }
  return s;
}

// Natural-space view of an optimizer-space point.
VecX design_natural(const IdentifyProblem& p, const VecX& x) {
  if (p.design == DesignVar::Young || p.design == DesignVar::YoungRegions) {
    return x.array().exp();
  }
  return x;
}

// Chain rule from the gradient bundle into optimizer space.
VecX design_gradient(const IdentifyProblem& p, const VecX& x,
                     const ChainResult& grads) {
  VecX g = VecX::Zero(x.size());
  switch (p.design) {
    case DesignVar::Young: {
      const Scalar e_mod = std::exp(x[0]);
      g[0] = grads.dl_de.sum() * e_mod;
      break;
    }
    case DesignVar::YoungRegions: {
      for (int e = 0; e < p.scene.mesh.element_count(); ++e) {
        const int r = p.scene.region_of_element[e];
        g[r] += grads.dl_de[e] * std::exp(x[r]);
      }
      break;
    }
    case DesignVar::V0: {
      for (int v = 0; v < p.scene.mesh.vertex_count(); ++v) {
        g += grads.dl_dv0.segment<3>(3 * v);
      }
      break;
    }
    case DesignVar::Orientation: {
      const Vec3 angles(x[0], x[1], x[2]);
      const VecX rest = p.scene.mesh.rest_vector();
      const Vec3 com = mass_center(p.scene.mesh, rest);
      for (int axis = 0; axis < 3; ++axis) {
        const Mat3 dr = euler_rotation_derivative(angles, axis);
        Scalar acc = 0;
        for (int v = 0; v < p.scene.mesh.vertex_count(); ++v) {
          acc += grads.dl_dq0.segment<3>(3 * v)
                     .dot(dr * (rest.segment<3>(3 * v) - com).eval());
        }
        g[axis] = acc;
      }
      break;
    }
  }
  return g;
}

}  // namespace

IdentifyResult run_identify(const std::string& problem_text,
                            const std::string& out_dir) {
  IdentifyProblem p = parse_identify_problem(problem_text);
  const TetMesh& mesh = p.scene.mesh;
  const int n = mesh.dof_count();

  StateForce hook_storage;
  const StateForce* hook = nullptr;
  if (p.scene.has_hook) {
    hook_storage = make_hook(p.scene);
    hook = &hook_storage;
  }
  const VecX f_ext = scene_external_force(p.scene);

  // Reference trajectory from the true parameters (synthetic, generated by
  // this same simulator), on its own factor so the optimization's counters
  // stay clean.
  std::vector<VecX> reference_q;
  if (p.true_params.size() != 0) {
    VecX x_true = p.true_params;
    if (p.design == DesignVar::Young || p.design == DesignVar::YoungRegions) {
      x_true = p.true_params.array().log();
    }
    DesignState ds = apply_design(p, x_true);
    MaterialField ref_material = p.scene.material;
    if (ds.material_changed) ref_material.set_young(ds.young);
    GlobalSystem ref_system;
    Rollout ref = roll(mesh, ref_material, ref_system, p.scene, ds.q0, ds.v0,
                       f_ext, hook, false, true);
    reference_q = std::move(ref.frame_q);
  }

  MaterialField material = p.scene.material;
  GlobalSystem system;
  std::uint64_t material_updates = 0;
  std::uint64_t last_version = std::numeric_limits<std::uint64_t>::max();

  struct EvalRecord {
    Scalar loss;
    Scalar best;
  };
  std::vector<EvalRecord> eval_log;

  auto evaluate = [&](const VecX& x, VecX& grad) -> Scalar {
    DesignState ds = apply_design(p, x);
    if (ds.material_changed) material.set_young(ds.young);
    if (material.version() != last_version) {
      last_version = material.version();
      ++material_updates;
    }

    const bool need_traj =
        p.loss == LossKind::Trajectory ||
        (p.loss == LossKind::TargetCom && p.loss_frame != p.scene.frames);
    Rollout r = roll(mesh, material, system, p.scene, ds.q0, ds.v0, f_ext,
                     hook, true, need_traj);

    Scalar loss = 0;
    std::vector<VecX> dl_dq_direct(p.scene.frames + 1, VecX::Zero(n));
    switch (p.loss) {
      case LossKind::Trajectory: {
        for (int t = 0; t < p.scene.frames; ++t) {
          const VecX diff = r.frame_q[t] - reference_q[t];
          loss += 0.5 * diff.squaredNorm();
          dl_dq_direct[t + 1] = diff;
        }
        break;
      }
      case LossKind::FinalPose: {
        const VecX diff = r.final_state.q - reference_q.back();
        loss = 0.5 * diff.squaredNorm();
        dl_dq_direct[p.scene.frames] = diff;
        break;
      }
      case LossKind::TargetCom: {
        const VecX& q_frame = p.loss_frame == p.scene.frames
                                  ? r.final_state.q
                                  : r.frame_q[p.loss_frame - 1];
        const Vec3 com = mass_center(mesh, q_frame);
        const Vec3 diff = com - p.target;
        loss = 0.5 * diff.squaredNorm();
        Scalar total = 0;
        for (int v = 0; v < mesh.vertex_count(); ++v) {
          total += mesh.vertex_mass(v);
        }
        VecX& d = dl_dq_direct[p.loss_frame];
        for (int v = 0; v < mesh.vertex_count(); ++v) {
          d.segment<3>(3 * v) = (mesh.vertex_mass(v) / total) * diff;
        }
        break;
      }
    }

    ChainResult grads =
        chain_backward(mesh, material, system, r.caches, dl_dq_direct,
                       VecX::Zero(n), hook, p.scene.solver.eps_tr);
    grad = design_gradient(p, x, grads);

    const Scalar best =
        eval_log.empty() ? loss : std::min(loss, eval_log.back().best);
    eval_log.push_back({loss, best});
    return loss;
  };

  // A line-search probe can land on an unsimulatable parameter point
  // (inverted elements, diverged solves).  Report it as an infinite loss so
  // the search backs off rather than aborting the whole run.
  auto objective = [&](const VecX& x, VecX& grad) -> Scalar {
    try {
      return evaluate(x, grad);
    } catch (const Error&) {
      grad = VecX::Zero(x.size());
      const Scalar inf = std::numeric_limits<Scalar>::infinity();
      eval_log.push_back({inf, eval_log.empty() ? inf : eval_log.back().best});
      return inf;
    }
  };

  LbfgsResult opt = lbfgs_minimize(objective, p.initial, p.optimizer);

  IdentifyResult result;
  switch (p.design) {
    case DesignVar::Young: result.variable = "young"; break;
    case DesignVar::YoungRegions: result.variable = "young_regions"; break;
    case DesignVar::V0: result.variable = "v0"; break;
    case DesignVar::Orientation: result.variable = "orientation"; break;
  }
  result.recovered = design_natural(p, opt.x);
  result.true_params = p.true_params;
  if (p.true_params.size() == result.recovered.size()) {
    for (int i = 0; i < result.recovered.size(); ++i) {
      result.rel_errors.push_back(
          std::abs(result.recovered[i] - p.true_params[i]) /
          std::max(std::abs(p.true_params[i]), Scalar(1e-30)));
    }
  }
  result.loss = opt.loss;
  result.evaluations = opt.evaluations;
  result.factorizations = system.refactor_count();
  result.material_updates = material_updates;
  result.converged = opt.converged;
  result.stalled = opt.stalled;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream curve =
        open_output(std::filesystem::path(out_dir) / "loss_curve.csv");
    curve << "evaluation,loss,best_so_far\n";
    for (std::size_t i = 0; i < eval_log.size(); ++i) {
      curve << i + 1 << "," << eval_log[i].loss << "," << eval_log[i].best
            << "\n";
    }
    open_output(std::filesystem::path(out_dir) / "result.json")
        << result_to_json(result) << "\n";
  }
  return result;
}

std::string result_to_json(const IdentifyResult& result) {
  json res;
  res["variable"] = result.variable;
  res["recovered"] = vec_to_json(result.recovered);
  if (result.true_params.size() != 0) {
    res["true"] = vec_to_json(result.true_params);
    res["rel_errors"] = result.rel_errors;
    res["reference"] = "synthetic (inverse crime)";
  }
  res["loss"] = result.loss;
  res["evaluations"] = result.evaluations;
  res["factorizations"] = result.factorizations;
  res["material_updates"] = result.material_updates;
  res["converged"] = result.converged;
  res["stalled"] = result.stalled;
  return res.dump(2);
}

IdentifyResult run_identify_file(const std::string& problem_path,
                                 const std::string& out_dir) {
  std::ifstream in(problem_path);
  if (!in) fail(ErrorCode::Io, "cannot open problem file: " + problem_path);
  std::stringstream buf;
  buf << in.rdbuf();
  return run_identify(buf.str(), out_dir);
}

std::string run_factor_stats(const SceneSpec& scene) {
  GlobalSystem system;
  system.refresh(scene.mesh, scene.material, scene.solver.h,
                 scene.fixed_vertices);
  json j;
  j["vertices"] = scene.mesh.vertex_count();
  j["elements"] = scene.mesh.element_count();
  j["dofs"] = scene.mesh.dof_count();
  j["free_vertices"] = system.free_count();
  j["fixed_vertices"] = static_cast<int>(system.fixed_vertices().size());
  j["ordering"] = system.factor().ordering_name();
  j["factor_nnz"] = system.factor().s_nnz();
  j["factor_fill_ratio"] = system.factor().s_fill_ratio();
  j["weight_contrast"] = scene.material.weight_contrast();
  j["refactorizations"] = system.refactor_count();
  return j.dump(2);
}

}  // namespace heterodyn
