#pragma once
// High-level drivers: rollout with trajectory/metrics emission, gradient
// checking against central finite differences, and inverse problems solved
// with L-BFGS over adjoint gradients chained across frames.

#include <map>
#include <string>
#include <vector>

#include "backward.hpp"
#include "scene.hpp"

namespace heterodyn {

struct SimulateSummary {
  int frames = 0;
  std::vector<int> iterations;  // per frame
  std::uint64_t refactorizations = 0;
  bool all_converged = true;
  Scalar max_penetration = 0;
  // Deformational-displacement ratio softest regions / stiffest regions over
  // the rollout, where each region's displacement is measured net of its own
  // best rigid fit from rest (so rigid carry does not count).  Present only
  // when the scene defines regions with differing moduli.
  bool has_displacement_ratio = false;
  Scalar displacement_ratio = 0;
};

// Runs the scene for its configured frame count, writing trajectory.jsonl
// (one record per frame: time, q, v, iterations, converged, contact_count),
// metrics.csv, and summary.json under out_dir ("" = no file output).
SimulateSummary run_simulate(const SceneSpec& scene, const std::string& out_dir);

struct GradCheckReport {
  std::vector<std::string> vars;
  std::vector<Scalar> tau;  // per frame, backward order reversed to forward
  std::vector<Scalar> rho;
  std::vector<int> iterations;  // forward iterations per frame
  std::map<std::string, Scalar> grad_norms;
  std::map<std::string, Scalar> per_var_max_rel_err;
  Scalar max_rel_err = 0;
  std::string worst_param;
  bool pass = false;
};

// Checks adjoint gradients of the canonical loss
//   L = 1/2 ||q_T - rest||^2 + 1/2 ||v_T||^2
// against central finite differences over a deterministic sample of at most
// 24 entries per variable.  vars may contain "q0", "v0", "f_ext", "E", "w"
// ("w" is reported by norm only: constraint weights are linear images of the
// per-element moduli and cannot be perturbed independently through the
// material interface).  Prox means are frozen for the whole check.  Writes
// the report JSON to out_path ("" = no file output).
GradCheckReport run_gradcheck(const SceneSpec& scene,
                              const std::vector<std::string>& vars,
                              const std::string& out_path);

struct IdentifyResult {
  std::string variable;
  VecX recovered;      // natural space (moduli in Pa, velocities, angles)
  VecX true_params;    // empty when the problem has no ground truth
  std::vector<Scalar> rel_errors;
  Scalar loss = 0;
  int evaluations = 0;
  std::uint64_t factorizations = 0;
  std::uint64_t material_updates = 0;
  bool converged = false;
  bool stalled = false;
};

// Solves an inverse problem described by a problem JSON document:
//   {
//     "scene": {...} | "scene_file": "path",
//     "design": {"variable": "young"|"young_regions"|"v0"|"orientation",
//                "initial": number | [..]},
//     "true": number | [..],          // synthesizes the reference trajectory
//     "loss": {"kind": "trajectory"|"final_pose"|"target_com",
//              "target": [x,y,z]},    // target_com only
//     "optimizer": {"memory": m, "max_evals": n, "grad_tol": tol}
//   }
// Writes loss_curve.csv and result.json under out_dir ("" = no file output).
IdentifyResult run_identify(const std::string& problem_text,
                            const std::string& out_dir);
IdentifyResult run_identify_file(const std::string& problem_path,
                                 const std::string& out_dir);

// Assembles and factorizes the scene's global operator once and returns a
// JSON stats string (sizes, ordering, factor nnz and fill ratio).
std::string run_factor_stats(const SceneSpec& scene);

// JSON serializations shared by the file writers and the C API.
std::string summary_to_json(const SimulateSummary& summary);
std::string report_to_json(const GradCheckReport& report);
std::string result_to_json(const IdentifyResult& result);

}  // namespace heterodyn
