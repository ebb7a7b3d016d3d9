#pragma once
// Scene ingestion: JSON schema parsing, built-in generators for the canonical
// desk scenes, and the binding of a scene to solver-facing inputs.

#include <string>
#include <utility>

#include "forward.hpp"

namespace heterodyn {

// A fully resolved scene: mesh, material, boundary conditions, obstacles,
// forcing, solver settings, and the initial state.
struct SceneSpec {
  std::string name;
  TetMesh mesh;
  MaterialField material;
  std::vector<int> fixed_vertices;  // sorted unique
  std::vector<Obstacle> obstacles;
  Vec3 gravity = Vec3::Zero();
  VecX f_ext_extra;  // explicit point forces (gravity excluded)
  bool has_hook = false;
  int hook_vertex = -1;
  Vec3 hook_anchor = Vec3::Zero();
  Scalar hook_stiffness = 0;
  Scalar hook_damping = 0;
  SolverConfig solver;
  int frames = 1;
  VecX q0, v0;
  // Optional element regions (generator- or file-defined); empty when the
  // scene has no region structure.
  std::vector<int> region_of_element;
  int region_count = 0;
};

// Total constant external force: lumped gravity plus explicit point forces.
VecX scene_external_force(const SceneSpec& scene);

// State-force hook bound to the scene's point spring (has_hook must be true):
// f = -k (q_v - anchor) - d v_v on the hook vertex, with exact transposed
// Jacobian applies for the adjoint pass.
StateForce make_hook(const SceneSpec& scene);

// Canonical generator scenes by name: "two-tet", "cantilever3", "twist-bar",
// "ball-drop", "slab-on-sphere", "resting-box".
SceneSpec builtin_scene(const std::string& name);

// Parses a scene JSON document.  A "mesh": {"generator": name, ...} source
// starts from the builtin defaults and applies the document's overrides;
// explicit "vertices"/"elements" or "grid" sources build the mesh directly.
// Throws Parse on malformed JSON and Validation listing every violation.
SceneSpec parse_scene_json(const std::string& text);

// Reads and parses a scene file (Io on read failure).
SceneSpec load_scene_file(const std::string& path);

}  // namespace heterodyn
