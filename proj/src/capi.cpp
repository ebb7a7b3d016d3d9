// C interface: opaque handles over the scene/driver layer, status codes, and
// thread-local error reporting.  Exceptions never cross this boundary.
#include "heterodyn/heterodyn.h"

#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "drivers.hpp"
#include "forward.hpp"
#include "scene.hpp"

using namespace heterodyn;

struct hd_scene {
  SceneSpec spec;
};

struct hd_sim {
  const hd_scene* scene = nullptr;
  GlobalSystem system;
  StateForce hook_storage;
  const StateForce* hook = nullptr;
  VecX f_ext;
  SimState state;
  int last_iterations = 0;
  bool last_converged = false;
  int last_contact_count = 0;
};

namespace {

thread_local int g_error_code = 0;
thread_local std::string g_error_message;

void set_error(int code, const std::string& message) {
  g_error_code = code;
  g_error_message = message;
}

// Runs fn, translating exceptions into status codes + thread-local messages.
template <typename Fn>
hd_status guarded(Fn&& fn) {
  try {
    fn();
    return HD_OK;
  } catch (const Error& e) {
    set_error(static_cast<int>(e.code()), e.what());
    return static_cast<hd_status>(e.code());
  } catch (const std::exception& e) {
    set_error(HD_ERR_INVALID_ARGUMENT, std::string("unexpected error: ") + e.what());
    return HD_ERR_INVALID_ARGUMENT;
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out != nullptr) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

hd_status copy_vector(const VecX& v, double* out, size_t capacity,
                      const char* who) {
  if (out == nullptr || capacity < static_cast<size_t>(v.size())) {
    set_error(HD_ERR_INVALID_ARGUMENT,
              std::string(who) + ": output buffer too small");
    return HD_ERR_INVALID_ARGUMENT;
  }
  std::memcpy(out, v.data(), sizeof(double) * v.size());
  return HD_OK;
}

std::vector<std::string> split_csv(const char* csv) {
  std::vector<std::string> out;
  if (csv == nullptr) return out;
  const std::string text(csv);
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    std::string item = text.substr(start, comma - start);
    // Trim surrounding spaces.
    const std::size_t a = item.find_first_not_of(" \t");
    const std::size_t b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
    start = comma + 1;
  }
  return out;
}

}  // namespace

extern "C" {

const char* hd_last_error(void) { return g_error_message.c_str(); }

int hd_last_error_code(void) { return g_error_code; }

void hd_string_free(char* s) { std::free(s); }

/* ---- scenes ---------------------------------------------------------- */

hd_scene* hd_scene_load(const char* path) {
  if (path == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_scene_load: path is NULL");
    return nullptr;
  }
  hd_scene* scene = new hd_scene;
  if (guarded([&] { scene->spec = load_scene_file(path); }) != HD_OK) {
    delete scene;
    return nullptr;
  }
  return scene;
}

hd_scene* hd_scene_parse(const char* json_text) {
  if (json_text == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_scene_parse: json_text is NULL");
    return nullptr;
  }
  hd_scene* scene = new hd_scene;
  if (guarded([&] { scene->spec = parse_scene_json(json_text); }) != HD_OK) {
    delete scene;
    return nullptr;
  }
  return scene;
}

hd_scene* hd_scene_builtin(const char* name) {
  if (name == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_scene_builtin: name is NULL");
    return nullptr;
  }
  hd_scene* scene = new hd_scene;
  if (guarded([&] { scene->spec = builtin_scene(name); }) != HD_OK) {
    delete scene;
    return nullptr;
  }
  return scene;
}

void hd_scene_free(hd_scene* scene) { delete scene; }

int hd_scene_vertex_count(const hd_scene* scene) {
  return scene == nullptr ? 0 : scene->spec.mesh.vertex_count();
}

int hd_scene_element_count(const hd_scene* scene) {
  return scene == nullptr ? 0 : scene->spec.mesh.element_count();
}

int hd_scene_frame_count(const hd_scene* scene) {
  return scene == nullptr ? 0 : scene->spec.frames;
}

const char* hd_scene_name(const hd_scene* scene) {
  return scene == nullptr ? "" : scene->spec.name.c_str();
}

/* ---- frame-by-frame simulation --------------------------------------- */

hd_sim* hd_sim_create(const hd_scene* scene) {
  if (scene == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_sim_create: scene is NULL");
    return nullptr;
  }
  hd_sim* sim = new hd_sim;
  const hd_status status = guarded([&] {
    sim->scene = scene;
    const SceneSpec& s = scene->spec;
    sim->system.refresh(s.mesh, s.material, s.solver.h, s.fixed_vertices);
    if (s.has_hook) {
      sim->hook_storage = make_hook(s);
      sim->hook = &sim->hook_storage;
    }
    sim->f_ext = scene_external_force(s);
    sim->state.q = s.q0;
    sim->state.v = s.v0;
    sim->state.time = 0.0;
  });
  if (status != HD_OK) {
    delete sim;
    return nullptr;
  }
  return sim;
}

void hd_sim_free(hd_sim* sim) { delete sim; }

hd_status hd_sim_step(hd_sim* sim) {
  if (sim == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_sim_step: sim is NULL");
    return HD_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    const SceneSpec& s = sim->scene->spec;
    const ForwardCache cache =
        forward_step(s.mesh, s.material, sim->system, s.solver, s.obstacles,
                     s.fixed_vertices, sim->state, sim->f_ext, sim->hook);
    sim->last_iterations = cache.iteration_count;
    sim->last_converged = cache.converged;
    sim->last_contact_count = cache.contacts.normal_count();
  });
}

double hd_sim_time(const hd_sim* sim) {
  return sim == nullptr ? 0.0 : sim->state.time;
}

int hd_sim_dof_count(const hd_sim* sim) {
  return sim == nullptr ? 0 : static_cast<int>(sim->state.q.size());
}

hd_status hd_sim_positions(const hd_sim* sim, double* out, size_t capacity) {
  if (sim == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_sim_positions: sim is NULL");
    return HD_ERR_INVALID_ARGUMENT;
  }
  return copy_vector(sim->state.q, out, capacity, "hd_sim_positions");
}

hd_status hd_sim_velocities(const hd_sim* sim, double* out, size_t capacity) {
  if (sim == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_sim_velocities: sim is NULL");
    return HD_ERR_INVALID_ARGUMENT;
  }
  return copy_vector(sim->state.v, out, capacity, "hd_sim_velocities");
}

int hd_sim_last_iterations(const hd_sim* sim) {
  return sim == nullptr ? 0 : sim->last_iterations;
}

int hd_sim_last_converged(const hd_sim* sim) {
  return sim != nullptr && sim->last_converged ? 1 : 0;
}

int hd_sim_last_contact_count(const hd_sim* sim) {
  return sim == nullptr ? 0 : sim->last_contact_count;
}

/* ---- drivers ---------------------------------------------------------- */

hd_status hd_run_simulate(const hd_scene* scene, const char* out_dir,
                          char** summary_json) {
  if (scene == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_run_simulate: scene is NULL");
    return HD_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    const SimulateSummary summary =
        run_simulate(scene->spec, out_dir == nullptr ? "" : out_dir);
    if (summary_json != nullptr) {
      *summary_json = copy_string(summary_to_json(summary));
    }
  });
}

hd_status hd_run_gradcheck(const hd_scene* scene, const char* vars_csv,
                           const char* out_path, char** report_json,
                           int* pass) {
  if (scene == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_run_gradcheck: scene is NULL");
    return HD_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    std::vector<std::string> vars = split_csv(vars_csv);
    if (vars.empty()) vars = {"q0", "v0", "f_ext", "E"};
    const GradCheckReport report = run_gradcheck(
        scene->spec, vars, out_path == nullptr ? "" : out_path);
    if (report_json != nullptr) {
      *report_json = copy_string(report_to_json(report));
    }
    if (pass != nullptr) *pass = report.pass ? 1 : 0;
  });
}

hd_status hd_run_identify(const char* problem_json, const char* out_dir,
                          char** result_json, int* stalled) {
  if (problem_json == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_run_identify: problem is NULL");
    return HD_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    const IdentifyResult result =
        run_identify(problem_json, out_dir == nullptr ? "" : out_dir);
    if (result_json != nullptr) {
      *result_json = copy_string(result_to_json(result));
    }
    if (stalled != nullptr) *stalled = result.stalled ? 1 : 0;
  });
}

hd_status hd_run_identify_file(const char* problem_path, const char* out_dir,
                               char** result_json, int* stalled) {
  if (problem_path == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_run_identify_file: path is NULL");
    return HD_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    const IdentifyResult result =
        run_identify_file(problem_path, out_dir == nullptr ? "" : out_dir);
    if (result_json != nullptr) {
      *result_json = copy_string(result_to_json(result));
    }
    if (stalled != nullptr) *stalled = result.stalled ? 1 : 0;
  });
}

hd_status hd_factor_stats(const hd_scene* scene, char** stats_json) {
  if (scene == nullptr) {
    set_error(HD_ERR_INVALID_ARGUMENT, "hd_factor_stats: scene is NULL");
    return HD_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    const std::string stats = run_factor_stats(scene->spec);
    if (stats_json != nullptr) *stats_json = copy_string(stats);
  });
}

}  // extern "C"
