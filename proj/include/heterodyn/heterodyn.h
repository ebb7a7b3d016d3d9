/* heterodyn — differentiable projective-dynamics solver, C interface.
 *
 * Every function that can fail returns an hd_status (0 on success); the
 * message for the most recent failure on the calling thread is available
 * via hd_last_error().  Strings returned through char** out-parameters are
 * heap-allocated and must be released with hd_string_free().  Handles are
 * opaque and must be released with their matching _free function.  A scene
 * handle is immutable after creation and may back any number of simulation
 * handles; simulation handles are single-threaded.
 */
#ifndef HETERODYN_H
#define HETERODYN_H

#include <stddef.h>

#if defined(_WIN32)
#if defined(HETERODYN_BUILD)
#define HD_API __declspec(dllexport)
#else
#define HD_API __declspec(dllimport)
#endif
#else
#define HD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hd_status {
  HD_OK = 0,
  HD_ERR_PARSE = 1,             /* malformed JSON */
  HD_ERR_VALIDATION = 2,        /* well-formed but invalid input */
  HD_ERR_DEGENERATE_ELEMENT = 3,
  HD_ERR_INVALID_POISSON = 4,
  HD_ERR_NON_POSITIVE_JACOBIAN = 5,
  HD_ERR_PROX_DIVERGED = 6,
  HD_ERR_SINGULAR_FILTERED_HESSIAN = 7,
  HD_ERR_NOT_POSITIVE_DEFINITE = 8,
  HD_ERR_SINGULAR_CONTACT_SYSTEM = 9,
  HD_ERR_ADJOINT_DIVERGED = 10,
  HD_ERR_LINE_SEARCH_FAILED = 11,
  HD_ERR_IO = 12,
  HD_ERR_INVALID_ARGUMENT = 13
} hd_status;

/* Message and code of the most recent failure on this thread.  The message
 * pointer stays valid until the next failing call on the same thread; it is
 * never NULL (empty string when no failure has occurred). */
HD_API const char* hd_last_error(void);
HD_API int hd_last_error_code(void);

/* Releases a string returned through a char** out-parameter.  NULL is ok. */
HD_API void hd_string_free(char* s);

/* ---- scenes ---------------------------------------------------------- */

typedef struct hd_scene hd_scene;

/* Loads a scene JSON file (or a built-in generator referenced inside it).
 * Returns NULL on failure. */
HD_API hd_scene* hd_scene_load(const char* path);

/* Parses scene JSON from memory.  Returns NULL on failure. */
HD_API hd_scene* hd_scene_parse(const char* json_text);

/* Builds one of the built-in scenes by name: "two-tet", "cantilever3",
 * "twist-bar", "ball-drop", "resting-box", "slab-on-sphere". */
HD_API hd_scene* hd_scene_builtin(const char* name);

HD_API void hd_scene_free(hd_scene* scene);

HD_API int hd_scene_vertex_count(const hd_scene* scene);
HD_API int hd_scene_element_count(const hd_scene* scene);
HD_API int hd_scene_frame_count(const hd_scene* scene);
HD_API const char* hd_scene_name(const hd_scene* scene);

/* ---- frame-by-frame simulation --------------------------------------- */

typedef struct hd_sim hd_sim;

/* Creates a simulation at the scene's initial state.  The scene must stay
 * alive for the lifetime of the simulation.  Returns NULL on failure. */
HD_API hd_sim* hd_sim_create(const hd_scene* scene);
HD_API void hd_sim_free(hd_sim* sim);

/* Advances one frame.  On success the state queries below reflect the new
 * frame.  Returns a non-OK status and leaves the previous state intact when
 * the step fails. */
HD_API hd_status hd_sim_step(hd_sim* sim);

HD_API double hd_sim_time(const hd_sim* sim);
HD_API int hd_sim_dof_count(const hd_sim* sim);

/* Copies the current positions/velocities (3 doubles per vertex, xyz
 * interleaved) into out; capacity is the number of doubles out can hold
 * (must be >= dof count). */
HD_API hd_status hd_sim_positions(const hd_sim* sim, double* out,
                                  size_t capacity);
HD_API hd_status hd_sim_velocities(const hd_sim* sim, double* out,
                                   size_t capacity);

/* Diagnostics for the most recent completed frame (0/false before the first
 * step). */
HD_API int hd_sim_last_iterations(const hd_sim* sim);
HD_API int hd_sim_last_converged(const hd_sim* sim);
HD_API int hd_sim_last_contact_count(const hd_sim* sim);

/* ---- drivers ---------------------------------------------------------- */

/* Runs the scene for its configured frame count.  When out_dir is non-NULL
 * and non-empty, writes trajectory.jsonl, metrics.csv, and summary.json
 * under it.  When summary_json is non-NULL it receives the summary as a
 * JSON string. */
HD_API hd_status hd_run_simulate(const hd_scene* scene, const char* out_dir,
                                 char** summary_json);

/* Checks adjoint gradients against central finite differences.  vars_csv is
 * a comma-separated subset of q0,v0,f_ext,E,w.  When out_path is non-NULL
 * and non-empty the report JSON is written there; when report_json is
 * non-NULL it receives the report.  pass (may be NULL) receives 1 when the
 * worst relative error is within tolerance, else 0. */
HD_API hd_status hd_run_gradcheck(const hd_scene* scene, const char* vars_csv,
                                  const char* out_path, char** report_json,
                                  int* pass);

/* Solves an inverse problem described by a problem JSON document (see the
 * documentation for the schema).  When out_dir is non-NULL and non-empty,
 * writes loss_curve.csv and result.json under it.  When result_json is
 * non-NULL it receives the result.  stalled (may be NULL) receives 1 when
 * the optimizer hit its evaluation budget without converging (a result is
 * still produced). */
HD_API hd_status hd_run_identify(const char* problem_json, const char* out_dir,
                                 char** result_json, int* stalled);
HD_API hd_status hd_run_identify_file(const char* problem_path,
                                      const char* out_dir, char** result_json,
                                      int* stalled);

/* Assembles and factorizes the scene's global operator once; stats_json
 * receives sizes, ordering name, factor nnz and fill ratio. */
HD_API hd_status hd_factor_stats(const hd_scene* scene, char** stats_json);

#ifdef __cplusplus
}
#endif

#endif /* HETERODYN_H */
