// Command-line front end: scene simulation, gradient checking, inverse
// problems, and factorization statistics over the shared-library interface.
#include <cstdio>
#include <string>
#include <sys/stat.h>

#include <CLI11.hpp>
#include <heterodyn/heterodyn.h>

namespace {

bool file_exists(const std::string& path) {
  struct stat st {};
  return stat(path.c_str(), &st) == 0;
}

// Loads the scene argument: a JSON file path, or a built-in scene name
// ("two-tet", "cantilever3", "twist-bar", "ball-drop", "resting-box",
// "slab-on-sphere") when no such file exists and the argument looks like a
// bare name.
hd_scene* load_scene_arg(const std::string& arg) {
  if (file_exists(arg)) return hd_scene_load(arg.c_str());
  if (arg.find('/') == std::string::npos &&
      arg.find('.') == std::string::npos) {
    hd_scene* scene = hd_scene_builtin(arg.c_str());
    if (scene != nullptr) return scene;
  }
  std::fprintf(stderr, "error: cannot open scene '%s': %s\n", arg.c_str(),
               hd_last_error());
  return nullptr;
}

void print_owned(char* text) {
  if (text != nullptr) {
    std::printf("%s\n", text);
    hd_string_free(text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heterodyn: differentiable projective-dynamics solver"};
  app.require_subcommand(1);

  std::string scene_arg, out_dir, vars = "q0,v0,f_ext,E", report_path,
                         problem_path;

  CLI::App* simulate =
      app.add_subcommand("simulate", "Roll a scene forward and emit "
                                     "trajectory.jsonl / metrics.csv / "
                                     "summary.json");
  simulate->add_option("scene", scene_arg, "Scene JSON file or built-in name")
      ->required();
  simulate->add_option("-o,--out", out_dir, "Output directory");

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Check adjoint gradients against finite differences");
  gradcheck->add_option("scene", scene_arg, "Scene JSON file or built-in name")
      ->required();
  gradcheck->add_option("--vars", vars,
                        "Comma-separated variables from q0,v0,f_ext,E,w");
  gradcheck->add_option("-o,--out", report_path, "Report JSON path");

  CLI::App* identify = app.add_subcommand(
      "identify", "Solve an inverse problem described by a problem JSON");
  identify->add_option("problem", problem_path, "Problem JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  identify->add_option("-o,--out", out_dir, "Output directory");

  CLI::App* factor_stats = app.add_subcommand(
      "factor-stats", "Assemble and factorize once, print statistics");
  factor_stats
      ->add_option("scene", scene_arg, "Scene JSON file or built-in name")
      ->required();

  CLI11_PARSE(app, argc, argv);

  if (simulate->parsed()) {
    hd_scene* scene = load_scene_arg(scene_arg);
    if (scene == nullptr) return 1;
    char* summary = nullptr;
    const hd_status status =
        hd_run_simulate(scene, out_dir.empty() ? nullptr : out_dir.c_str(),
                        &summary);
    hd_scene_free(scene);
    if (status != HD_OK) {
      std::fprintf(stderr, "error: %s\n", hd_last_error());
      return 1;
    }
    print_owned(summary);
    return 0;
  }

  if (gradcheck->parsed()) {
    hd_scene* scene = load_scene_arg(scene_arg);
    if (scene == nullptr) return 1;
    char* report = nullptr;
    int pass = 0;
    const hd_status status = hd_run_gradcheck(
        scene, vars.c_str(),
        report_path.empty() ? nullptr : report_path.c_str(), &report, &pass);
    hd_scene_free(scene);
    if (status != HD_OK) {
      std::fprintf(stderr, "error: %s\n", hd_last_error());
      return 1;
    }
    print_owned(report);
    if (pass == 0) {
      std::fprintf(stderr, "gradcheck: FAILED tolerance\n");
      return 2;
    }
    return 0;
  }

  if (identify->parsed()) {
    char* result = nullptr;
    int stalled = 0;
    const hd_status status = hd_run_identify_file(
        problem_path.c_str(), out_dir.empty() ? nullptr : out_dir.c_str(),
        &result, &stalled);
    if (status != HD_OK) {
      std::fprintf(stderr, "error: %s\n", hd_last_error());
      return 1;
    }
    print_owned(result);
    if (stalled != 0) {
      std::fprintf(stderr,
                   "identify: optimizer stalled (evaluation budget exhausted "
                   "before convergence); result emitted above\n");
      return 3;
    }
    return 0;
  }

  if (factor_stats->parsed()) {
    hd_scene* scene = load_scene_arg(scene_arg);
    if (scene == nullptr) return 1;
    char* stats = nullptr;
    const hd_status status = hd_factor_stats(scene, &stats);
    hd_scene_free(scene);
    if (status != HD_OK) {
      std::fprintf(stderr, "error: %s\n", hd_last_error());
      return 1;
    }
    print_owned(stats);
    return 0;
  }

  return 1;
}
