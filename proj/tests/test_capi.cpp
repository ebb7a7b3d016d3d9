#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "heterodyn/heterodyn.h"
#include "scene.hpp"

using nlohmann::json;

namespace {

std::filesystem::path temp_dir(const char* tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   (std::string("heterodyn_capi_") + tag);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("error surface starts clean") {
  REQUIRE(hd_last_error() != nullptr);
  CHECK(std::string(hd_last_error()).empty());
  CHECK(hd_last_error_code() == HD_OK);
  hd_string_free(nullptr);  // documented no-op
}

TEST_CASE("builtin scene handles expose counts and reject junk") {
  hd_scene* scene = hd_scene_builtin("two-tet");
  REQUIRE(scene != nullptr);
  CHECK(hd_scene_vertex_count(scene) == 5);
  CHECK(hd_scene_element_count(scene) == 2);
  CHECK(hd_scene_frame_count(scene) == 3);
  CHECK(std::string(hd_scene_name(scene)) == "two-tet");
  hd_scene_free(scene);

  CHECK(hd_scene_builtin("no-such-scene") == nullptr);
  CHECK(hd_last_error_code() == HD_ERR_VALIDATION);
  CHECK_FALSE(std::string(hd_last_error()).empty());

  CHECK(hd_scene_builtin(nullptr) == nullptr);
  CHECK(hd_last_error_code() == HD_ERR_INVALID_ARGUMENT);

  // NULL-handle queries degrade to zeros rather than crashing.
  CHECK(hd_scene_vertex_count(nullptr) == 0);
  CHECK(hd_scene_element_count(nullptr) == 0);
  CHECK(hd_scene_frame_count(nullptr) == 0);
}

TEST_CASE("scene parsing and file loading through the C surface") {
  const char* doc = R"({
    "mesh": {"grid": {"dims": [1, 1, 1], "spacing": 0.1}},
    "material": {"young": 5e4, "poisson": 0.4},
    "frames": 2
  })";
  hd_scene* parsed = hd_scene_parse(doc);
  REQUIRE(parsed != nullptr);
  CHECK(hd_scene_vertex_count(parsed) == 8);
  CHECK(hd_scene_element_count(parsed) == 6);
  CHECK(hd_scene_frame_count(parsed) == 2);
  hd_scene_free(parsed);

  CHECK(hd_scene_parse("{ not json") == nullptr);
  CHECK(hd_last_error_code() == HD_ERR_PARSE);
  CHECK(hd_scene_parse(nullptr) == nullptr);
  CHECK(hd_last_error_code() == HD_ERR_INVALID_ARGUMENT);

  CHECK(hd_scene_load("/nonexistent/path/scene.json") == nullptr);
  CHECK(hd_last_error_code() == HD_ERR_IO);

  const auto dir = temp_dir("load");
  const auto path = dir / "scene.json";
  std::ofstream(path) << doc;
  hd_scene* loaded = hd_scene_load(path.string().c_str());
  REQUIRE(loaded != nullptr);
  CHECK(hd_scene_vertex_count(loaded) == 8);
  hd_scene_free(loaded);
}

TEST_CASE("simulation stepping matches the in-process solver") {
  hd_scene* scene = hd_scene_builtin("two-tet");
  REQUIRE(scene != nullptr);
  hd_sim* sim = hd_sim_create(scene);
  REQUIRE(sim != nullptr);

  const int dofs = hd_sim_dof_count(sim);
  CHECK(dofs == 15);
  CHECK(hd_sim_time(sim) == 0.0);
  CHECK(hd_sim_last_iterations(sim) == 0);
  CHECK(hd_sim_last_converged(sim) == 0);
  CHECK(hd_sim_last_contact_count(sim) == 0);

  // Reference run with the library internals.
  heterodyn::SceneSpec spec = heterodyn::builtin_scene("two-tet");
  heterodyn::GlobalSystem system;
  heterodyn::SimState state;
  state.q = spec.q0;
  state.v = spec.v0;
  const heterodyn::VecX f_ext = heterodyn::scene_external_force(spec);

  std::vector<double> qs(dofs), vs(dofs);
  CHECK(hd_sim_positions(sim, qs.data(), qs.size()) == HD_OK);
  for (int i = 0; i < dofs; ++i) CHECK(qs[i] == spec.q0[i]);

  heterodyn::ForwardCache cache;
  for (int stepped = 1; stepped <= 3; ++stepped) {
    REQUIRE(hd_sim_step(sim) == HD_OK);
    cache = heterodyn::forward_step(spec.mesh, spec.material, system,
                                    spec.solver, spec.obstacles,
                                    spec.fixed_vertices, state, f_ext,
                                    nullptr);
    CHECK(hd_sim_time(sim) ==
          doctest::Approx(stepped * spec.solver.h).epsilon(1e-12));
    REQUIRE(hd_sim_positions(sim, qs.data(), qs.size()) == HD_OK);
    REQUIRE(hd_sim_velocities(sim, vs.data(), vs.size()) == HD_OK);
    for (int i = 0; i < dofs; ++i) {
      CHECK(qs[i] == doctest::Approx(state.q[i]).epsilon(1e-12));
      CHECK(vs[i] == doctest::Approx(state.v[i]).epsilon(1e-12));
    }
    CHECK(hd_sim_last_iterations(sim) == cache.iteration_count);
    CHECK(hd_sim_last_converged(sim) == (cache.converged ? 1 : 0));
    CHECK(hd_sim_last_contact_count(sim) == cache.contacts.normal_count());
  }

  hd_sim_free(sim);
  hd_scene_free(scene);
}

TEST_CASE("capacity and argument validation on the sim surface") {
  hd_scene* scene = hd_scene_builtin("two-tet");
  REQUIRE(scene != nullptr);
  hd_sim* sim = hd_sim_create(scene);
  REQUIRE(sim != nullptr);
  const int dofs = hd_sim_dof_count(sim);

  std::vector<double> buf(dofs);
  CHECK(hd_sim_positions(sim, buf.data(), dofs - 1) ==
        HD_ERR_INVALID_ARGUMENT);
  CHECK(hd_sim_velocities(sim, buf.data(), 0) == HD_ERR_INVALID_ARGUMENT);
  CHECK(hd_sim_positions(sim, nullptr, dofs) == HD_ERR_INVALID_ARGUMENT);
  CHECK(hd_sim_positions(nullptr, buf.data(), dofs) ==
        HD_ERR_INVALID_ARGUMENT);
  CHECK(hd_sim_step(nullptr) == HD_ERR_INVALID_ARGUMENT);
  CHECK(hd_sim_create(nullptr) == nullptr);
  CHECK(hd_last_error_code() == HD_ERR_INVALID_ARGUMENT);

  hd_sim_free(sim);
  hd_scene_free(scene);
}

TEST_CASE("gradient-check driver reports and passes on the smallest scene") {
  hd_scene* scene = hd_scene_builtin("two-tet");
  REQUIRE(scene != nullptr);

  const auto dir = temp_dir("gradcheck");
  const auto out = dir / "report.json";
  char* report = nullptr;
  int pass = -1;
  const hd_status st = hd_run_gradcheck(scene, "q0,v0", out.string().c_str(),
                                        &report, &pass);
  REQUIRE(st == HD_OK);
  REQUIRE(report != nullptr);
  CHECK(pass == 1);

  const json j = json::parse(report);
  hd_string_free(report);
  CHECK(j.at("pass").get<bool>());
  CHECK(j.at("fd_check").at("max_rel_err").get<double>() <= 2e-3);
  const auto vars = j.at("vars").get<std::vector<std::string>>();
  REQUIRE(vars.size() == 2);
  CHECK(vars[0] == "q0");
  CHECK(vars[1] == "v0");

  std::ifstream in(out);
  REQUIRE(bool(in));
  const json file_j = json::parse(in);
  CHECK(file_j.at("pass").get<bool>());

  // Unknown variable names are rejected.
  char* bad_report = nullptr;
  CHECK(hd_run_gradcheck(scene, "q0,bogus", nullptr, &bad_report, nullptr) ==
        HD_ERR_VALIDATION);
  CHECK(bad_report == nullptr);

  hd_scene_free(scene);
}

TEST_CASE("simulate driver writes a parsable trajectory bundle") {
  hd_scene* scene = hd_scene_builtin("two-tet");
  REQUIRE(scene != nullptr);
  const auto dir = temp_dir("simulate");

  char* summary = nullptr;
  REQUIRE(hd_run_simulate(scene, dir.string().c_str(), &summary) == HD_OK);
  REQUIRE(summary != nullptr);
  const json s = json::parse(summary);
  hd_string_free(summary);
  CHECK(s.at("frames").get<int>() == 3);
  CHECK(s.at("all_converged").get<bool>());
  CHECK(s.at("iterations").size() == 3);
  CHECK(s.at("refactorizations").get<int>() >= 1);

  std::ifstream traj(dir / "trajectory.jsonl");
  REQUIRE(bool(traj));
  int lines = 0;
  std::string line;
  while (std::getline(traj, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    CHECK(rec.contains("time"));
    CHECK(rec.at("q").size() == 15);
    CHECK(rec.at("v").size() == 15);
    CHECK(rec.contains("iterations"));
    CHECK(rec.contains("converged"));
    CHECK(rec.contains("contact_count"));
    ++lines;
  }
  CHECK(lines == 3);

  std::ifstream metrics(dir / "metrics.csv");
  REQUIRE(bool(metrics));
  int csv_rows = 0;
  while (std::getline(metrics, line)) {
    if (!line.empty()) ++csv_rows;
  }
  CHECK(csv_rows == 4);  // header + one row per frame

  std::ifstream sum_file(dir / "summary.json");
  REQUIRE(bool(sum_file));
  CHECK(json::parse(sum_file).at("frames").get<int>() == 3);

  hd_scene_free(scene);
}

TEST_CASE("identify driver recovers a uniform initial velocity") {
  const std::string problem = R"({
    "scene": {"mesh": {"generator": "two-tet"}},
    "design": {"variable": "v0", "initial": [0, 0, 0]},
    "true": [0.3, -0.1, 0.2],
    "loss": {"kind": "trajectory"},
    "optimizer": {"max_evals": 60, "grad_tol": 1e-12}
  })";
  const auto dir = temp_dir("identify");

  char* result = nullptr;
  int stalled = -1;
  REQUIRE(hd_run_identify(problem.c_str(), dir.string().c_str(), &result,
                          &stalled) == HD_OK);
  REQUIRE(result != nullptr);
  CHECK(stalled == 0);

  const json r = json::parse(result);
  hd_string_free(result);
  CHECK(r.at("variable").get<std::string>() == "v0");
  const auto recovered = r.at("recovered").get<std::vector<double>>();
  REQUIRE(recovered.size() == 3);
  const double truth[3] = {0.3, -0.1, 0.2};
  for (int i = 0; i < 3; ++i) {
    CHECK(std::abs(recovered[i] - truth[i]) <= 1e-5);
  }
  CHECK(r.at("converged").get<bool>());
  // The initial-velocity design never touches the material, so the factor
  // is built exactly once across the whole optimization.
  CHECK(r.at("factorizations").get<int>() == 1);
  CHECK(r.at("material_updates").get<int>() == 1);
  CHECK(r.at("evaluations").get<int>() <= 60);

  std::ifstream res_file(dir / "result.json");
  REQUIRE(bool(res_file));
  CHECK(json::parse(res_file).at("variable").get<std::string>() == "v0");
  std::ifstream curve(dir / "loss_curve.csv");
  REQUIRE(bool(curve));

  // Malformed problem documents surface as parse errors.
  char* junk = nullptr;
  CHECK(hd_run_identify("{ nope", nullptr, &junk, nullptr) == HD_ERR_PARSE);
  CHECK(junk == nullptr);
}

TEST_CASE("factor stats summarize the assembled operator") {
  hd_scene* scene = hd_scene_builtin("two-tet");
  REQUIRE(scene != nullptr);
  char* stats = nullptr;
  REQUIRE(hd_factor_stats(scene, &stats) == HD_OK);
  REQUIRE(stats != nullptr);
  const json j = json::parse(stats);
  hd_string_free(stats);
  CHECK(j.at("vertices").get<int>() == 5);
  CHECK(j.at("elements").get<int>() == 2);
  CHECK(j.at("dofs").get<int>() == 15);
  CHECK(j.at("free_vertices").get<int>() == 5);
  CHECK(j.at("fixed_vertices").get<int>() == 0);
  CHECK_FALSE(j.at("ordering").get<std::string>().empty());
  CHECK(j.at("factor_nnz").get<int>() >= 5);
  CHECK(j.at("factor_fill_ratio").get<double>() > 0.0);
  CHECK(j.at("weight_contrast").get<double>() >= 1.0);
  CHECK(j.at("refactorizations").get<int>() >= 1);
  hd_scene_free(scene);

  CHECK(hd_factor_stats(nullptr, &stats) == HD_ERR_INVALID_ARGUMENT);
}
