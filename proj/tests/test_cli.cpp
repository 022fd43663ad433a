#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "meshloop/cli.hpp"
#include "meshloop/config.hpp"
#include "mesh_fixtures.hpp"

using namespace meshloop;
namespace fs = std::filesystem;

namespace {

const char* kSmoke = R"(# tiny
name = smoke
shape = sphere:r=1
n_gaussians = 40
n_cameras = 8
width = 24
height = 24
iters_total = 40
iter_mesh_start = 20
delaunay_refresh_every = 10
occupancy_refresh_every = 10
eval_samples = 4000
color_grid = 16
color_iters = 50
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Points MESHLOOP_OUTPUT_ROOT at a fresh directory for the lifetime of the
// object.
struct ScratchRoot {
  fs::path dir;
  explicit ScratchRoot(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    setenv(kOutputRootEnv, dir.c_str(), 1);
  }
  ~ScratchRoot() { fs::remove_all(dir); }
  fs::path write_config(const std::string& text, const std::string& file = "cfg.txt") const {
    std::ofstream(dir / file) << text;
    return dir / file;
  }
};

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_config(std::string(kSmoke) + "lambda_md = 0.1  # trailing comment\nmode = dense\n"
                                "background = 1, 0.5 ,0\nantialias = false\n");
  CHECK(cfg.name == "smoke");
  CHECK(cfg.n_gaussians == 40);
  CHECK(cfg.train.iters_total == 40);
  CHECK(cfg.train.weights.lambda_md == 0.1);
  CHECK(cfg.train.mode == PivotMode::kDense);
  CHECK(cfg.background == Vec3(1, 0.5, 0));
  CHECK_FALSE(cfg.train.antialias);
  CHECK(cfg.train.weights.lambda_rgb == 0.2);  // untouched default
  const auto again = parse_config(to_text(cfg));
  CHECK(to_text(again) == to_text(cfg));
  CHECK(again.background == cfg.background);
}

TEST_CASE("config errors name the line") {
  CHECK_THROWS_WITH_AS(parse_config("n_gaussians = 10\nbogus = 1\n", "x.cfg"),
                       doctest::Contains("x.cfg:2"), InvalidArgument);
  CHECK_THROWS_WITH_AS(parse_config("n_gaussians = ten\n"), doctest::Contains("integer"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("lr_sdf 0.1\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("mode = fancy\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("background = 1,1\n"), InvalidArgument);
  CHECK_THROWS_AS(parse_config("background = 1,1,1,1\n"), InvalidArgument);
  auto cfg = parse_config("background = 2,0,0\n");
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = parse_config("shape = cone\n");
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.txt"), IoError);
}

TEST_CASE("output root follows the environment") {
  setenv(kOutputRootEnv, "/tmp/somewhere", 1);
  CHECK(output_root() == fs::path("/tmp/somewhere"));
  unsetenv(kOutputRootEnv);
  CHECK(output_root() == fs::path("outputs"));
}

TEST_CASE("run: artifacts, manifest, determinism, eval consistency") {
  ScratchRoot root("meshloop_cli_run");
  const auto cfg_path = root.write_config(kSmoke);
  std::ostringstream log, err;
  REQUIRE(cmd_run(cfg_path, {}, log, err) == 0);
  const fs::path dir = root.dir / "smoke";
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  for (const auto& [k, v] : manifest["outputs"].items()) CHECK_MESSAGE(fs::exists(v.get<std::string>()), k);
  CHECK(manifest["seed"] == 0);
  CHECK(parse_config(manifest["config"].get<std::string>()).name == "smoke");
  for (const char* stage : {"scene", "train", "export", "metrics"}) CHECK(manifest["timings_s"].contains(stage));

  const auto metrics = read_metrics_json(dir / "metrics.json");
  REQUIRE(metrics.chamfer.has_value());
  CHECK(metrics.per_view_psnr.size() == 1);  // views 0 of 8 held out
  std::ifstream csv(dir / "losses.csv");
  int lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  CHECK(lines == 41);

  const std::string metrics_a = slurp(dir / "metrics.json"), losses_a = slurp(dir / "losses.csv");
  std::ostringstream log2, err2;
  REQUIRE(cmd_run(cfg_path, {}, log2, err2) == 0);
  CHECK(slurp(dir / "metrics.json") == metrics_a);
  CHECK(slurp(dir / "losses.csv") == losses_a);

  EvalSettings es;
  es.samples = 4000;
  es.color.n_grid = 16;
  es.color.iters = 50;
  REQUIRE(cmd_eval(dir / "mesh.ply", dir / "dataset", "re_eval", es, log, err) == 0);
  const auto again = read_metrics_json(root.dir / "re_eval" / "metrics.json");
  CHECK(again.chamfer == metrics.chamfer);
  CHECK(again.f1 == metrics.f1);
  REQUIRE(cmd_eval(dir / "mesh.obj", dir / "dataset", "re_eval_obj", es, log, err) == 0);
  const auto obj = read_metrics_json(root.dir / "re_eval_obj" / "metrics.json");
  CHECK(*obj.chamfer == doctest::Approx(*metrics.chamfer).epsilon(1e-3));  // float32 vs text

  // Export from the checkpoint with the saved pivot list reproduces the mesh.
  ExportOptions xo;
  xo.selected_file = dir / "selected.txt";
  REQUIRE(cmd_export(dir / "scene.gs", "exported.ply", "ply", xo, log, err) == 0);
  const auto a = import_mesh(dir / "mesh.ply"), b = import_mesh(root.dir / "exported.ply");
  CHECK(a.vertices == b.vertices);
  CHECK(a.faces == b.faces);
  REQUIRE(cmd_export(dir / "scene.gs", root.dir / "sub" / "exported.obj", "obj", xo, log, err) == 0);
  CHECK(fs::exists(root.dir / "sub" / "exported.obj"));
}

TEST_CASE("run: invalid schedule and bad config exit 1") {
  ScratchRoot root("meshloop_cli_bad");
  const auto cfg_path = root.write_config(kSmoke);
  std::ostringstream log, err;
  CHECK(cmd_run(cfg_path, {{"iters_total", "0"}}, log, err) == 1);
  CHECK(err.str().find("invalid schedule") != std::string::npos);
  CHECK(err.str().find("stage 'config'") != std::string::npos);
  std::ostringstream err2;
  CHECK(cmd_run(root.dir / "missing.cfg", {}, log, err2) == 1);
  std::ostringstream err3;
  CHECK(cmd_run(cfg_path, {{"no_such_key", "1"}}, log, err3) == 1);
  CHECK(err3.str().find("no_such_key") != std::string::npos);
}

TEST_CASE("eval and export errors exit 1") {
  ScratchRoot root("meshloop_cli_err");
  std::ostringstream log, err;
  CHECK(cmd_eval(root.dir / "nope.ply", root.dir, "x", EvalSettings{}, log, err) == 1);
  CHECK(err.str().find("mesh not found") != std::string::npos);
  CHECK(cmd_export(root.dir / "nope.gs", "x.ply", "ply", {}, log, err) == 1);
  save_scene(GaussianScene(10), root.dir / "s.gs");
  CHECK(cmd_export(root.dir / "s.gs", "x.stl", "stl", {}, log, err) == 1);
  // Absolute paths outside the output root are refused.
  std::ostringstream err2;
  CHECK(cmd_export(root.dir / "s.gs", "/tmp/meshloop_escape.ply", "ply", {}, log, err2) == 1);
  CHECK(err2.str().find("outside the output root") != std::string::npos);
  CHECK_FALSE(fs::exists("/tmp/meshloop_escape.ply"));
}

TEST_CASE("eroded mesh: recall drops, precision holds") {
  ScratchRoot root("meshloop_cli_erode");
  SyntheticOptions sopt;
  sopt.width = sopt.height = 24;
  sopt.n_gt_samples = 20000;
  const auto bundle = make_synthetic_scene(ShapeSpec::parse("sphere:r=1"), 1, 8, 0, sopt);
  save_dataset(bundle.data, root.dir / "dataset");
  const auto intact = testing_support::uv_sphere(1.0, 48, 96);
  ExtractedMesh eroded;
  eroded.vertices = intact.vertices;
  const Vec3 pole(0, 0, 1);
  for (const auto& f : intact.faces) {
    bool near_pole = false;
    for (int k : f) near_pole = near_pole || (intact.vertices[k] - pole).norm() < 0.1;
    if (!near_pole) eroded.faces.push_back(f);
  }
  REQUIRE(eroded.faces.size() < intact.faces.size());
  const double thr = 0.02;
  // Dense mesh samples so that recall on the intact sphere saturates.
  const auto a = evaluate_geometry(intact, bundle.data.gt_samples, thr, 200000, 0);
  const auto b = evaluate_geometry(eroded, bundle.data.gt_samples, thr, 200000, 0);
  CHECK(b.recall < a.recall);
  CHECK(std::abs(b.precision - a.precision) < 0.01);

  export_mesh(intact, root.dir / "intact.ply", MeshFormat::kPly);
  export_mesh(eroded, root.dir / "eroded.ply", MeshFormat::kPly);
  EvalSettings es;
  es.samples = 200000;
  es.color.n_grid = 16;
  es.color.iters = 20;
  std::ostringstream log, err;
  REQUIRE(cmd_eval(root.dir / "intact.ply", root.dir / "dataset", "intact", es, log, err) == 0);
  REQUIRE(cmd_eval(root.dir / "eroded.ply", root.dir / "dataset", "eroded", es, log, err) == 0);
  CHECK(*read_metrics_json(root.dir / "eroded" / "metrics.json").f1 <
        *read_metrics_json(root.dir / "intact" / "metrics.json").f1);
}
