#include "meshloop/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#ifndef MESHLOOP_GIT_DESCRIBE
#define MESHLOOP_GIT_DESCRIBE "unknown"
#endif

namespace meshloop {

namespace fs = std::filesystem;

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return (env && *env) ? fs::path(env) : fs::path("outputs");
}

namespace {

// Relative paths land under the output root; absolute ones must already be
// inside it.
fs::path resolve_output(const fs::path& root, const fs::path& p) {
  if (p.is_relative()) return root / p;
  const auto r = fs::weakly_canonical(fs::absolute(root)).string();
  const auto q = fs::weakly_canonical(p).string();
  if (q.compare(0, r.size(), r) != 0 || (q.size() > r.size() && q[r.size()] != '/'))
    throw InvalidArgument("refusing to write " + p.string() + " outside the output root " + r);
  return p;
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

std::vector<int> read_indices(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<int> out;
  int v;
  while (in >> v) out.push_back(v);
  if (!in.eof()) throw FormatError("expected whitespace-separated integers in " + path.string());
  return out;
}

void write_indices(const std::vector<int>& idx, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (int i : idx) out << i << '\n';
}

}  // namespace

MetricsReport evaluate_mesh(const ExtractedMesh& mesh, const SyntheticScene& data,
                            const EvalSettings& s) {
  MetricsReport r;
  r.mesh_stats.n_vertices = mesh.vertices.size();
  r.mesh_stats.n_faces = mesh.faces.size();
  if (mesh.empty()) return r;
  r.mesh_stats.n_interior_components = interior_components(mesh).n_interior;
  if (!data.gt_samples.empty()) {
    const double thr = s.f1_threshold * data.shape.radius();
    const auto g = evaluate_geometry(mesh, data.gt_samples, thr, s.samples, 0);
    r.chamfer = g.chamfer;
    r.f1 = g.f1;
  }
  std::vector<Camera> train_cams, test_cams;
  std::vector<ColorImage> train_imgs, test_imgs;
  for (std::size_t i = 0; i < data.cameras.size(); ++i) {
    auto& cams = SyntheticScene::is_test_view(i) ? test_cams : train_cams;
    auto& imgs = SyntheticScene::is_test_view(i) ? test_imgs : train_imgs;
    cams.push_back(data.cameras[i]);
    imgs.push_back(data.images[i]);
  }
  if (!train_cams.empty() && !test_cams.empty()) {
    const ColorField field = fit_color_field(mesh, train_cams, train_imgs, s.color);
    r.per_view_psnr = mesh_nvs_psnr(mesh, field, test_cams, test_imgs, data.background);
    double sum = 0;
    for (double p : r.per_view_psnr) sum += p;
    r.mean_psnr = sum / static_cast<double>(r.per_view_psnr.size());
  }
  return r;
}

int cmd_run(const fs::path& config_path,
            const std::vector<std::pair<std::string, std::string>>& overrides, std::ostream& log,
            std::ostream& err) {
  std::string stage = "config";
  try {
    RunConfig cfg = load_config(config_path);
    for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
    cfg.validate();

    const fs::path dir = output_root() / cfg.name;
    fs::create_directories(dir);
    Stopwatch clock;
    nlohmann::ordered_json timings;

    stage = "scene";
    SyntheticOptions sopt;
    sopt.width = cfg.width;
    sopt.height = cfg.height;
    sopt.init_band = cfg.init_band;
    sopt.background = cfg.background;
    const ShapeSpec shape = ShapeSpec::parse(cfg.shape);
    SceneBundle bundle =
        make_synthetic_scene(shape, cfg.n_gaussians, cfg.n_cameras, cfg.train.seed, sopt);
    const fs::path dataset_dir = dir / "dataset";
    save_dataset(bundle.data, dataset_dir);
    timings["scene"] = clock.lap();
    log << "scene: " << bundle.gaussians.size() << " Gaussians, " << bundle.data.cameras.size()
        << " cameras\n";

    stage = "train";
    TrainConfig tcfg = cfg.train;
    if (tcfg.checkpoint_every > 0) {
      tcfg.checkpoint_dir = dir / "checkpoints";
      fs::create_directories(tcfg.checkpoint_dir);
    }
    const int total = tcfg.iters_total;
    const auto observer = [&](int it, const LossBreakdown& t) {
      if (it % 100 == 0 || it + 1 == total)
        log << "iter " << it << " total " << t.total << " l1 " << t.l1 << "\n";
    };
    TrainResult result = train(bundle.gaussians, bundle.data, tcfg, observer);
    timings["train"] = clock.lap();

    stage = "export";
    const fs::path mesh_path = dir / "mesh.ply";
    const fs::path obj_path = dir / "mesh.obj";
    const fs::path scene_path = dir / "scene.gs";
    const fs::path selected_path = dir / "selected.txt";
    const fs::path loss_path = dir / "losses.csv";
    export_mesh(result.mesh, mesh_path, MeshFormat::kPly);
    export_mesh(result.mesh, obj_path, MeshFormat::kObj);
    save_scene(result.scene, scene_path);
    write_indices(result.selected, selected_path);
    write_loss_csv(result.history, loss_path);
    if (cfg.dump_png) {
      const Camera& cam = bundle.data.cameras[0];
      RenderOptions ro = tcfg.render;
      ro.background = bundle.data.background;
      const auto buf = render_gaussians(result.scene, cam, ro);
      write_png(buf.color, dir / "view0_color.png");
      write_png(depth_to_image(buf.depth), dir / "view0_depth.png");
      write_png(normal_to_image(buf.normal), dir / "view0_normal.png");
      const auto mr = rasterize_mesh(result.mesh.vertices, result.mesh.faces, cam);
      write_png(depth_to_image(mr.depth), dir / "view0_mesh_depth.png");
    }
    timings["export"] = clock.lap();

    stage = "metrics";
    const fs::path metrics_path = dir / "metrics.json";
    EvalSettings es;
    es.samples = cfg.eval_samples;
    es.f1_threshold = cfg.f1_threshold;
    es.color = cfg.color;
    // Metrics come from the exported file so that `eval` on it agrees.
    const ExtractedMesh exported = import_mesh(mesh_path);
    const MetricsReport report = evaluate_mesh(exported, bundle.data, es);
    write_metrics_json(report, metrics_path);
    timings["metrics"] = clock.lap();

    nlohmann::ordered_json m;
    m["config"] = to_text(cfg);
    m["seed"] = cfg.train.seed;
    m["git_describe"] = MESHLOOP_GIT_DESCRIBE;
    m["timings_s"] = timings;
    m["outputs"] = {{"mesh", mesh_path.string()},     {"mesh_obj", obj_path.string()},
                    {"scene", scene_path.string()},   {"selected", selected_path.string()},
                    {"losses", loss_path.string()},   {"metrics", metrics_path.string()},
                    {"dataset", dataset_dir.string()}};
    const fs::path manifest_path = dir / "manifest.json";
    std::ofstream mf(manifest_path);
    if (!mf) throw IoError("cannot write " + manifest_path.string());
    mf << m.dump(2) << '\n';
    log << "wrote " << manifest_path.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "run failed at stage '" << stage << "': " << e.what() << "\n";
    return 1;
  }
}

int cmd_eval(const fs::path& mesh_path, const fs::path& scene_dir, const std::string& out_name,
             const EvalSettings& settings, std::ostream& log, std::ostream& err) {
  std::string stage = "load";
  try {
    if (!fs::exists(mesh_path)) throw IoError("mesh not found: " + mesh_path.string());
    if (!fs::is_directory(scene_dir)) throw IoError("scene directory not found: " + scene_dir.string());
    const ExtractedMesh mesh = import_mesh(mesh_path);
    const SyntheticScene data = load_dataset(scene_dir);
    stage = "metrics";
    const MetricsReport report = evaluate_mesh(mesh, data, settings);
    const fs::path dir = output_root() / out_name;
    fs::create_directories(dir);
    write_metrics_json(report, dir / "metrics.json");
    log << "wrote " << (dir / "metrics.json").string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "eval failed at stage '" << stage << "': " << e.what() << "\n";
    return 1;
  }
}

int cmd_export(const fs::path& scene_path, const fs::path& out, const std::string& format,
               const ExportOptions& opt, std::ostream& log, std::ostream& err) {
  std::string stage = "load";
  try {
    const MeshFormat fmt = parse_mesh_format(format);
    const GaussianScene scene = load_scene(scene_path);
    const std::vector<int> selected =
        opt.selected_file.empty() ? all_indices(scene.size()) : read_indices(opt.selected_file);
    stage = "extract";
    const ExtractedMesh mesh = extract_mesh(scene, selected, opt.corner_mult, opt.seed);
    stage = "write";
    const fs::path target = resolve_output(output_root(), out);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    export_mesh(mesh, target, fmt);
    log << "wrote " << target.string() << " (" << mesh.vertices.size() << " vertices, "
        << mesh.faces.size() << " faces)\n";
    return 0;
  } catch (const std::exception& e) {
    err << "export failed at stage '" << stage << "': " << e.what() << "\n";
    return 1;
  }
}

}  // namespace meshloop
