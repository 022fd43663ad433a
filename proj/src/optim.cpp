#include "meshloop/optim.hpp"

#include <cstdio>
#include <fstream>

namespace meshloop {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st, double lr,
               const std::string& group, const AdamOptions& opt) {
  if (params.size() != grads.size())
    throw InvalidArgument("adam_step(" + group + "): " + std::to_string(params.size()) +
                          " params vs " + std::to_string(grads.size()) + " grads");
  if (st.m.size() != params.size()) st.reset(params.size());
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw NumericalError("non-finite gradient in parameter group '" + group + "' at index " +
                           std::to_string(i));
  ++st.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = opt.beta1 * st.m[i] + (1 - opt.beta1) * grads[i];
    st.v[i] = opt.beta2 * st.v[i] + (1 - opt.beta2) * grads[i] * grads[i];
    const double mh = st.m[i] / c1, vh = st.v[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + opt.eps);
  }
}

void TrainConfig::validate() const {
  if (iters_total < 1 || iter_mesh_start < 0 || iter_mesh_start > iters_total)
    throw InvalidArgument("invalid schedule: need iters_total >= 1 and 0 <= iter_mesh_start <= "
                          "iters_total (got iters_total=" + std::to_string(iters_total) +
                          ", iter_mesh_start=" + std::to_string(iter_mesh_start) + ")");
  if (delaunay_refresh_every < 1 || occupancy_refresh_every < 1)
    throw InvalidArgument("invalid schedule: refresh cadences must be >= 1");
  require(pivot_budget >= 0, "pivot_budget must be >= 0");
  require(corner_mult > 0, "corner_mult must be positive");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(lr.position >= 0 && lr.position_final >= 0 && lr.scale >= 0 && lr.rotation >= 0 &&
              lr.opacity >= 0 && lr.color >= 0 && lr.sdf >= 0,
          "learning rates must be >= 0");
  weights.validate();
}

namespace {

void add_site_gradient(const GaussianScene& scene, const PivotSet& pivots,
                       std::span<const Vec3> grad_sites, std::span<const double> grad_f,
                       const std::vector<double>& f, double corner_mult, SceneGrad& grad) {
  for (std::size_t s = 0; s < pivots.size(); ++s) {
    const auto& ref = pivots.provenance[s];
    if (!grad_sites[s].isZero()) {
      const PivotJacobian j = pivot_jacobian(scene[ref.gaussian], ref.corner, corner_mult);
      const Eigen::Matrix<double, 10, 1> g = j.transpose() * grad_sites[s];
      grad[ref.gaussian].mu += g.segment<3>(0);
      grad[ref.gaussian].quat += g.segment<4>(3);
      grad[ref.gaussian].log_scale += g.segment<3>(7);
    }
    grad[ref.gaussian].sdf_pre[ref.corner] += grad_f[s] * (1.0 - f[s] * f[s]);
  }
}

}  // namespace

StepResult loss_and_gradient(const GaussianScene& scene, const StepContext& ctx) {
  require(ctx.camera && ctx.target, "loss_and_gradient needs a camera and a target image");
  const Camera& cam = *ctx.camera;
  const LossWeights& w = ctx.weights;
  StepResult r;
  r.grad.assign(scene.size(), GaussianGrad{});

  const RenderBuffers buf = render_gaussians(scene, cam, ctx.render);
  const PhotometricLoss photo = loss_photometric(buf.color, *ctx.target, w.lambda_rgb);
  r.terms.l1 = photo.l1;
  r.terms.dssim = photo.dssim;
  r.terms.photometric = photo.value;

  RenderGradIn up;
  up.color = photo.grad;
  up.normal = NormalMap(cam.width, cam.height, Vec3::Zero());
  DepthMap g_depth(cam.width, cam.height, 0.0);
  NormalMap g_ntilde(cam.width, cam.height, Vec3::Zero());
  const bool need_ntilde = ctx.normal_loss || ctx.mesh_losses;
  NormalMap ntilde;
  if (need_ntilde) ntilde = depth_to_normal(buf.depth, cam);

  if (ctx.normal_loss) {
    const NormalLoss nl = loss_normal_consistency(buf.normal, ntilde);
    r.terms.normal = nl.value;
    for (std::size_t i = 0; i < up.normal.size(); ++i) {
      up.normal[i] += w.lambda_n * nl.grad_a[i];
      g_ntilde[i] += w.lambda_n * nl.grad_b[i];
    }
  }

  if (ctx.mesh_losses) {
    require(!ctx.selected.empty(), "mesh losses need selected Gaussians");
    r.pivots = sample_pivots(scene, ctx.selected, ctx.corner_mult);
    const std::size_t ns = r.pivots.size();
    std::vector<double> f(ns);
    for (std::size_t s = 0; s < ns; ++s) {
      const auto& ref = r.pivots.provenance[s];
      f[s] = scene[ref.gaussian].sdf(ref.corner);
    }
    r.mesh = marching_tetrahedra(ctx.tets, r.pivots.sites, f);

    const SdfLoss er = loss_erosion(scene, ctx.selected);
    r.terms.erosion = er.value;
    for (std::size_t j = 0; j < ctx.selected.size(); ++j)
      r.grad[ctx.selected[j]].sdf_pre[0] += w.lambda_erosion * er.grad_pre[j];
    if (ctx.occupancy && ctx.occupancy->o.size() == ns) {
      const SdfLoss li = loss_interior(scene, r.pivots, *ctx.occupancy);
      r.terms.interior = li.value;
      for (std::size_t s = 0; s < ns; ++s) {
        const auto& ref = r.pivots.provenance[s];
        r.grad[ref.gaussian].sdf_pre[ref.corner] += w.lambda_interior * li.grad_pre[s];
      }
    }

    if (!r.mesh.empty()) {
      const MeshRender mr = rasterize_mesh(r.mesh.vertices, r.mesh.faces, cam);
      const DepthMap dm = ctx.antialias ? antialias_depth(mr.depth) : mr.depth;
      const DepthLoss md = loss_mesh_depth(buf.depth, dm, ctx.depth_cap);
      r.terms.mesh_depth = md.value;
      DepthMap g_dm(cam.width, cam.height, 0.0);
      for (std::size_t i = 0; i < g_dm.size(); ++i) {
        g_depth[i] += w.lambda_md * md.grad_d[i];
        g_dm[i] = w.lambda_md * md.grad_dm[i];
      }
      if (ctx.antialias) g_dm = antialias_depth_backward(mr.depth, g_dm);

      const NormalLoss mn = loss_mesh_normal(ntilde, mr.normal);
      r.terms.mesh_normal = mn.value;
      NormalMap g_nm(cam.width, cam.height, Vec3::Zero());
      for (std::size_t i = 0; i < g_nm.size(); ++i) {
        g_ntilde[i] += w.lambda_mn * mn.grad_a[i];
        g_nm[i] = w.lambda_mn * mn.grad_b[i];
      }
      const auto gv = rasterize_mesh_backward(r.mesh.vertices, r.mesh.faces, cam, mr, g_dm, g_nm);
      std::vector<Vec3> g_sites(ns, Vec3::Zero());
      std::vector<double> g_f(ns, 0.0);
      mt_backward(r.mesh, r.pivots.sites, f, gv, g_sites, g_f);
      add_site_gradient(scene, r.pivots, g_sites, g_f, f, ctx.corner_mult, r.grad);
    }
  }

  if (need_ntilde) {
    const DepthMap gd = depth_to_normal_backward(buf.depth, cam, g_ntilde);
    for (std::size_t i = 0; i < g_depth.size(); ++i) g_depth[i] += gd[i];
  }
  up.depth = std::move(g_depth);
  const SceneGrad gr = render_gaussians_backward(scene, cam, up, ctx.render);
  for (std::size_t k = 0; k < scene.size(); ++k) r.grad[k] += gr[k];
  combine_losses(r.terms, w);
  return r;
}

ExtractedMesh extract_mesh(const GaussianScene& scene, std::span<const int> selected,
                           double corner_mult, std::uint64_t seed, PivotSet* pivots_out,
                           std::vector<Tet>* tets_out) {
  PivotSet pivots = sample_pivots(scene, selected, corner_mult);
  const Tetrahedralization tri = triangulate(pivots.sites, seed);
  std::vector<double> f(pivots.size());
  for (std::size_t s = 0; s < f.size(); ++s) {
    const auto& ref = pivots.provenance[s];
    f[s] = scene[ref.gaussian].sdf(ref.corner);
  }
  ExtractedMesh mesh = marching_tetrahedra(tri.tets, pivots.sites, f);
  if (pivots_out) *pivots_out = std::move(pivots);
  if (tets_out) *tets_out = tri.tets;
  return mesh;
}

double positive_center_fraction(const GaussianScene& scene, std::span<const int> selected) {
  if (selected.empty()) return 0.0;
  int n = 0;
  for (int k : selected) n += scene[k].sdf(0) > 0;
  return static_cast<double>(n) / static_cast<double>(selected.size());
}

namespace {

struct Optimizer {
  AdamState position, rotation, scale, opacity, color, sdf;

  void reset() { *this = Optimizer{}; }

  void step(GaussianScene& scene, const SceneGrad& grad, const LearningRates& lr,
            double position_lr, bool with_sdf) {
    const std::size_t n = scene.size();
    std::vector<double> p, g;
    auto run = [&](AdamState& st, double rate, const char* name, int width, auto get) {
      p.assign(n * width, 0.0);
      g.assign(n * width, 0.0);
      for (std::size_t k = 0; k < n; ++k)
        for (int c = 0; c < width; ++c) {
          auto [param, gradient] = get(k, c);
          p[k * width + c] = *param;
          g[k * width + c] = gradient;
        }
      adam_step(p, g, st, rate, name);
      for (std::size_t k = 0; k < n; ++k)
        for (int c = 0; c < width; ++c) *get(k, c).first = p[k * width + c];
    };
    run(position, position_lr, "position", 3, [&](std::size_t k, int c) {
      return std::pair<double*, double>{&scene[k].mu[c], grad[k].mu[c]};
    });
    run(rotation, lr.rotation, "rotation", 4, [&](std::size_t k, int c) {
      return std::pair<double*, double>{&scene[k].quat[c], grad[k].quat[c]};
    });
    run(scale, lr.scale, "scale", 3, [&](std::size_t k, int c) {
      return std::pair<double*, double>{&scene[k].log_scale[c], grad[k].log_scale[c]};
    });
    run(opacity, lr.opacity, "opacity", 1, [&](std::size_t k, int) {
      return std::pair<double*, double>{&scene[k].logit_opacity, grad[k].logit_opacity};
    });
    run(color, lr.color, "color", 3, [&](std::size_t k, int c) {
      return std::pair<double*, double>{&scene[k].color[c], grad[k].color[c]};
    });
    if (with_sdf)
      run(sdf, lr.sdf, "sdf", kSitesPerGaussian, [&](std::size_t k, int c) {
        return std::pair<double*, double>{&scene[k].sdf_pre[c], grad[k].sdf_pre[c]};
      });
    for (auto& gs : scene) {
      gs.quat.normalize();
      gs.color = gs.color.cwiseMax(0.0).cwiseMin(1.0);
    }
  }
};

// Importance-based pivot selection, pruning in base mode, and SDF init.
void enter_mesh_phase(GaussianScene& scene, const SyntheticScene& data,
                      const std::vector<Camera>& cams, const TrainConfig& cfg,
                      std::vector<int>& selected) {
  const int budget = cfg.pivot_budget > 0 ? std::min<int>(cfg.pivot_budget, scene.size())
                                          : static_cast<int>(scene.size());
  const auto scores = compute_importance(scene, cams, cfg.render);
  selected = select_pivot_gaussians(scores, budget, cfg.seed ^ 0x51ec7ed5ULL);
  if (cfg.mode == PivotMode::kBase) {
    scene = prune_scene(scene, selected);
    selected = all_indices(scene.size());
  }
  const PivotSet pivots = sample_pivots(scene, selected, cfg.corner_mult);
  const auto pre = init_sdf(scene, pivots, cams, data.truncation(), cfg.render);
  for (std::size_t s = 0; s < pivots.size(); ++s) {
    const auto& ref = pivots.provenance[s];
    scene[ref.gaussian].sdf_pre[ref.corner] = pre[s];
  }
}

}  // namespace

TrainResult train(GaussianScene scene, const SyntheticScene& data, const TrainConfig& cfg,
                  const TrainObserver& observer) {
  cfg.validate();
  if (data.cameras.size() < 2) throw InvalidArgument("training needs at least 2 cameras");
  require(data.images.size() == data.cameras.size(), "one image per camera required");
  require(!scene.empty(), "training needs at least one Gaussian");
  const auto train_ids = data.train_views();
  require(!train_ids.empty(), "no training views");
  std::vector<Camera> cams;
  for (auto i : train_ids) cams.push_back(data.cameras[i]);

  const double diag = data.bbox_diagonal();
  const double lr_pos0 = cfg.lr.position * diag, lr_pos1 = cfg.lr.position_final * diag;
  Optimizer opt;
  TrainResult res;
  std::vector<int>& selected = res.selected;
  std::vector<Tet> tets;
  bool mesh_phase = false;

  for (int it = 0; it < cfg.iters_total; ++it) {
    if (it == cfg.iter_mesh_start) {
      enter_mesh_phase(scene, data, cams, cfg, selected);
      if (cfg.mode == PivotMode::kBase) opt.reset();
      mesh_phase = true;
    }
    if (mesh_phase) {
      const int local = it - cfg.iter_mesh_start;
      if (local % cfg.delaunay_refresh_every == 0) {
        const PivotSet pv = sample_pivots(scene, selected, cfg.corner_mult);
        tets = triangulate(pv.sites, cfg.seed).tets;
      }
      if (local % cfg.occupancy_refresh_every == 0) {
        PivotSet pv = sample_pivots(scene, selected, cfg.corner_mult);
        std::vector<double> f(pv.size());
        for (std::size_t s = 0; s < f.size(); ++s)
          f[s] = scene[pv.provenance[s].gaussian].sdf(pv.provenance[s].corner);
        const auto mesh = marching_tetrahedra(tets, pv.sites, f);
        res.occupancy = compute_occupancy(mesh, cams, pv.sites, diag, it);
      }
    }

    const std::size_t view = train_ids[static_cast<std::size_t>(it) % train_ids.size()];
    StepContext ctx;
    ctx.camera = &data.cameras[view];
    ctx.target = &data.images[view];
    ctx.weights = cfg.weights;
    ctx.render = cfg.render;
    ctx.render.background = data.background;
    ctx.normal_loss = it >= cfg.normal_start() && cfg.weights.lambda_n > 0;
    ctx.mesh_losses = mesh_phase;
    ctx.selected = selected;
    ctx.tets = tets;
    ctx.occupancy = &res.occupancy;
    ctx.corner_mult = cfg.corner_mult;
    ctx.depth_cap = diag;
    ctx.antialias = cfg.antialias;
    const StepResult step = loss_and_gradient(scene, ctx);
    res.history.push_back({it, step.terms});
    if (observer) observer(it, step.terms);

    const double s = cfg.iters_total > 1 ? static_cast<double>(it) / (cfg.iters_total - 1) : 0.0;
    const double lr_pos = lr_pos0 > 0 && lr_pos1 > 0
                              ? std::exp((1 - s) * std::log(lr_pos0) + s * std::log(lr_pos1))
                              : (1 - s) * lr_pos0 + s * lr_pos1;
    opt.step(scene, step.grad, cfg.lr, lr_pos, mesh_phase);

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
        (it + 1) % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "iter_%06d", it + 1);
      save_scene(scene, cfg.checkpoint_dir / (std::string(name) + ".gs"));
      if (mesh_phase) {
        const auto mesh = extract_mesh(scene, selected, cfg.corner_mult, cfg.seed);
        export_mesh(mesh, cfg.checkpoint_dir / (std::string(name) + ".ply"), MeshFormat::kPly);
      }
    }
  }

  if (!mesh_phase) enter_mesh_phase(scene, data, cams, cfg, selected);
  res.mesh = extract_mesh(scene, selected, cfg.corner_mult, cfg.seed, &res.pivots);
  res.scene = std::move(scene);
  return res;
}

void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "iter,l1,dssim,normal,mesh_depth,mesh_normal,erosion,interior,total\n";
  char line[512];
  for (const auto& r : history) {
    const auto& t = r.terms;
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.iter, t.l1, t.dssim, t.normal, t.mesh_depth, t.mesh_normal, t.erosion,
                  t.interior, t.total);
    out << line;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace meshloop
