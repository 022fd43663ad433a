#include "meshloop/eval.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "meshloop/kdtree.hpp"
#include "meshloop/optim.hpp"

namespace meshloop {

std::vector<Vec3> sample_mesh(const ExtractedMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.faces.empty()) throw InvalidArgument("cannot sample an empty mesh");
  std::vector<double> cdf(mesh.faces.size());
  double total = 0;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    const auto& f = mesh.faces[i];
    total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
    cdf[i] = total;
  }
  if (!(total > 0)) throw InvalidArgument("mesh has zero area");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<Vec3> out(n);
  for (auto& p : out) {
    const double r = uni(rng) * total;
    std::size_t i = std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin();
    i = std::min(i, cdf.size() - 1);
    const auto& f = mesh.faces[i];
    const double s = std::sqrt(uni(rng)), t = uni(rng);
    p = (1 - s) * mesh.vertices[f[0]] + s * (1 - t) * mesh.vertices[f[1]] +
        s * t * mesh.vertices[f[2]];
  }
  return out;
}

GeometryMetrics compare_point_sets(std::span<const Vec3> pred, std::span<const Vec3> gt,
                                   double threshold) {
  if (pred.empty() || gt.empty()) throw InvalidArgument("point sets must be nonempty");
  require(threshold > 0, "F1 threshold must be positive");
  const KdTree tree_gt(std::vector<Vec3>(gt.begin(), gt.end()));
  const KdTree tree_pred(std::vector<Vec3>(pred.begin(), pred.end()));
  GeometryMetrics m;
  std::size_t hit_p = 0, hit_r = 0;
  for (const auto& p : pred) {
    const double d = tree_gt.nearest_distance(p);
    m.accuracy += d;
    hit_p += d <= threshold;
  }
  for (const auto& q : gt) {
    const double d = tree_pred.nearest_distance(q);
    m.completeness += d;
    hit_r += d <= threshold;
  }
  m.accuracy /= static_cast<double>(pred.size());
  m.completeness /= static_cast<double>(gt.size());
  m.chamfer = 0.5 * (m.accuracy + m.completeness);
  m.precision = static_cast<double>(hit_p) / static_cast<double>(pred.size());
  m.recall = static_cast<double>(hit_r) / static_cast<double>(gt.size());
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

GeometryMetrics evaluate_geometry(const ExtractedMesh& mesh, std::span<const Vec3> gt,
                                  double threshold, std::size_t n_samples, std::uint64_t seed) {
  if (gt.empty()) throw InvalidArgument("ground-truth point cloud is empty");
  const auto samples = sample_mesh(mesh, n_samples, seed);
  return compare_point_sets(samples, gt, threshold);
}

double chamfer(const ExtractedMesh& mesh, std::span<const Vec3> gt, std::size_t n_samples,
               std::uint64_t seed) {
  return evaluate_geometry(mesh, gt, 1.0, n_samples, seed).chamfer;
}

double f1_score(const ExtractedMesh& mesh, std::span<const Vec3> gt, double threshold,
                std::size_t n_samples, std::uint64_t seed) {
  require(threshold > 0, "F1 threshold must be positive");
  return evaluate_geometry(mesh, gt, threshold, n_samples, seed).f1;
}

// --- color field ---------------------------------------------------------------

ColorField::ColorField(int n, const Vec3& lo, const Vec3& hi) : n_(n), lo_(lo), hi_(hi) {
  require(n >= 2, "color grid resolution must be >= 2");
  require((hi.array() > lo.array()).all(), "color grid box is empty");
  grid_.assign(static_cast<std::size_t>(n) * n * n, Vec3::Constant(0.5));
}

void ColorField::stencil(const Vec3& p, std::array<std::size_t, 8>& idx,
                         std::array<double, 8>& w) const {
  const Vec3 u = ((p - lo_).cwiseQuotient(hi_ - lo_) * (n_ - 1)).cwiseMax(0.0).cwiseMin(n_ - 1.0);
  int i0[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    i0[a] = std::min(static_cast<int>(u[a]), n_ - 2);
    t[a] = u[a] - i0[a];
  }
  for (int c = 0; c < 8; ++c) {
    const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
    idx[c] = index(i0[0] + di, i0[1] + dj, i0[2] + dk);
    w[c] = (di ? t[0] : 1 - t[0]) * (dj ? t[1] : 1 - t[1]) * (dk ? t[2] : 1 - t[2]);
  }
}

Vec3 ColorField::query(const Vec3& p) const {
  std::array<std::size_t, 8> idx;
  std::array<double, 8> w;
  stencil(p, idx, w);
  Vec3 c = Vec3::Zero();
  for (int i = 0; i < 8; ++i) c += w[i] * grid_[idx[i]];
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

namespace {

Vec3 surface_point(const Camera& cam, int x, int y, double depth) {
  return cam.to_world(depth * cam.ray(x + 0.5, y + 0.5));
}

}  // namespace

ColorField fit_color_field(const ExtractedMesh& mesh, std::span<const Camera> cameras,
                           std::span<const ColorImage> images, const ColorFieldOptions& opt) {
  require(!cameras.empty(), "color field needs at least one training view");
  require(cameras.size() == images.size(), "one image per camera required");
  std::vector<Vec3> pts, colors;
  for (std::size_t v = 0; v < cameras.size(); ++v) {
    const auto r = rasterize_mesh(mesh.vertices, mesh.faces, cameras[v]);
    for (int y = 0; y < cameras[v].height; ++y)
      for (int x = 0; x < cameras[v].width; ++x) {
        if (is_background_depth(r.depth(x, y))) continue;
        pts.push_back(surface_point(cameras[v], x, y, r.depth(x, y)));
        colors.push_back(images[v](x, y));
      }
  }
  if (pts.empty()) throw InvalidArgument("no training pixel hits the mesh");
  BoundingBox box;
  for (const auto& v : mesh.vertices) box.extend(v);
  for (const auto& p : pts) box.extend(p);
  const Vec3 pad = Vec3::Constant(0.02 * std::max(box.diagonal(), 1e-9));
  ColorField field(opt.n_grid, box.lo - pad, box.hi + pad);

  std::vector<std::array<std::size_t, 8>> idx(pts.size());
  std::vector<std::array<double, 8>> wts(pts.size());
  std::vector<std::size_t> slot(field.data().size(), SIZE_MAX);
  std::vector<std::size_t> observed;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    field.stencil(pts[i], idx[i], wts[i]);
    for (auto& j : idx[i]) {
      if (slot[j] == SIZE_MAX) {
        slot[j] = observed.size();
        observed.push_back(j);
      }
      j = slot[j];
    }
  }
  const std::size_t m = observed.size();
  std::vector<double> params(3 * m, 0.5), grads(3 * m);
  AdamState state;
  const double inv = 1.0 / static_cast<double>(pts.size());
  for (int it = 0; it < opt.iters; ++it) {
    std::fill(grads.begin(), grads.end(), 0.0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Vec3 c = Vec3::Zero();
      for (int k = 0; k < 8; ++k)
        for (int ch = 0; ch < 3; ++ch) c[ch] += wts[i][k] * params[3 * idx[i][k] + ch];
      const Vec3 g = 2.0 * (c - colors[i]) * inv;
      for (int k = 0; k < 8; ++k)
        for (int ch = 0; ch < 3; ++ch) grads[3 * idx[i][k] + ch] += wts[i][k] * g[ch];
    }
    adam_step(params, grads, state, opt.lr, "color_field");
    for (double& p : params) p = std::clamp(p, 0.0, 1.0);
  }
  for (std::size_t j = 0; j < m; ++j)
    field.data()[observed[j]] = Vec3(params[3 * j], params[3 * j + 1], params[3 * j + 2]);
  return field;
}

ColorImage render_mesh_colors(const ExtractedMesh& mesh, const ColorField& field,
                              const Camera& cam, const Vec3& background) {
  ColorImage out(cam.width, cam.height, background);
  if (mesh.empty()) return out;
  const auto r = rasterize_mesh(mesh.vertices, mesh.faces, cam);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      if (!is_background_depth(r.depth(x, y)))
        out(x, y) = field.query(surface_point(cam, x, y, r.depth(x, y)));
  return out;
}

double psnr(const ColorImage& a, const ColorImage& b) {
  require(a.same_shape(b), "psnr: image shapes differ");
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]).squaredNorm();
  const double mse = std::max(se / (3.0 * static_cast<double>(a.size())), 1e-10);
  return -10.0 * std::log10(mse);
}

std::vector<double> mesh_nvs_psnr(const ExtractedMesh& mesh, const ColorField& field,
                                  std::span<const Camera> cameras,
                                  std::span<const ColorImage> images, const Vec3& background) {
  require(cameras.size() == images.size(), "one image per camera required");
  std::vector<double> out;
  for (std::size_t v = 0; v < cameras.size(); ++v)
    out.push_back(psnr(render_mesh_colors(mesh, field, cameras[v], background), images[v]));
  return out;
}

void write_metrics_json(const MetricsReport& r, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["chamfer"] = r.chamfer ? nlohmann::ordered_json(*r.chamfer) : nlohmann::ordered_json();
  j["f1"] = r.f1 ? nlohmann::ordered_json(*r.f1) : nlohmann::ordered_json();
  j["per_view_psnr"] = r.per_view_psnr;
  j["mean_psnr"] = r.mean_psnr;
  j["mesh_stats"] = {{"n_vertices", r.mesh_stats.n_vertices},
                     {"n_faces", r.mesh_stats.n_faces},
                     {"n_interior_components", r.mesh_stats.n_interior_components}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

MetricsReport read_metrics_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  MetricsReport r;
  try {
    const auto j = nlohmann::json::parse(in);
    if (!j.at("chamfer").is_null()) r.chamfer = j.at("chamfer").get<double>();
    if (!j.at("f1").is_null()) r.f1 = j.at("f1").get<double>();
    r.per_view_psnr = j.at("per_view_psnr").get<std::vector<double>>();
    r.mean_psnr = j.at("mean_psnr").get<double>();
    const auto& s = j.at("mesh_stats");
    r.mesh_stats.n_vertices = s.at("n_vertices").get<std::size_t>();
    r.mesh_stats.n_faces = s.at("n_faces").get<std::size_t>();
    r.mesh_stats.n_interior_components = s.at("n_interior_components").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid metrics JSON " + path.string() + ": " + e.what());
  }
  return r;
}

}  // namespace meshloop
