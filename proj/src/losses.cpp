#include "meshloop/losses.hpp"

#include <array>

namespace meshloop {

void LossWeights::validate() const {
  require(lambda_rgb >= 0 && lambda_rgb <= 1, "lambda_rgb must lie in [0, 1]");
  require(lambda_n >= 0 && lambda_md >= 0 && lambda_mn >= 0 && lambda_erosion >= 0 &&
              lambda_interior >= 0,
          "loss weights must be nonnegative");
}

double combine_losses(LossBreakdown& t, const LossWeights& w) {
  t.total = t.photometric + w.lambda_n * t.normal + w.lambda_md * t.mesh_depth +
            w.lambda_mn * t.mesh_normal + w.lambda_erosion * t.erosion +
            w.lambda_interior * t.interior;
  return t.total;
}

// --- photometric -------------------------------------------------------------

namespace {

constexpr int kRadius = 5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, 2 * kRadius + 1> gaussian_window() {
  std::array<double, 2 * kRadius + 1> w{};
  double s = 0;
  for (int i = -kRadius; i <= kRadius; ++i) s += w[i + kRadius] = std::exp(-i * i / (2 * 1.5 * 1.5));
  for (double& v : w) v /= s;
  return w;
}

// Separable zero-padded filtering with the symmetric window.
Grid<double> blur(const Grid<double>& in) {
  static const auto w = gaussian_window();
  const int W = in.width(), H = in.height();
  Grid<double> tmp(W, H, 0.0), out(W, H, 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0;
      for (int k = -kRadius; k <= kRadius; ++k)
        if (x + k >= 0 && x + k < W) acc += w[k + kRadius] * in(x + k, y);
      tmp(x, y) = acc;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc = 0;
      for (int k = -kRadius; k <= kRadius; ++k)
        if (y + k >= 0 && y + k < H) acc += w[k + kRadius] * tmp(x, y + k);
      out(x, y) = acc;
    }
  return out;
}

Grid<double> channel(const ColorImage& img, int c) {
  Grid<double> g(img.width(), img.height());
  for (std::size_t i = 0; i < img.size(); ++i) g[i] = img[i][c];
  return g;
}

// Mean SSIM of one channel; optionally d(sum of SSIM map)/dx into grad.
double ssim_channel(const Grid<double>& x, const Grid<double>& y, Grid<double>* grad) {
  const std::size_t n = x.size();
  Grid<double> xx = x, yy = y, xy = x;
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = blur(x), my = blur(y), exx = blur(xx), eyy = blur(yy), exy = blur(xy);
  Grid<double> g_mu(x.width(), x.height()), g_xx(x.width(), x.height()),
      g_xy(x.width(), x.height());
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a1 = 2 * mx[i] * my[i] + kC1;
    const double a2 = 2 * (exy[i] - mx[i] * my[i]) + kC2;
    const double b1 = mx[i] * mx[i] + my[i] * my[i] + kC1;
    const double b2 = exx[i] - mx[i] * mx[i] + eyy[i] - my[i] * my[i] + kC2;
    const double s = a1 * a2 / (b1 * b2);
    sum += s;
    g_xx[i] = -s / b2;
    g_xy[i] = 2 * s / a2;
    g_mu[i] = s * (2 * my[i] / a1 - 2 * my[i] / a2 - 2 * mx[i] / b1 + 2 * mx[i] / b2);
  }
  if (grad) {
    const auto bm = blur(g_mu), bxx = blur(g_xx), bxy = blur(g_xy);
    *grad = Grid<double>(x.width(), x.height());
    for (std::size_t i = 0; i < n; ++i) (*grad)[i] = bm[i] + 2 * x[i] * bxx[i] + y[i] * bxy[i];
  }
  return sum / static_cast<double>(n);
}

void require_same(const auto& a, const auto& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height())
    throw InvalidArgument(std::string(what) + ": buffer shapes differ (" +
                          std::to_string(a.width()) + "x" + std::to_string(a.height()) + " vs " +
                          std::to_string(b.width()) + "x" + std::to_string(b.height()) + ")");
}

}  // namespace

double ssim(const ColorImage& a, const ColorImage& b) {
  require_same(a, b, "ssim");
  double s = 0;
  for (int c = 0; c < 3; ++c) s += ssim_channel(channel(a, c), channel(b, c), nullptr);
  return s / 3.0;
}

PhotometricLoss loss_photometric(const ColorImage& rendered, const ColorImage& target,
                                 double lambda) {
  require_same(rendered, target, "loss_photometric");
  require(lambda >= 0 && lambda <= 1, "lambda_rgb must lie in [0, 1]");
  PhotometricLoss out;
  const double n = 3.0 * static_cast<double>(rendered.size());
  out.grad = ColorImage(rendered.width(), rendered.height(), Vec3::Zero());
  double l1 = 0;
  for (std::size_t i = 0; i < rendered.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      const double d = rendered[i][c] - target[i][c];
      l1 += std::abs(d);
      out.grad[i][c] = (1 - lambda) * (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n;
    }
  out.l1 = l1 / n;
  double s = 0;
  for (int c = 0; c < 3; ++c) {
    Grid<double> g;
    s += ssim_channel(channel(rendered, c), channel(target, c), lambda > 0 ? &g : nullptr);
    if (lambda > 0)
      for (std::size_t i = 0; i < rendered.size(); ++i)
        out.grad[i][c] += -0.5 * lambda * g[i] / static_cast<double>(rendered.size()) / 3.0;
  }
  out.dssim = (1.0 - s / 3.0) / 2.0;
  out.value = (1 - lambda) * out.l1 + lambda * out.dssim;
  return out;
}

// --- normals and depth ---------------------------------------------------------

NormalLoss loss_normal_consistency(const NormalMap& a, const NormalMap& b) {
  require_same(a, b, "normal loss");
  NormalLoss out;
  out.grad_a = NormalMap(a.width(), a.height(), Vec3::Zero());
  out.grad_b = NormalMap(a.width(), a.height(), Vec3::Zero());
  const double n = static_cast<double>(a.size());
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].isZero() || b[i].isZero()) continue;
    s += 1.0 - a[i].dot(b[i]);
    out.grad_a[i] = -b[i] / n;
    out.grad_b[i] = -a[i] / n;
  }
  out.value = s / n;
  return out;
}

NormalLoss loss_mesh_normal(const NormalMap& n_tilde, const NormalMap& n_mesh) {
  return loss_normal_consistency(n_tilde, n_mesh);
}

DepthLoss loss_mesh_depth(const DepthMap& d, const DepthMap& dm, double d_cap) {
  require_same(d, dm, "loss_mesh_depth");
  require(d_cap >= 0, "depth cap must be nonnegative");
  DepthLoss out;
  out.grad_d = DepthMap(d.width(), d.height(), 0.0);
  out.grad_dm = DepthMap(d.width(), d.height(), 0.0);
  double s = 0;
  std::size_t count = 0;
  std::vector<std::size_t> both;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const bool fa = !is_background_depth(d[i]), fb = !is_background_depth(dm[i]);
    if (!fa && !fb) continue;
    ++count;
    if (fa && fb) {
      s += std::log1p(std::abs(d[i] - dm[i]));
      both.push_back(i);
    } else {
      s += std::log1p(d_cap);
    }
  }
  if (count == 0) return out;
  const double n = static_cast<double>(count);
  out.value = s / n;
  for (std::size_t i : both) {
    const double diff = d[i] - dm[i];
    const double g = (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0) / (1.0 + std::abs(diff)) / n;
    out.grad_d[i] = g;
    out.grad_dm[i] = -g;
  }
  return out;
}

// --- SDF regularizers ----------------------------------------------------------

SdfLoss loss_erosion(const GaussianScene& scene, std::span<const int> selected) {
  require(!selected.empty(), "erosion loss needs a nonempty selection");
  SdfLoss out;
  out.grad_pre.assign(selected.size(), 0.0);
  const double n = static_cast<double>(selected.size());
  double s = 0;
  for (std::size_t j = 0; j < selected.size(); ++j) {
    const int k = selected[j];
    require(k >= 0 && static_cast<std::size_t>(k) < scene.size(), "selected index out of range");
    const double f = scene[k].sdf(0);
    if (f > 0) {
      s += f;
      out.grad_pre[j] = (1.0 - f * f) / n;
    }
  }
  out.value = s / n;
  return out;
}

OccupancyLabels compute_occupancy(const ExtractedMesh& mesh, std::span<const Camera> cameras,
                                  std::span<const Vec3> sites, double bbox_diag, int iter) {
  require(!cameras.empty(), "occupancy needs at least one camera");
  OccupancyLabels out;
  out.last_update_iter = iter;
  out.o.assign(sites.size(), 0);
  if (mesh.empty()) return out;
  const double eps = 1e-4 * bbox_diag;
  std::vector<std::uint8_t> seen(sites.size(), 0), behind(sites.size(), 1);
  for (const auto& cam : cameras) {
    const auto r = rasterize_mesh(mesh.vertices, mesh.faces, cam);
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const Vec3 pc = cam.to_camera(sites[s]);
      int px, py;
      if (!cam.pixel_of(pc, px, py)) continue;
      seen[s] = 1;
      const double d = r.depth(px, py);
      if (is_background_depth(d) || !(pc.z() > d + eps)) behind[s] = 0;
    }
  }
  for (std::size_t s = 0; s < sites.size(); ++s) out.o[s] = seen[s] && behind[s];
  return out;
}

SdfLoss loss_interior(const GaussianScene& scene, const PivotSet& pivots,
                      const OccupancyLabels& occ) {
  if (occ.o.size() != pivots.size())
    throw InvalidArgument("occupancy has " + std::to_string(occ.o.size()) + " labels for " +
                          std::to_string(pivots.size()) + " sites");
  SdfLoss out;
  out.grad_pre.assign(pivots.size(), 0.0);
  std::size_t n = 0;
  for (auto o : occ.o) n += o;
  if (n == 0) return out;
  double s = 0;
  for (std::size_t i = 0; i < pivots.size(); ++i) {
    if (!occ.o[i]) continue;
    const auto& ref = pivots.provenance[i];
    const double f = scene[ref.gaussian].sdf(ref.corner);
    s += softplus(f);
    out.grad_pre[i] = sigmoid(f) * (1.0 - f * f) / static_cast<double>(n);
  }
  out.value = s / static_cast<double>(n);
  return out;
}

double sdf_to_pre(double sdf, double tau) {
  const double x = std::clamp(sdf / tau, -1.0, 1.0) * (1.0 - 1e-6);
  return std::atanh(x);
}

std::vector<double> init_sdf(const GaussianScene& scene, const PivotSet& pivots,
                             std::span<const Camera> cameras, double tau,
                             const RenderOptions& options) {
  if (cameras.size() < 2) throw InvalidArgument("init_sdf needs at least 2 cameras");
  require(tau > 0, "truncation distance must be positive");
  const std::size_t n = pivots.size();
  std::vector<double> sum(n, 0.0);
  std::vector<int> used(n, 0), occluded(n, 0);
  for (const auto& cam : cameras) {
    const auto r = render_gaussians(scene, cam, options);
    for (std::size_t s = 0; s < n; ++s) {
      const Vec3 pc = cam.to_camera(pivots.sites[s]);
      int px, py;
      if (!cam.pixel_of(pc, px, py)) continue;
      const double d = r.depth(px, py);
      if (is_background_depth(d)) {
        sum[s] += tau;
        ++used[s];
        continue;
      }
      const double diff = d - pc.z();
      if (diff < -tau) {
        ++occluded[s];
        continue;
      }
      sum[s] += diff;
      ++used[s];
    }
  }
  std::vector<double> pre(n);
  for (std::size_t s = 0; s < n; ++s) {
    double v;
    if (used[s] > 0) v = std::clamp(sum[s] / used[s], -tau, tau);
    else if (occluded[s] > 0) v = -tau;
    else v = 0.5 * tau;
    pre[s] = sdf_to_pre(v, tau);
  }
  return pre;
}

}  // namespace meshloop
