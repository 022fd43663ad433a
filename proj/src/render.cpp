#include "meshloop/render.hpp"

#include <algorithm>
#include <tuple>
#include <numeric>

#include <png.h>

#include "meshloop/dual.hpp"

namespace meshloop {

GaussianGrad& GaussianGrad::operator+=(const GaussianGrad& o) {
  mu += o.mu;
  quat += o.quat;
  log_scale += o.log_scale;
  logit_opacity += o.logit_opacity;
  color += o.color;
  for (int i = 0; i < kSitesPerGaussian; ++i) sdf_pre[i] += o.sdf_pre[i];
  return *this;
}

namespace {

template <class T>
struct SplatCore {
  T mean[2];
  T conic[3];
  T z;
  T depth_b[3];  // Sigma^-1 t in the camera frame
  T depth_a[6];  // Sigma^-1 (xx, xy, xz, yy, yz, zz)
  T normal[3];
  double cov[3];  // projected covariance (xx, xy, yy), for the bounding radius
  bool visible = false;
};

// EWA projection written once for double and dual arithmetic.
template <class T>
SplatCore<T> splat_core(const T mu[3], const T q[4], const T ls[3], int min_axis,
                        const Camera& cam, const RenderOptions& opt) {
  using std::exp;
  SplatCore<T> out;
  const Mat3& rc = cam.rotation;
  T t[3];
  for (int r = 0; r < 3; ++r)
    t[r] = rc(r, 0) * mu[0] + rc(r, 1) * mu[1] + rc(r, 2) * mu[2] + cam.translation[r];
  if (!(value_of(t[2]) > opt.near)) return out;
  out.visible = true;

  const auto rot = quat_to_rotation(q[0], q[1], q[2], q[3]);
  T s2[3];
  for (int i = 0; i < 3; ++i) {
    const T s = exp(ls[i]);
    s2[i] = s * s;
  }
  // M = Rc * R, covariance in camera frame = M diag(s^2) M^T.
  T m[3][3];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      m[r][c] = rc(r, 0) * rot(0, c) + rc(r, 1) * rot(1, c) + rc(r, 2) * rot(2, c);
  T sc[3][3], ic[3][3];
  for (int r = 0; r < 3; ++r)
    for (int c = r; c < 3; ++c) {
      T acc = m[r][0] * m[c][0] * s2[0];
      acc += m[r][1] * m[c][1] * s2[1];
      acc += m[r][2] * m[c][2] * s2[2];
      sc[r][c] = acc;
      sc[c][r] = acc;
      T inv = m[r][0] * m[c][0] / s2[0];
      inv += m[r][1] * m[c][1] / s2[1];
      inv += m[r][2] * m[c][2] / s2[2];
      ic[r][c] = inv;
      ic[c][r] = inv;
    }
  for (int r = 0; r < 3; ++r) out.depth_b[r] = ic[r][0] * t[0] + ic[r][1] * t[1] + ic[r][2] * t[2];
  out.depth_a[0] = ic[0][0];
  out.depth_a[1] = ic[0][1];
  out.depth_a[2] = ic[0][2];
  out.depth_a[3] = ic[1][1];
  out.depth_a[4] = ic[1][2];
  out.depth_a[5] = ic[2][2];

  const T iz = 1.0 / t[2];
  // Rows of the projection Jacobian.
  const T j0[3] = {cam.fx * iz, T(0.0), -cam.fx * t[0] * iz * iz};
  const T j1[3] = {T(0.0), cam.fy * iz, -cam.fy * t[1] * iz * iz};
  T a(0.0), b(0.0), c(0.0);
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) {
      a += j0[r] * sc[r][k] * j0[k];
      b += j0[r] * sc[r][k] * j1[k];
      c += j1[r] * sc[r][k] * j1[k];
    }
  a += opt.dilation;
  c += opt.dilation;
  out.cov[0] = value_of(a);
  out.cov[1] = value_of(b);
  out.cov[2] = value_of(c);
  const T det = a * c - b * b;
  out.conic[0] = c / det;
  out.conic[1] = -b / det;
  out.conic[2] = a / det;
  out.mean[0] = cam.fx * t[0] * iz + cam.cx;
  out.mean[1] = cam.fy * t[1] * iz + cam.cy;
  out.z = t[2];

  T n[3] = {m[0][min_axis], m[1][min_axis], m[2][min_axis]};
  const double facing = value_of(n[0]) * value_of(t[0]) + value_of(n[1]) * value_of(t[1]) +
                        value_of(n[2]) * value_of(t[2]);
  for (int i = 0; i < 3; ++i) out.normal[i] = facing > 0 ? -n[i] : n[i];
  return out;
}

int smallest_axis(const Vec3& log_scale) {
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (log_scale[i] < log_scale[k]) k = i;
  return k;
}

void check_finite(const Gaussian& g, std::size_t index) {
  const bool ok = g.mu.allFinite() && g.quat.allFinite() && g.log_scale.allFinite() &&
                  std::isfinite(g.logit_opacity) && g.color.allFinite();
  if (!ok) throw NumericalError("non-finite parameters in Gaussian " + std::to_string(index));
  if (g.quat.squaredNorm() == 0.0)
    throw NumericalError("zero quaternion in Gaussian " + std::to_string(index));
}

constexpr int kTile = 16;

struct Prepared {
  std::vector<Splat> splats;
  std::vector<double> opacity;
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<int>> tiles;  // Gaussian indices in (z, index) order
};

Prepared prepare(const GaussianScene& scene, const Camera& cam, const RenderOptions& opt,
                 bool with_jacobian) {
  Prepared p;
  p.splats.resize(scene.size());
  p.opacity.resize(scene.size());
  std::vector<int> order;
  for (std::size_t k = 0; k < scene.size(); ++k) {
    check_finite(scene[k], k);
    p.splats[k] = project_gaussian(scene[k], cam, opt, with_jacobian);
    p.opacity[k] = scene[k].opacity();
    if (p.splats[k].visible) order.push_back(static_cast<int>(k));
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (p.splats[a].z != p.splats[b].z) return p.splats[a].z < p.splats[b].z;
    return a < b;
  });
  p.tiles_x = (cam.width + kTile - 1) / kTile;
  p.tiles_y = (cam.height + kTile - 1) / kTile;
  p.tiles.resize(static_cast<std::size_t>(p.tiles_x) * p.tiles_y);
  for (int k : order) {
    const Splat& s = p.splats[k];
    const double r = s.radius;
    int x0 = 0, x1 = p.tiles_x - 1, y0 = 0, y1 = p.tiles_y - 1;
    if (std::isfinite(r)) {
      const double lx = (s.mean.x() - r) / kTile, hx = (s.mean.x() + r) / kTile;
      const double ly = (s.mean.y() - r) / kTile, hy = (s.mean.y() + r) / kTile;
      if (hx < 0 || hy < 0 || lx >= p.tiles_x || ly >= p.tiles_y) continue;
      x0 = std::max(0, static_cast<int>(std::floor(lx)));
      x1 = std::min(p.tiles_x - 1, static_cast<int>(std::floor(hx)));
      y0 = std::max(0, static_cast<int>(std::floor(ly)));
      y1 = std::min(p.tiles_y - 1, static_cast<int>(std::floor(hy)));
    }
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx) p.tiles[ty * p.tiles_x + tx].push_back(k);
  }
  return p;
}

struct Contribution {
  int k;
  double alpha, g, t_before, dx, dy;
  double z, den;  // per-pixel depth of the Gaussian and d^T A d
  bool clamped;
};

// Camera z of the density maximum along the ray t * d, d = (u, v, 1):
// z = d.b / d^T A d.
double ray_depth(const Splat& s, const Vec3& d, double& den) {
  const auto& a = s.depth_a;
  den = a[0] * d[0] * d[0] + 2 * a[1] * d[0] * d[1] + 2 * a[2] * d[0] * d[2] +
        a[3] * d[1] * d[1] + 2 * a[4] * d[1] * d[2] + a[5] * d[2] * d[2];
  return s.depth_b.dot(d) / den;
}

// Composites one pixel; returns the final transmittance.
double composite(const Prepared& p, const Camera& cam, const RenderOptions& opt, int x, int y,
                 std::vector<Contribution>& out) {
  out.clear();
  const auto& list = p.tiles[(y / kTile) * p.tiles_x + (x / kTile)];
  const double px = x + 0.5, py = y + 0.5;
  const Vec3 ray = cam.ray(px, py);
  const double cut2 = opt.cutoff_sigma * opt.cutoff_sigma;
  double t = 1.0;
  for (int k : list) {
    const Splat& s = p.splats[k];
    const double dx = px - s.mean.x(), dy = py - s.mean.y();
    const double q = s.conic[0] * dx * dx + 2 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if (q > cut2) continue;
    const double g = std::exp(-0.5 * q);
    const double a0 = p.opacity[k] * g;
    const bool clamped = a0 > opt.alpha_max;
    const double alpha = clamped ? opt.alpha_max : a0;
    double den;
    const double z = ray_depth(s, ray, den);
    out.push_back({k, alpha, g, t, dx, dy, z, den, clamped});
    t *= 1.0 - alpha;
    if (t < opt.t_min) break;
  }
  return t;
}

}  // namespace

Splat project_gaussian(const Gaussian& g, const Camera& cam, const RenderOptions& opt,
                       bool with_jacobian) {
  Splat s;
  const int axis = smallest_axis(g.log_scale);
  auto finish = [&](const auto& core) {
    s.visible = core.visible;
    if (!s.visible) return;
    s.mean = {value_of(core.mean[0]), value_of(core.mean[1])};
    s.conic = {value_of(core.conic[0]), value_of(core.conic[1]), value_of(core.conic[2])};
    s.z = value_of(core.z);
    for (int i = 0; i < 3; ++i) s.depth_b[i] = value_of(core.depth_b[i]);
    for (int i = 0; i < 6; ++i) s.depth_a[i] = value_of(core.depth_a[i]);
    s.normal = {value_of(core.normal[0]), value_of(core.normal[1]), value_of(core.normal[2])};
    const double tr = 0.5 * (core.cov[0] + core.cov[2]);
    const double dd = std::sqrt(std::max(0.0, tr * tr - (core.cov[0] * core.cov[2] -
                                                         core.cov[1] * core.cov[1])));
    s.radius = opt.cutoff_sigma * std::sqrt(tr + dd);
  };
  if (!with_jacobian) {
    const double mu[3] = {g.mu[0], g.mu[1], g.mu[2]};
    const double q[4] = {g.quat[0], g.quat[1], g.quat[2], g.quat[3]};
    const double ls[3] = {g.log_scale[0], g.log_scale[1], g.log_scale[2]};
    finish(splat_core(mu, q, ls, axis, cam, opt));
    return s;
  }
  using D = Dual<10>;
  const D mu[3] = {D::variable(g.mu[0], 0), D::variable(g.mu[1], 1), D::variable(g.mu[2], 2)};
  const D q[4] = {D::variable(g.quat[0], 3), D::variable(g.quat[1], 4),
                  D::variable(g.quat[2], 5), D::variable(g.quat[3], 6)};
  const D ls[3] = {D::variable(g.log_scale[0], 7), D::variable(g.log_scale[1], 8),
                   D::variable(g.log_scale[2], 9)};
  const auto core = splat_core(mu, q, ls, axis, cam, opt);
  finish(core);
  if (!s.visible) return s;
  s.jacobian.row(0) = core.mean[0].d.transpose();
  s.jacobian.row(1) = core.mean[1].d.transpose();
  for (int i = 0; i < 3; ++i) s.jacobian.row(2 + i) = core.conic[i].d.transpose();
  for (int i = 0; i < 3; ++i) s.jacobian.row(5 + i) = core.depth_b[i].d.transpose();
  for (int i = 0; i < 6; ++i) s.jacobian.row(8 + i) = core.depth_a[i].d.transpose();
  for (int i = 0; i < 3; ++i) s.jacobian.row(14 + i) = core.normal[i].d.transpose();
  return s;
}

RenderBuffers render_gaussians(const GaussianScene& scene, const Camera& cam,
                               const RenderOptions& opt) {
  cam.validate();
  const Prepared p = prepare(scene, cam, opt, false);
  RenderBuffers out;
  out.depth = DepthMap(cam.width, cam.height, kBackgroundDepth);
  out.normal = NormalMap(cam.width, cam.height, Vec3::Zero());
  out.color = ColorImage(cam.width, cam.height, opt.background);
  out.alpha = Grid<double>(cam.width, cam.height, 0.0);
  std::vector<Contribution> list;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const double t_end = composite(p, cam, opt, x, y, list);
      double a = 0, sz = 0;
      Vec3 m = Vec3::Zero(), c = Vec3::Zero();
      for (const auto& e : list) {
        const double w = e.alpha * e.t_before;
        a += w;
        sz += w * e.z;
        m += w * p.splats[e.k].normal;
        c += w * scene[e.k].color;
      }
      out.alpha(x, y) = a;
      out.color(x, y) = c + t_end * opt.background;
      if (a >= opt.fg_alpha && a > 0) {
        out.depth(x, y) = sz / a;
        const double mn = m.norm();
        if (mn > 0) out.normal(x, y) = m / mn;
      }
    }
  return out;
}

SceneGrad render_gaussians_backward(const GaussianScene& scene, const Camera& cam,
                                    const RenderGradIn& up, const RenderOptions& opt) {
  cam.validate();
  const Prepared p = prepare(scene, cam, opt, true);
  const bool has_d = !up.depth.empty(), has_n = !up.normal.empty(), has_c = !up.color.empty();
  if (has_d) require(up.depth.width() == cam.width && up.depth.height() == cam.height,
                     "depth gradient shape mismatch");
  if (has_n) require(up.normal.width() == cam.width && up.normal.height() == cam.height,
                     "normal gradient shape mismatch");
  if (has_c) require(up.color.width() == cam.width && up.color.height() == cam.height,
                     "color gradient shape mismatch");

  using VecJ = Eigen::Matrix<double, Splat::kOutputs, 1>;
  std::vector<VecJ> g17(scene.size(), VecJ::Zero());
  SceneGrad grad(scene.size());
  std::vector<Contribution> list;
  std::vector<double> e;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const double gd = has_d ? up.depth(x, y) : 0.0;
      const Vec3 gn = has_n ? up.normal(x, y) : Vec3::Zero();
      const Vec3 gc = has_c ? up.color(x, y) : Vec3::Zero();
      if (gd == 0.0 && gn.isZero() && gc.isZero()) continue;
      const double t_end = composite(p, cam, opt, x, y, list);
      if (list.empty()) continue;
      const Vec3 ray = cam.ray(x + 0.5, y + 0.5);
      double a = 0, sz = 0;
      Vec3 m = Vec3::Zero();
      for (const auto& c : list) {
        const double w = c.alpha * c.t_before;
        a += w;
        sz += w * c.z;
        m += w * p.splats[c.k].normal;
      }
      double g_a = 0, g_sz = 0;
      Vec3 g_m = Vec3::Zero();
      if (a >= opt.fg_alpha && a > 0) {
        const double depth = sz / a;
        g_sz = gd / a;
        g_a = -gd * depth / a;
        const double mn = m.norm();
        if (mn > 0) {
          const Vec3 n = m / mn;
          g_m = (gn - n * n.dot(gn)) / mn;
        }
      }
      e.resize(list.size());
      for (std::size_t i = 0; i < list.size(); ++i) {
        const auto& c = list[i];
        const Splat& s = p.splats[c.k];
        e[i] = g_a + g_sz * c.z + g_m.dot(s.normal) + gc.dot(scene[c.k].color);
        const double w = c.alpha * c.t_before;
        if (g_sz != 0.0) {
          const double gz = g_sz * w / c.den;
          g17[c.k].segment<3>(5) += gz * ray;
          const double ga = -gz * c.z;
          g17[c.k][8] += ga * ray[0] * ray[0];
          g17[c.k][9] += 2 * ga * ray[0] * ray[1];
          g17[c.k][10] += 2 * ga * ray[0] * ray[2];
          g17[c.k][11] += ga * ray[1] * ray[1];
          g17[c.k][12] += 2 * ga * ray[1] * ray[2];
          g17[c.k][13] += ga * ray[2] * ray[2];
        }
        g17[c.k].segment<3>(14) += g_m * w;
        grad[c.k].color += gc * w;
      }
      double suffix = gc.dot(opt.background);
      (void)t_end;
      for (std::size_t i = list.size(); i-- > 0;) {
        const auto& c = list[i];
        const double d_alpha = c.t_before * (e[i] - suffix);
        suffix = c.alpha * e[i] + (1.0 - c.alpha) * suffix;
        if (c.clamped) continue;
        const double o = p.opacity[c.k];
        grad[c.k].logit_opacity += d_alpha * c.g * o * (1.0 - o);
        const double d_power = d_alpha * o * c.g;
        const Splat& s = p.splats[c.k];
        g17[c.k][0] += d_power * (s.conic[0] * c.dx + s.conic[1] * c.dy);
        g17[c.k][1] += d_power * (s.conic[1] * c.dx + s.conic[2] * c.dy);
        g17[c.k][2] += d_power * (-0.5 * c.dx * c.dx);
        g17[c.k][3] += d_power * (-c.dx * c.dy);
        g17[c.k][4] += d_power * (-0.5 * c.dy * c.dy);
      }
    }
  for (std::size_t k = 0; k < scene.size(); ++k) {
    if (!p.splats[k].visible) continue;
    const Eigen::Matrix<double, 10, 1> g10 = p.splats[k].jacobian.transpose() * g17[k];
    grad[k].mu += g10.segment<3>(0);
    grad[k].quat += g10.segment<4>(3);
    grad[k].log_scale += g10.segment<3>(7);
  }
  return grad;
}

std::vector<double> blend_weights(const GaussianScene& scene, const Camera& cam,
                                  const RenderOptions& opt) {
  cam.validate();
  const Prepared p = prepare(scene, cam, opt, false);
  std::vector<double> w(scene.size(), 0.0);
  std::vector<Contribution> list;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      composite(p, cam, opt, x, y, list);
      for (const auto& c : list) w[c.k] += c.alpha * c.t_before;
    }
  return w;
}

// --- mesh rasterization ------------------------------------------------------

namespace {

bool top_left(const Vec2& d) { return d.y() < 0 || (d.y() == 0 && d.x() > 0); }

template <class T>
struct FaceEval {
  T z;
  T n[3];
};

// Perspective-correct depth and camera-frame face normal of a triangle at
// image point (u, v).
template <class T>
FaceEval<T> eval_face(const T v[3][3], const Camera& cam, double u, double v_px) {
  using std::sqrt;
  T c[3][3];
  for (int i = 0; i < 3; ++i)
    for (int r = 0; r < 3; ++r)
      c[i][r] = cam.rotation(r, 0) * v[i][0] + cam.rotation(r, 1) * v[i][1] +
                cam.rotation(r, 2) * v[i][2] + cam.translation[r];
  T sx[3], sy[3];
  for (int i = 0; i < 3; ++i) {
    sx[i] = cam.fx * c[i][0] / c[i][2] + cam.cx;
    sy[i] = cam.fy * c[i][1] / c[i][2] + cam.cy;
  }
  const T area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sy[1] - sy[0]) * (sx[2] - sx[0]);
  T inv_z(0.0);
  for (int i = 0; i < 3; ++i) {
    const int j = (i + 1) % 3, k = (i + 2) % 3;
    const T e = (sx[k] - sx[j]) * (v_px - sy[j]) - (sy[k] - sy[j]) * (u - sx[j]);
    inv_z += (e / area) / c[i][2];
  }
  FaceEval<T> out;
  out.z = 1.0 / inv_z;
  T a[3], b[3];
  for (int r = 0; r < 3; ++r) {
    a[r] = c[1][r] - c[0][r];
    b[r] = c[2][r] - c[0][r];
  }
  T n[3] = {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
  const T len = sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
  const double facing = value_of(n[0]) * value_of(c[0][0]) + value_of(n[1]) * value_of(c[0][1]) +
                        value_of(n[2]) * value_of(c[0][2]);
  for (int r = 0; r < 3; ++r) out.n[r] = (facing > 0 ? -n[r] : n[r]) / len;
  return out;
}

}  // namespace

MeshRender rasterize_mesh(std::span<const Vec3> vertices, std::span<const Face> faces,
                          const Camera& cam, double near) {
  cam.validate();
  MeshRender out;
  out.depth = DepthMap(cam.width, cam.height, kBackgroundDepth);
  out.normal = NormalMap(cam.width, cam.height, Vec3::Zero());
  out.face = Grid<int>(cam.width, cam.height, -1);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& tri = faces[f];
    Vec3 c[3];
    Vec2 s[3];
    bool ok = true;
    for (int i = 0; i < 3; ++i) {
      require(tri[i] >= 0 && static_cast<std::size_t>(tri[i]) < vertices.size(),
              "face index out of range");
      c[i] = cam.to_camera(vertices[tri[i]]);
      if (!(c[i].z() > near)) ok = false;
      else s[i] = cam.project(c[i]);
    }
    if (!ok) continue;
    double area = (s[1].x() - s[0].x()) * (s[2].y() - s[0].y()) -
                  (s[1].y() - s[0].y()) * (s[2].x() - s[0].x());
    if (!(std::abs(area) > 1e-12)) continue;
    if (area < 0) {
      std::swap(s[1], s[2]);
      std::swap(c[1], c[2]);
      area = -area;
    }
    const double minx = std::min({s[0].x(), s[1].x(), s[2].x()});
    const double maxx = std::max({s[0].x(), s[1].x(), s[2].x()});
    const double miny = std::min({s[0].y(), s[1].y(), s[2].y()});
    const double maxy = std::max({s[0].y(), s[1].y(), s[2].y()});
    const int x0 = std::max(0, static_cast<int>(std::ceil(minx - 0.5)));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(maxx - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(miny - 0.5)));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(maxy - 0.5)));
    if (x0 > x1 || y0 > y1) continue;

    Vec3 n = (c[1] - c[0]).cross(c[2] - c[0]).normalized();
    if (n.dot(c[0]) > 0) n = -n;
    // Each edge function is evaluated from the lexicographically smaller
    // endpoint so that neighbouring triangles get exactly opposite values on
    // a shared edge; otherwise rounding can drop pixels from both.
    Vec2 edge[3], origin[3];
    double sign[3];
    bool tl[3];
    for (int i = 0; i < 3; ++i) {
      const Vec2 &a = s[(i + 1) % 3], &b = s[(i + 2) % 3];
      const bool fwd = std::tie(a.x(), a.y()) < std::tie(b.x(), b.y());
      origin[i] = fwd ? a : b;
      edge[i] = fwd ? Vec2(b - a) : Vec2(a - b);
      sign[i] = fwd ? 1.0 : -1.0;
      tl[i] = top_left(b - a);
    }
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec2 pt(x + 0.5, y + 0.5);
        double b[3];
        bool inside = true;
        for (int i = 0; i < 3; ++i) {
          const Vec2& o = origin[i];
          const double e =
              sign[i] * (edge[i].x() * (pt.y() - o.y()) - edge[i].y() * (pt.x() - o.x()));
          if (e < 0 || (e == 0 && !tl[i])) {
            inside = false;
            break;
          }
          b[i] = e / area;
        }
        if (!inside) continue;
        const double z = 1.0 / (b[0] / c[0].z() + b[1] / c[1].z() + b[2] / c[2].z());
        if (z < out.depth(x, y)) {
          out.depth(x, y) = z;
          out.normal(x, y) = n;
          out.face(x, y) = static_cast<int>(f);
        }
      }
  }
  return out;
}

std::vector<Vec3> rasterize_mesh_backward(std::span<const Vec3> vertices,
                                          std::span<const Face> faces, const Camera& cam,
                                          const MeshRender& render, const DepthMap& grad_depth,
                                          const NormalMap& grad_normal) {
  std::vector<Vec3> grad(vertices.size(), Vec3::Zero());
  const bool has_d = !grad_depth.empty(), has_n = !grad_normal.empty();
  using D = Dual<9>;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const int f = render.face(x, y);
      if (f < 0) continue;
      const double gd = has_d ? grad_depth(x, y) : 0.0;
      const Vec3 gn = has_n ? grad_normal(x, y) : Vec3::Zero();
      if (gd == 0.0 && gn.isZero()) continue;
      const Face& tri = faces[f];
      D v[3][3];
      for (int i = 0; i < 3; ++i)
        for (int r = 0; r < 3; ++r) v[i][r] = D::variable(vertices[tri[i]][r], 3 * i + r);
      const auto ev = eval_face(v, cam, x + 0.5, y + 0.5);
      Eigen::Matrix<double, 9, 1> g = gd * ev.z.d;
      for (int r = 0; r < 3; ++r) g += gn[r] * ev.n[r].d;
      for (int i = 0; i < 3; ++i) grad[tri[i]] += g.segment<3>(3 * i);
    }
  return grad;
}

namespace {

constexpr double kBinomial[3] = {0.25, 0.5, 0.25};

bool full_neighbourhood(const DepthMap& d, int x, int y) {
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx)
      if (!d.in_bounds(x + dx, y + dy) || is_background_depth(d(x + dx, y + dy))) return false;
  return true;
}

}  // namespace

DepthMap antialias_depth(const DepthMap& depth) {
  DepthMap out = depth;
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      if (!full_neighbourhood(depth, x, y)) continue;
      double acc = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          acc += kBinomial[dx + 1] * kBinomial[dy + 1] * depth(x + dx, y + dy);
      out(x, y) = acc;
    }
  return out;
}

DepthMap antialias_depth_backward(const DepthMap& depth, const DepthMap& grad_out) {
  require(depth.same_shape(grad_out), "antialias gradient shape mismatch");
  DepthMap g(depth.width(), depth.height(), 0.0);
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      if (!full_neighbourhood(depth, x, y)) {
        g(x, y) += grad_out(x, y);
        continue;
      }
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          g(x + dx, y + dy) += kBinomial[dx + 1] * kBinomial[dy + 1] * grad_out(x, y);
    }
  return g;
}

// --- depth to normal ---------------------------------------------------------

namespace {

// Neighbour used for the finite difference along one axis: +1, -1, or 0 when
// neither side is usable.
int pick_neighbour(const DepthMap& d, int x, int y, int ax, int ay) {
  if (d.in_bounds(x + ax, y + ay) && !is_background_depth(d(x + ax, y + ay))) return 1;
  if (d.in_bounds(x - ax, y - ay) && !is_background_depth(d(x - ax, y - ay))) return -1;
  return 0;
}

template <class T>
void normal_from_depths(const T& d0, const T& dx, const T& dy, const Vec3& r0, const Vec3& rx,
                        const Vec3& ry, int sx, int sy, T n[3]) {
  using std::sqrt;
  T a[3], b[3], p[3];
  for (int i = 0; i < 3; ++i) {
    p[i] = d0 * r0[i];
    a[i] = (dx * rx[i] - p[i]) * static_cast<double>(sx);
    b[i] = (dy * ry[i] - p[i]) * static_cast<double>(sy);
  }
  T c[3] = {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
  const T len = sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
  const double facing = value_of(c[0]) * value_of(p[0]) + value_of(c[1]) * value_of(p[1]) +
                        value_of(c[2]) * value_of(p[2]);
  for (int i = 0; i < 3; ++i) n[i] = (facing > 0 ? -c[i] : c[i]) / len;
}

}  // namespace

NormalMap depth_to_normal(const DepthMap& depth, const Camera& cam) {
  require(depth.width() == cam.width && depth.height() == cam.height,
          "depth map does not match camera resolution");
  NormalMap out(depth.width(), depth.height(), Vec3::Zero());
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      if (is_background_depth(depth(x, y))) continue;
      const int sx = pick_neighbour(depth, x, y, 1, 0);
      const int sy = pick_neighbour(depth, x, y, 0, 1);
      if (sx == 0 || sy == 0) continue;
      double n[3];
      normal_from_depths(depth(x, y), depth(x + sx, y), depth(x, y + sy),
                         cam.ray(x + 0.5, y + 0.5), cam.ray(x + sx + 0.5, y + 0.5),
                         cam.ray(x + 0.5, y + sy + 0.5), sx, sy, n);
      const Vec3 v(n[0], n[1], n[2]);
      if (v.allFinite()) out(x, y) = v;
    }
  return out;
}

DepthMap depth_to_normal_backward(const DepthMap& depth, const Camera& cam,
                                  const NormalMap& grad_normal) {
  require(depth.width() == grad_normal.width() && depth.height() == grad_normal.height(),
          "normal gradient shape mismatch");
  DepthMap g(depth.width(), depth.height(), 0.0);
  using D = Dual<3>;
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      if (is_background_depth(depth(x, y)) || grad_normal(x, y).isZero()) continue;
      const int sx = pick_neighbour(depth, x, y, 1, 0);
      const int sy = pick_neighbour(depth, x, y, 0, 1);
      if (sx == 0 || sy == 0) continue;
      D n[3];
      normal_from_depths(D::variable(depth(x, y), 0), D::variable(depth(x + sx, y), 1),
                         D::variable(depth(x, y + sy), 2), cam.ray(x + 0.5, y + 0.5),
                         cam.ray(x + sx + 0.5, y + 0.5), cam.ray(x + 0.5, y + sy + 0.5), sx, sy,
                         n);
      if (!std::isfinite(n[0].v)) continue;
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      for (int i = 0; i < 3; ++i) acc += grad_normal(x, y)[i] * n[i].d;
      g(x, y) += acc[0];
      g(x + sx, y) += acc[1];
      g(x, y + sy) += acc[2];
    }
  return g;
}

// --- PNG dumps ---------------------------------------------------------------

void write_png(const ColorImage& image, const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(image.size() * 3);
  for (std::size_t i = 0; i < image.size(); ++i)
    for (int c = 0; c < 3; ++c)
      buf[3 * i + c] = static_cast<unsigned char>(
          std::lround(255.0 * std::clamp(image[i][c], 0.0, 1.0)));
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

ColorImage depth_to_image(const DepthMap& depth) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double d : depth.data())
    if (!is_background_depth(d)) lo = std::min(lo, d), hi = std::max(hi, d);
  ColorImage out(depth.width(), depth.height(), Vec3::Zero());
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < depth.size(); ++i)
    if (!is_background_depth(depth[i])) out[i] = Vec3::Constant(1.0 - (depth[i] - lo) / span);
  return out;
}

ColorImage normal_to_image(const NormalMap& normal) {
  ColorImage out(normal.width(), normal.height(), Vec3::Zero());
  for (std::size_t i = 0; i < normal.size(); ++i)
    if (!normal[i].isZero()) out[i] = (normal[i] + Vec3::Ones()) * 0.5;
  return out;
}

}  // namespace meshloop
