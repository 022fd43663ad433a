#include <doctest.h>

#include "meshloop/losses.hpp"
#include "mesh_fixtures.hpp"
#include "support.hpp"

using namespace meshloop;
using namespace testing_support;

namespace {

ColorImage random_image(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0, 1);
  ColorImage img(w, h, Vec3::Zero());
  for (auto& v : img.data()) v = Vec3(u(rng), u(rng), u(rng));
  return img;
}

NormalMap random_normals(std::mt19937_64& rng, int w, int h, double bg_fraction) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0, 1);
  NormalMap m(w, h, Vec3::Zero());
  for (auto& v : m.data())
    if (u(rng) >= bg_fraction) v = Vec3(n(rng), n(rng), n(rng)).normalized();
  return m;
}

// Direct 2D-window SSIM (11x11 Gaussian, sigma 1.5, zero padding), per
// channel, averaged over pixels and channels.
double ssim_oracle(const ColorImage& a, const ColorImage& b) {
  double w1[11], s = 0;
  for (int i = 0; i < 11; ++i) s += w1[i] = std::exp(-(i - 5) * (i - 5) / 4.5);
  for (double& v : w1) v /= s;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int dy = -5; dy <= 5; ++dy)
          for (int dx = -5; dx <= 5; ++dx) {
            if (!a.in_bounds(x + dx, y + dy)) continue;
            const double w = w1[dx + 5] * w1[dy + 5];
            const double p = a(x + dx, y + dy)[c], q = b(x + dx, y + dy)[c];
            mx += w * p;
            my += w * q;
            xx += w * p * p;
            yy += w * q * q;
            xy += w * p * q;
          }
        total += (2 * mx * my + c1) * (2 * (xy - mx * my) + c2) /
                 ((mx * mx + my * my + c1) * (xx - mx * mx + yy - my * my + c2));
      }
  return total / (3.0 * a.size());
}

GaussianScene scene_with_centre_sdf(const std::vector<double>& f) {
  GaussianScene s(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) s[i].sdf_pre[0] = std::atanh(f[i]);
  return s;
}

std::vector<Camera> axis_cameras(double dist, int res) {
  std::vector<Camera> cams;
  for (int axis = 0; axis < 3; ++axis)
    for (double sgn : {-1.0, 1.0}) {
      Vec3 eye = Vec3::Zero();
      eye[axis] = sgn * dist;
      const Vec3 up = axis == 2 ? Vec3::UnitY() : Vec3::UnitZ();
      cams.push_back(look_at(eye, Vec3::Zero(), up, res, res, res));
    }
  return cams;
}

}  // namespace

TEST_CASE("photometric loss values") {
  std::mt19937_64 rng(1);
  const auto a = random_image(rng, 16, 16);
  const auto z = loss_photometric(a, a, 0.2);
  CHECK(std::abs(z.value) < 1e-15);
  CHECK(z.l1 == 0.0);

  const ColorImage zeros(8, 8, Vec3::Zero()), ones(8, 8, Vec3::Ones());
  CHECK(loss_photometric(zeros, ones, 0.0).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(loss_photometric(zeros, ColorImage(8, 7, Vec3::Zero()), 0.2), InvalidArgument);
  CHECK_THROWS_AS(loss_photometric(zeros, ones, 1.5), InvalidArgument);
}

TEST_CASE("SSIM agrees with a direct windowed oracle") {
  std::mt19937_64 rng(2);
  for (int inst = 0; inst < 5; ++inst) {
    const auto a = random_image(rng, 20, 14), b = random_image(rng, 20, 14);
    CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-12));
    const double lambda = 0.3;
    double l1 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) l1 += (a[i] - b[i]).cwiseAbs().sum();
    l1 /= 3.0 * a.size();
    const double expect = (1 - lambda) * l1 + lambda * (1 - ssim_oracle(a, b)) / 2;
    CHECK(loss_photometric(a, b, lambda).value == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("normal consistency loss") {
  std::mt19937_64 rng(3);
  const auto n = random_normals(rng, 16, 16, 0.0);
  CHECK(std::abs(loss_normal_consistency(n, n).value) < 1e-15);
  NormalMap neg = n;
  for (auto& v : neg.data()) v = -v;
  CHECK(loss_normal_consistency(n, neg).value == doctest::Approx(2.0).epsilon(1e-12));

  for (int inst = 0; inst < 10; ++inst) {
    const auto a = random_normals(rng, 12, 9, 0.2), b = random_normals(rng, 12, 9, 0.2);
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!a[i].isZero() && !b[i].isZero()) s += 1 - a[i].dot(b[i]);
    CHECK(std::abs(loss_normal_consistency(a, b).value - s / a.size()) < 1e-12);
    CHECK(std::abs(loss_mesh_normal(a, b).value - s / a.size()) < 1e-12);
  }
  CHECK_THROWS_AS(loss_normal_consistency(n, NormalMap(4, 4, Vec3::Zero())), InvalidArgument);
}

TEST_CASE("mesh normal loss: orthogonal fields cost one") {
  const NormalMap a(6, 6, Vec3(0, 0, -1)), b(6, 6, Vec3(1, 0, 0));
  CHECK(loss_mesh_normal(a, b).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(loss_mesh_normal(a, a).value == 0.0);
}

TEST_CASE("mesh depth loss") {
  DepthMap d(5, 5, kBackgroundDepth), dm(5, 5, kBackgroundDepth);
  CHECK(loss_mesh_depth(d, dm, 3.0).value == 0.0);
  d(2, 2) = 1.0;
  dm(2, 2) = 1.0 + (M_E - 1.0);
  CHECK(loss_mesh_depth(d, dm, 3.0).value == doctest::Approx(1.0).epsilon(1e-15));
  // A pixel foreground in one map only costs the cap.
  d(0, 0) = 2.0;
  CHECK(loss_mesh_depth(d, dm, 3.0).value ==
        doctest::Approx((1.0 + std::log(4.0)) / 2).epsilon(1e-15));
  CHECK(loss_mesh_depth(d, dm, 3.0).grad_d(0, 0) == 0.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.5, 3.0), c(0, 1);
  for (int inst = 0; inst < 10; ++inst) {
    DepthMap a(10, 8, 0.0), b(10, 8, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = c(rng) < 0.2 ? kBackgroundDepth : u(rng);
      b[i] = c(rng) < 0.2 ? kBackgroundDepth : u(rng);
    }
    const double cap = 2.5;
    double s = 0;
    int n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const bool fa = !is_background_depth(a[i]), fb = !is_background_depth(b[i]);
      if (fa && fb) s += std::log1p(std::abs(a[i] - b[i]));
      else if (fa || fb) s += std::log1p(cap);
      n += fa || fb;
    }
    const auto l = loss_mesh_depth(a, b, cap);
    CHECK(std::abs(l.value - s / n) < 1e-12);
    // Antisymmetry of the gradient on shared foreground.
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(l.grad_d[i] == -l.grad_dm[i]);
  }
}

TEST_CASE("erosion loss") {
  CHECK(loss_erosion(scene_with_centre_sdf({-0.5, -0.1, -0.9}), all_indices(3)).value == 0.0);
  const auto s = scene_with_centre_sdf({-0.5, 0.2, 0.0});
  const auto l = loss_erosion(s, all_indices(3));
  CHECK(l.value == doctest::Approx(0.2 / 3).epsilon(1e-12));
  CHECK(l.value == doctest::Approx(0.0667).epsilon(1e-3));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2, 2);
  GaussianScene scene(20);
  for (auto& g : scene)
    for (auto& v : g.sdf_pre) v = u(rng);
  const std::vector<int> sel = {1, 4, 5, 9, 13, 17};
  const auto e = loss_erosion(scene, sel);
  double oracle = 0;
  for (int j : sel) oracle += std::max(0.0, std::tanh(scene[j].sdf_pre[0]));
  CHECK(e.value == doctest::Approx(oracle / sel.size()).epsilon(1e-14));
  // One gradient entry per selected Gaussian, on its centre value.
  REQUIRE(e.grad_pre.size() == sel.size());
  for (std::size_t j = 0; j < sel.size(); ++j) {
    const double f = std::tanh(scene[sel[j]].sdf_pre[0]);
    const double expect = f > 0 ? (1 - f * f) / sel.size() : 0.0;
    CHECK(e.grad_pre[j] == doctest::Approx(expect).epsilon(1e-14));
    double* p = &scene[sel[j]].sdf_pre[0];
    const auto fd = fd_gradient({p}, [&] { return loss_erosion(scene, sel).value; }, 1e-6);
    CHECK(std::abs(fd[0] - e.grad_pre[j]) < 1e-8);
  }
}

TEST_CASE("interior loss") {
  GaussianScene s(2);
  s[0].sdf_pre.fill(0.3);
  s[1].sdf_pre.fill(-0.7);
  const PivotSet piv = sample_pivots(s, all_indices(2));
  OccupancyLabels occ;
  occ.o.assign(piv.size(), 0);
  CHECK(loss_interior(s, piv, occ).value == 0.0);

  // One inside site at f = 0: softplus(0) = log 2.
  GaussianScene z(1);
  const PivotSet pz = sample_pivots(z, all_indices(1));
  OccupancyLabels oz;
  oz.o.assign(pz.size(), 0);
  oz.o[0] = 1;
  CHECK(loss_interior(z, pz, oz).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // The per-site term is log(1 + e^f); e.g. f = -10 gives 4.54e-5.
  CHECK(softplus(-10.0) == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-15));
  CHECK(softplus(-10.0) == doctest::Approx(4.54e-5).epsilon(1e-3));
  CHECK(softplus(800.0) == doctest::Approx(800.0));

  // Mean over inside sites, gradient sigmoid(f) tanh'(pre) / n.
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-2, 2);
  for (auto& g : s)
    for (auto& v : g.sdf_pre) v = u(rng);
  for (std::size_t i = 0; i < piv.size(); ++i) occ.o[i] = i % 3 == 0;
  const auto l = loss_interior(s, piv, occ);
  double oracle = 0;
  int n = 0;
  for (std::size_t i = 0; i < piv.size(); ++i)
    if (occ.o[i]) {
      oracle += std::log1p(std::exp(std::tanh(s[i / 9].sdf_pre[i % 9])));
      ++n;
    }
  CHECK(l.value == doctest::Approx(oracle / n).epsilon(1e-14));
  for (std::size_t i = 0; i < piv.size(); ++i) {
    double* p = &s[i / 9].sdf_pre[i % 9];
    const auto fd = fd_gradient({p}, [&] { return loss_interior(s, piv, occ).value; }, 1e-6);
    CHECK(std::abs(fd[0] - l.grad_pre[i]) < 1e-9);
    if (occ.o[i]) CHECK(l.grad_pre[i] > 0);  // decreasing f lowers the loss
  }
  occ.o.pop_back();
  CHECK_THROWS_AS(loss_interior(s, piv, occ), InvalidArgument);
}

TEST_CASE("occupancy: a site in front of a wall is outside") {
  ExtractedMesh wall;
  wall.vertices = {Vec3(-5, -5, 0), Vec3(5, -5, 0), Vec3(5, 5, 0), Vec3(-5, 5, 0)};
  wall.faces = {{0, 1, 2}, {0, 2, 3}};
  std::vector<Camera> cams;
  for (double x : {-1.0, 0.0, 1.0}) cams.push_back(look_at(Vec3(x, 0.5, 4), Vec3::Zero(), Vec3::UnitY(), 32, 32, 32));
  const std::vector<Vec3> sites = {Vec3(0, 0, 1), Vec3(0.2, -0.1, 0.5), Vec3(0, 0, -1)};
  const auto occ = compute_occupancy(wall, cams, sites, 10.0);
  CHECK(occ.o[0] == 0);
  CHECK(occ.o[1] == 0);
  CHECK(occ.o[2] == 1);  // behind the wall in every view
  const auto empty = compute_occupancy(ExtractedMesh{}, cams, sites, 10.0);
  for (auto o : empty.o) CHECK(o == 0);
}

TEST_CASE("occupancy: cube centre is inside") {
  const auto cube = cube_mesh(0.5);
  double vol = 0;
  for (const auto& f : cube.faces)
    vol += cube.vertices[f[0]].dot(cube.vertices[f[1]].cross(cube.vertices[f[2]])) / 6.0;
  REQUIRE(vol == doctest::Approx(1.0));
  const std::vector<Vec3> sites = {Vec3::Zero(), Vec3(0.2, -0.3, 0.1), Vec3(0.7, 0, 0)};
  const auto occ = compute_occupancy(cube, axis_cameras(3.0, 32), sites, std::sqrt(3.0));
  for (std::size_t i = 0; i < sites.size(); ++i)
    CHECK(occ.o[i] == (inside_by_parity(cube, sites[i]) ? 1 : 0));
  CHECK(occ.o[0] == 1);
}

TEST_CASE("occupancy agrees with ray parity around a sphere") {
  const auto sphere = uv_sphere(1.0, 32, 64);
  std::vector<Camera> cams;
  for (int k = 0; k < 16; ++k) {
    const double ph = 2 * M_PI * k / 16;
    const double z = k % 2 ? 1.2 : -1.2;
    cams.push_back(look_at(Vec3(3 * std::cos(ph), 3 * std::sin(ph), z), Vec3::Zero(),
                           Vec3::UnitZ(), 64, 64, 48));
  }
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<Vec3> sites(1000);
  for (auto& p : sites) p = Vec3(u(rng), u(rng), u(rng));
  const double diag = 2 * std::sqrt(3.0), eps = 1e-4 * diag;
  const auto occ = compute_occupancy(sphere, cams, sites, diag);
  int agree = 0, counted = 0;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (std::abs(sites[i].norm() - 1.0) < 2 * eps + 2e-3) continue;  // faceting slack
    ++counted;
    agree += occ.o[i] == (inside_by_parity(sphere, sites[i]) ? 1 : 0);
  }
  MESSAGE("agreement " << agree << " / " << counted);
  CHECK(agree >= 0.98 * counted);
}

TEST_CASE("init_sdf: zero residual and deep occlusion") {
  // A large flat Gaussian in the plane z = 0 renders as that plane, so sites
  // on the plane sit exactly on the rendered surface in every view.
  Gaussian g;
  g.log_scale = Vec3(std::log(2.0), std::log(2.0), std::log(1e-3));
  g.logit_opacity = logit(0.95);
  const GaussianScene scene = {g};
  PivotSet piv;
  piv.sites = {Vec3(0.1, -0.05, 0), Vec3(0.02, 0.03, 0.6)};
  piv.provenance = {{0, 0}, {0, 1}};
  piv.selected = {0};
  const std::vector<Camera> cams = {
      look_at(Vec3(0, 0, -3), Vec3::Zero(), Vec3::UnitY(), 32, 32, 32),
      look_at(Vec3(0.3, 0.2, -3), Vec3(0.3, 0.2, 0), Vec3::UnitY(), 32, 32, 32)};
  const double tau = 0.1;
  const auto pre = init_sdf(scene, piv, cams, tau);
  CHECK(std::abs(std::tanh(pre[0])) < 1e-3);
  CHECK(std::tanh(pre[1]) == doctest::Approx(-(1 - 1e-6)).epsilon(1e-12));
  CHECK_THROWS_AS(init_sdf(scene, piv, std::vector<Camera>{cams[0]}, tau), InvalidArgument);
  CHECK(sdf_to_pre(5.0, 1.0) == doctest::Approx(std::atanh(1 - 1e-6)));
}

TEST_CASE("init_sdf sign agrees with the sphere on most sites") {
  // Surface-aligned flat Gaussians, the state the Gaussian-only phase of
  // training produces, and sites scattered within 2 tau of the surface.
  const auto b = make_synthetic_scene(ShapeSpec::parse("sphere:r=1"), 300, 16, 3);
  const ShapeSpec& shape = b.data.shape;
  GaussianScene disks;
  for (const auto& p : shape.sample_surface(300, 3)) {
    Gaussian g;
    g.mu = p;
    const Eigen::Quaterniond q =
        Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), shape.sdf_gradient(p));
    g.quat = Vec4(q.w(), q.x(), q.y(), q.z());
    g.log_scale = Vec3(std::log(0.2), std::log(0.2), std::log(0.01));
    g.logit_opacity = logit(0.9);
    disks.push_back(g);
  }
  const double tau = b.data.truncation();
  PivotSet piv;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  while (piv.sites.size() < 3000) {
    const Vec3 d(u(rng), u(rng), u(rng));
    if (d.norm() < 1e-3) continue;
    piv.sites.push_back(d.normalized() * (1 + 2 * tau * u(rng)));
    piv.provenance.push_back({0, 0});
  }
  const auto pre = init_sdf(disks, piv, b.data.cameras, tau);
  int agree = 0, counted = 0;
  for (std::size_t i = 0; i < piv.size(); ++i) {
    const double truth = b.data.sdf(piv.sites[i]);
    if (std::abs(truth) <= 0.1 * tau) continue;
    ++counted;
    agree += (truth > 0) == (std::tanh(pre[i]) > 0);
  }
  MESSAGE("sign agreement " << agree << " / " << counted);
  CHECK(agree >= 0.9 * counted);
}

TEST_CASE("combined loss uses the published weights") {
  LossWeights w;
  CHECK(w.lambda_rgb == 0.2);
  CHECK(w.lambda_n == 0.05);
  CHECK(w.lambda_md == 0.05);
  CHECK(w.lambda_mn == 0.05);
  CHECK(w.lambda_erosion == 0.005);
  CHECK(w.lambda_interior == 0.005);
  LossBreakdown t;
  t.photometric = t.normal = t.mesh_depth = t.mesh_normal = t.erosion = t.interior = 1.0;
  CHECK(combine_losses(t, w) == doctest::Approx(1.0 + 3 * 0.05 + 2 * 0.005).epsilon(1e-15));
  LossBreakdown zero;
  CHECK(combine_losses(zero, w) == 0.0);
  w.lambda_rgb = 1.5;
  CHECK_THROWS_AS(w.validate(), InvalidArgument);
  w.lambda_rgb = 0.2;
  w.lambda_md = -1;
  CHECK_THROWS_AS(w.validate(), InvalidArgument);
}

TEST_CASE("every loss is nonnegative on random inputs") {
  std::mt19937_64 rng(8);
  for (int inst = 0; inst < 20; ++inst) {
    const auto a = random_image(rng, 12, 12), b = random_image(rng, 12, 12);
    CHECK(loss_photometric(a, b, 0.2).value >= 0);
    const auto n = random_normals(rng, 12, 12, 0.3), m = random_normals(rng, 12, 12, 0.3);
    CHECK(loss_normal_consistency(n, m).value >= 0);
    CHECK(loss_mesh_normal(n, m).value >= 0);
  }
}
