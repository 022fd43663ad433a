#include <doctest.h>

#include <set>

#include "meshloop/pivots.hpp"
#include "meshloop/render.hpp"
#include "support.hpp"

using namespace meshloop;
using namespace testing_support;

namespace {

// Rotation built from the axis-angle form, independent of the quaternion
// formula used by the library.
Mat3 axis_angle_matrix(const Vec4& q) {
  const Vec4 u = q.normalized();
  const double angle = 2 * std::acos(std::clamp(u[0], -1.0, 1.0));
  const Vec3 axis = u.tail<3>().norm() > 0 ? Vec3(u.tail<3>().normalized()) : Vec3::UnitX();
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 k;
  k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Mat3::Identity() * c + s * k + (1 - c) * axis * axis.transpose();
}

// 8x8 image whose pixel (4, 4) looks down the optical axis; neighbouring
// pixel rays diverge so fast that only that pixel sees anything near it.
Camera one_pixel_camera() {
  Camera cam;
  cam.width = cam.height = 8;
  cam.fx = cam.fy = 0.05;
  cam.cx = cam.cy = 4.5;
  return cam;
}

Gaussian disk_at(const Vec3& mu, double scale, double opacity) {
  Gaussian g;
  g.mu = mu;
  g.log_scale = Vec3::Constant(std::log(scale));
  g.logit_opacity = logit(opacity);
  return g;
}

}  // namespace

TEST_CASE("unit box corners: lexicographic signs and antipodes") {
  const auto b = unit_box_points(1.0);
  CHECK(b[0] == Vec3::Zero());
  CHECK(b[1] == Vec3(-1, -1, -1));
  CHECK(b[2] == Vec3(-1, -1, 1));
  CHECK(b[8] == Vec3(1, 1, 1));
  for (int i = 1; i <= 8; ++i) CHECK(b[i] + b[9 - i] == Vec3::Zero());
  CHECK(unit_box_points(2.5)[3] == Vec3(-2.5, 2.5, -2.5));
}

TEST_CASE("sample_pivots: identity Gaussian gives the unit cube") {
  GaussianScene scene(1);
  const std::vector<int> sel = {0};
  const auto p = sample_pivots(scene, sel);
  REQUIRE(p.size() == 9);
  CHECK(p.sites[0] == Vec3::Zero());
  std::set<std::array<double, 3>> corners;
  for (int i = 1; i < 9; ++i) {
    CHECK(p.sites[i].cwiseAbs() == Vec3::Ones());
    corners.insert({p.sites[i].x(), p.sites[i].y(), p.sites[i].z()});
  }
  CHECK(corners.size() == 8);
  for (int i = 0; i < 9; ++i) CHECK(p.provenance[i] == PivotRef{0, i});
}

TEST_CASE("sample_pivots: componentwise scaling") {
  GaussianScene scene(1);
  scene[0].mu = Vec3(1, 2, 3);
  scene[0].log_scale = Vec3(std::log(2.0), 0, 0);
  const std::vector<int> sel = {0};
  const auto p = sample_pivots(scene, sel);
  CHECK((p.sites[8] - Vec3(3, 3, 4)).norm() < 1e-15);
}

TEST_CASE("sample_pivots agrees with an axis-angle rotation oracle") {
  std::mt19937_64 rng(3);
  GaussianScene scene;
  for (int i = 0; i < 20; ++i) scene.push_back(random_gaussian(rng, 2.0, 0.1, 1.5, 0.1, 0.9));
  const auto sel = all_indices(scene.size());
  const double mult = 1.7;
  const auto p = sample_pivots(scene, sel, mult);
  const auto b = unit_box_points(mult);
  double worst = 0;
  for (std::size_t j = 0; j < scene.size(); ++j) {
    const Mat3 r = axis_angle_matrix(scene[j].quat);
    for (int i = 0; i < 9; ++i) {
      const Vec3 expect = scene[j].mu + r * scene[j].scale().cwiseProduct(b[i]);
      worst = std::max(worst, (p.sites[9 * j + i] - expect).cwiseAbs().maxCoeff());
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("corner sites form a parallelepiped centred on mu") {
  std::mt19937_64 rng(4);
  GaussianScene scene;
  for (int i = 0; i < 30; ++i) scene.push_back(random_gaussian(rng, 1.0, 0.01, 2.0, 0.1, 0.9));
  const auto p = sample_pivots(scene, all_indices(scene.size()));
  for (std::size_t j = 0; j < scene.size(); ++j) {
    const Vec3 sum = p.sites[9 * j + 1] + p.sites[9 * j + 8];
    for (int i = 2; i <= 4; ++i)
      CHECK((p.sites[9 * j + i] + p.sites[9 * j + 9 - i] - sum).norm() < 1e-12);
    CHECK((sum - 2 * scene[j].mu).norm() < 1e-12);
  }
}

TEST_CASE("pivot jacobian matches central differences") {
  std::mt19937_64 rng(5);
  double worst = 0;
  for (int inst = 0; inst < 20; ++inst) {
    Gaussian g = random_gaussian(rng, 1.0, 0.2, 1.5, 0.1, 0.9);
    g.quat *= 1.3;  // the jacobian is taken w.r.t. the unnormalized quaternion
    for (int corner = 0; corner < 9; ++corner) {
      const auto jac = pivot_jacobian(g, corner, 1.2);
      std::vector<double*> params;
      for (int k = 0; k < 3; ++k) params.push_back(&g.mu[k]);
      for (int k = 0; k < 4; ++k) params.push_back(&g.quat[k]);
      for (int k = 0; k < 3; ++k) params.push_back(&g.log_scale[k]);
      for (int c = 0; c < 3; ++c) {
        const auto fd = fd_gradient(params, [&] {
          GaussianScene s = {g};
          const std::vector<int> sel = {0};
          return sample_pivots(s, sel, 1.2).sites[corner][c];
        }, 1e-5);
        std::vector<double> an(10);
        for (int k = 0; k < 10; ++k) an[k] = jac(c, k);
        worst = std::max(worst, rel_err(an, fd, 1e-8));
      }
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("sample_pivots errors") {
  GaussianScene scene(2);
  const std::vector<int> bad = {2}, neg = {-1}, none = {};
  CHECK_THROWS_AS(sample_pivots(scene, bad), InvalidArgument);
  CHECK_THROWS_AS(sample_pivots(scene, neg), InvalidArgument);
  CHECK_THROWS_AS(sample_pivots(scene, none), InvalidArgument);
  const std::vector<int> ok = {0};
  CHECK_THROWS_AS(sample_pivots(scene, ok, 0.0), InvalidArgument);
}

TEST_CASE("importance: sole contributor") {
  const Camera cam = test_camera(Vec3(0, 0, -4), 16, 16, 16);
  const GaussianScene scene = {disk_at(Vec3::Zero(), 3.0, 0.9)};
  const std::vector<Camera> cams = {cam};
  const auto s = compute_importance(scene, cams, RenderOptions{});
  REQUIRE(s.size() == 1);
  CHECK(s[0] > 0);
}

TEST_CASE("importance: occluded Gaussian on a single pixel") {
  const Camera cam = one_pixel_camera();
  RenderOptions opt;
  opt.alpha_max = 0.9999;
  opt.t_min = 1e-6;  // keep compositing past the occluder
  opt.dilation = 0;
  // Both centres project onto the pixel centre, so G2D = 1 for each.
  const GaussianScene scene = {disk_at(Vec3(0, 0, 2), 0.5, 0.99999), disk_at(Vec3(0, 0, 5), 0.5, 0.8)};
  const std::vector<Camera> cams = {cam};
  const auto s = compute_importance(scene, cams, opt);
  // Front: w = 0.9999 (clamped). Back: w = (1 - 0.9999) * 0.8.
  CHECK(s[0] == doctest::Approx(0.9999).epsilon(1e-9));
  CHECK(s[1] == doctest::Approx(1e-4 * 0.8).epsilon(1e-6));
  CHECK(s[1] < 1e-3 * s[0]);
}

TEST_CASE("importance scales with pixel count") {
  const GaussianScene scene = {disk_at(Vec3(0.2, 0, 0), 0.3, 0.6), disk_at(Vec3(-0.3, 0.1, 0.5), 0.4, 0.7)};
  const std::vector<Camera> lo = {test_camera(Vec3(0, 0, -4), 32, 32, 32)};
  const std::vector<Camera> hi = {test_camera(Vec3(0, 0, -4), 64, 64, 64)};
  const auto a = compute_importance(scene, lo, RenderOptions{});
  const auto b = compute_importance(scene, hi, RenderOptions{});
  for (int k = 0; k < 2; ++k) CHECK(b[k] / a[k] == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("importance: invisible Gaussian scores zero, averaging over views") {
  const GaussianScene scene = {disk_at(Vec3::Zero(), 0.5, 0.8), disk_at(Vec3(0, 0, -10), 0.5, 0.8)};
  const Camera cam = test_camera(Vec3(0, 0, -4));
  const std::vector<Camera> one = {cam}, two = {cam, cam};
  const auto a = compute_importance(scene, one, RenderOptions{});
  const auto b = compute_importance(scene, two, RenderOptions{});
  CHECK(a[1] == 0.0);  // behind the camera
  CHECK(a[0] == b[0]);
  CHECK_THROWS_AS(compute_importance(scene, std::vector<Camera>{}, RenderOptions{}), InvalidArgument);
}

TEST_CASE("selection: exhaustive and degenerate cases") {
  const std::vector<double> pos = {0.3, 1.0, 2.0, 0.1};
  CHECK(select_pivot_gaussians(pos, 4, 0) == std::vector<int>{0, 1, 2, 3});
  const std::vector<double> degen = {1, 0, 0};
  for (std::uint64_t seed = 0; seed < 50; ++seed)
    CHECK(select_pivot_gaussians(degen, 1, seed) == std::vector<int>{0});
  // Zero scores fill up only after every positive one.
  const auto two = select_pivot_gaussians(degen, 2, 1);
  CHECK(two.size() == 2);
  CHECK(two[0] == 0);
}

TEST_CASE("selection frequency follows the scores") {
  const std::vector<double> s = {3, 1};
  int zero = 0;
  const int n = 100000;
  for (int seed = 0; seed < n; ++seed)
    if (select_pivot_gaussians(s, 1, static_cast<std::uint64_t>(seed))[0] == 0) ++zero;
  const double freq = static_cast<double>(zero) / n;
  CHECK(freq >= 0.74);
  CHECK(freq <= 0.76);
}

TEST_CASE("selection is reproducible, distinct and sorted") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(500);
  for (auto& v : s) v = u(rng) < 0.2 ? 0.0 : u(rng);
  const auto a = select_pivot_gaussians(s, 120, 42), b = select_pivot_gaussians(s, 120, 42);
  CHECK(a == b);
  CHECK(std::is_sorted(a.begin(), a.end()));
  CHECK(std::set<int>(a.begin(), a.end()).size() == 120);
  for (int k : a) CHECK(s[k] > 0);
}

TEST_CASE("selection errors and pruning") {
  const std::vector<double> s = {1, 2};
  CHECK_THROWS_AS(select_pivot_gaussians(s, 3, 0), InvalidArgument);
  CHECK_THROWS_AS(select_pivot_gaussians(s, 0, 0), InvalidArgument);
  GaussianScene scene(4);
  for (int i = 0; i < 4; ++i) scene[i].mu = Vec3(i, 0, 0);
  const std::vector<int> keep = {3, 1};
  const auto pruned = prune_scene(scene, keep);
  REQUIRE(pruned.size() == 2);
  CHECK(pruned[0].mu.x() == 3);
  CHECK(pruned[1].mu.x() == 1);
}
