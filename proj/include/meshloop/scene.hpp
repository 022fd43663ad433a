#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "meshloop/common.hpp"

namespace meshloop {

inline constexpr int kSitesPerGaussian = 9;

// One anisotropic Gaussian. Opacity and scale are stored pre-activation;
// SDF values are stored pre-tanh.
struct Gaussian {
  Vec3 mu = Vec3::Zero();
  Vec4 quat = Vec4(1, 0, 0, 0);  // (w, x, y, z), unit after every step
  Vec3 log_scale = Vec3::Zero();
  double logit_opacity = 0.0;
  Vec3 color = Vec3::Constant(0.5);
  std::array<double, kSitesPerGaussian> sdf_pre{};

  Mat3 rotation() const;
  Vec3 scale() const { return log_scale.array().exp(); }
  double opacity() const { return sigmoid(logit_opacity); }
  double sdf(int corner) const { return std::tanh(sdf_pre[corner]); }
  Mat3 covariance() const;
  bool operator==(const Gaussian&) const = default;
};

using GaussianScene = std::vector<Gaussian>;

// Rotation matrix of a (not necessarily normalized) quaternion (w, x, y, z).
template <class T>
Eigen::Matrix<T, 3, 3> quat_to_rotation(const T& w0, const T& x0, const T& y0,
                                        const T& z0) {
  using std::sqrt;
  const T n = sqrt(w0 * w0 + x0 * x0 + y0 * y0 + z0 * z0);
  const T w = w0 / n, x = x0 / n, y = y0 / n, z = z0 / n;
  Eigen::Matrix<T, 3, 3> r;
  r(0, 0) = 1.0 - 2.0 * (y * y + z * z);
  r(0, 1) = 2.0 * (x * y - w * z);
  r(0, 2) = 2.0 * (x * z + w * y);
  r(1, 0) = 2.0 * (x * y + w * z);
  r(1, 1) = 1.0 - 2.0 * (x * x + z * z);
  r(1, 2) = 2.0 * (y * z - w * x);
  r(2, 0) = 2.0 * (x * z - w * y);
  r(2, 1) = 2.0 * (y * z + w * x);
  r(2, 2) = 1.0 - 2.0 * (x * x + y * y);
  return r;
}

// Pinhole camera. Right-handed camera frame looking down +z, x right,
// y down. Depth means camera-frame z. Pixel (i, j) has its center at
// (i + 0.5, j + 0.5).
struct Camera {
  int width = 64;
  int height = 64;
  double fx = 64, fy = 64, cx = 32, cy = 32;
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }
  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec2 project(const Vec3& cam) const {
    return {fx * cam.x() / cam.z() + cx, fy * cam.y() / cam.z() + cy};
  }
  // Camera-frame direction with unit z through image point (u, v).
  Vec3 ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }
  // Pixel containing the camera-frame point, or false when outside the image
  // or behind the camera.
  bool pixel_of(const Vec3& cam, int& px, int& py) const;
  void validate() const;
};

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width,
               int height, double focal);

// Analytic shapes. Signed distance is negative inside.
struct Primitive {
  enum class Kind { kSphere, kTorus, kBox };
  Kind kind = Kind::kSphere;
  Vec3 center = Vec3::Zero();
  double radius = 1.0;        // sphere radius, torus major radius
  double minor_radius = 0.3;  // torus tube radius
  Vec3 half_extent = Vec3::Ones();

  double sdf(const Vec3& p) const;
  void bounds(Vec3& lo, Vec3& hi) const;
  double area() const;
  Vec3 sample_surface(std::mt19937_64& rng) const;
};

struct ShapeSpec {
  std::vector<Primitive> parts;  // union

  static ShapeSpec parse(const std::string& text);
  std::string to_string() const;

  double sdf(const Vec3& p) const;
  Vec3 sdf_gradient(const Vec3& p) const;
  void bounds(Vec3& lo, Vec3& hi) const;
  double bbox_diagonal() const;
  Vec3 centroid() const;
  // Radius of the smallest origin-at-centroid ball containing the bounds.
  double radius() const;
  // Typical feature size used for relative tolerances.
  double feature_size() const;
  std::vector<Vec3> sample_surface(std::size_t n, std::uint64_t seed) const;
  // First ray hit (t along dir) or a negative value on miss.
  double intersect(const Vec3& origin, const Vec3& dir, double t_max) const;
  Vec3 albedo(const Vec3& p) const;
};

struct SyntheticOptions {
  int width = 64;
  int height = 64;
  double init_band = 0.05;       // |sdf(mu)| bound, fraction of bbox diagonal
  double camera_distance = 3.0;  // multiples of shape radius
  double fill = 0.75;            // fraction of the half-image the shape spans
  int supersample = 2;
  Vec3 background = Vec3::Zero();
  std::size_t n_gt_samples = 50000;
};

struct SyntheticScene {
  ShapeSpec shape;
  std::vector<Camera> cameras;
  std::vector<ColorImage> images;
  Vec3 background = Vec3::Zero();
  std::vector<Vec3> gt_samples;

  double sdf(const Vec3& p) const { return shape.sdf(p); }
  double bbox_diagonal() const { return shape.bbox_diagonal(); }
  // Truncation distance of the normalized SDF: 5% of the bbox diagonal.
  double truncation() const { return 0.05 * bbox_diagonal(); }
  // Every 8th view is held out for testing.
  static bool is_test_view(std::size_t i) { return i % 8 == 0; }
  std::vector<std::size_t> train_views() const;
  std::vector<std::size_t> test_views() const;
};

struct SceneBundle {
  SyntheticScene data;
  GaussianScene gaussians;
};

SceneBundle make_synthetic_scene(const ShapeSpec& shape, int n_gaussians,
                                 int n_cameras, std::uint64_t seed,
                                 const SyntheticOptions& options = {});

// Ray-marched ground truth image: albedo times two-sided Lambert shading
// under a fixed world-space light (view-independent), supersample^2 rays
// per pixel.
ColorImage render_analytic(const ShapeSpec& shape, const Camera& cam,
                           const Vec3& background, int supersample);

// Binary scene file: "MILOSCN1", u64 count, 23 little-endian float64 per
// Gaussian (mu, quat, log_scale, logit_opacity, rgb, sdf_pre).
inline constexpr std::size_t kSceneHeaderBytes = 16;
inline constexpr std::size_t kSceneRecordBytes = 23 * 8;
void save_scene(const GaussianScene& scene, const std::filesystem::path& path);
GaussianScene load_scene(const std::filesystem::path& path);

// Camera JSON sidecar with row-major intrinsics (3x3) and extrinsics (4x4).
void save_cameras(const std::vector<Camera>& cams, const std::filesystem::path& path);
std::vector<Camera> load_cameras(const std::filesystem::path& path);

// Float64 RGB image stack: "MILOIMG1", u32 count, then per image u32 w,h
// followed by w*h*3 doubles.
void save_images(const std::vector<ColorImage>& images, const std::filesystem::path& path);
std::vector<ColorImage> load_images(const std::filesystem::path& path);

// Whole synthetic dataset as a directory (cameras.json, images.bin,
// shape.txt, gt_samples.bin).
void save_dataset(const SyntheticScene& scene, const std::filesystem::path& dir);
SyntheticScene load_dataset(const std::filesystem::path& dir);

struct BoundingBox {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
  void extend(const Vec3& p) { lo = lo.cwiseMin(p); hi = hi.cwiseMax(p); }
  double diagonal() const { return (hi - lo).norm(); }
  bool valid() const { return (hi.array() >= lo.array()).all(); }
};

BoundingBox bounds_of(const std::vector<Vec3>& pts);

}  // namespace meshloop
