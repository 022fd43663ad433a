#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "meshloop/scene.hpp"

namespace meshloop {

inline constexpr double kBackgroundDepth = std::numeric_limits<double>::infinity();

struct RenderOptions {
  Vec3 background = Vec3::Zero();
  // Accumulated alpha a pixel needs before its expected depth counts.
  double fg_alpha = 0.5;
  double t_min = 1e-4;      // stop compositing once transmittance drops below
  double alpha_max = 0.99;
  double dilation = 0.3;    // px^2 added to the projected covariance
  double cutoff_sigma = 3.0;
  double near = 1e-2;       // Gaussians closer than this are culled
};

// Depth is camera z (kBackgroundDepth where nothing was hit), normals are
// camera-frame unit vectors (zero at background).
struct RenderBuffers {
  DepthMap depth;
  NormalMap normal;
  ColorImage color;
  Grid<double> alpha;
};

// Upstream gradients for the Gaussian renderer; empty grids mean zero.
struct RenderGradIn {
  DepthMap depth;
  NormalMap normal;
  ColorImage color;
};

struct GaussianGrad {
  Vec3 mu = Vec3::Zero();
  Vec4 quat = Vec4::Zero();
  Vec3 log_scale = Vec3::Zero();
  double logit_opacity = 0.0;
  Vec3 color = Vec3::Zero();
  std::array<double, kSitesPerGaussian> sdf_pre{};

  GaussianGrad& operator+=(const GaussianGrad& o);
};
using SceneGrad = std::vector<GaussianGrad>;

// Projected footprint of one Gaussian and its derivatives with respect to
// (mu[3], quat[4], log_scale[3]). Outputs are ordered mean2d[2],
// conic[3] (a, b, c of a dx^2 + 2 b dx dy + c dy^2), depth_b[3], depth_a[6],
// normal[3].
//
// A pixel sees the Gaussian at the camera z of the density maximum along its
// ray, z = d.b / d^T A d for d = ray(u, v), A = Sigma^-1 (camera frame, upper
// triangle stored row-wise) and b = A t. A flat Gaussian thus renders as its
// plane; z (of the mean) is only the sort key.
struct Splat {
  static constexpr int kOutputs = 17;
  bool visible = false;
  Vec2 mean = Vec2::Zero();
  Eigen::Vector3d conic = Eigen::Vector3d::Zero();
  double z = 0.0;
  Vec3 depth_b = Vec3::Zero();
  Eigen::Matrix<double, 6, 1> depth_a = Eigen::Matrix<double, 6, 1>::Zero();
  Vec3 normal = Vec3::Zero();
  double radius = 0.0;  // bounding radius in pixels at the cutoff
  Eigen::Matrix<double, kOutputs, 10> jacobian = Eigen::Matrix<double, kOutputs, 10>::Zero();
};

Splat project_gaussian(const Gaussian& g, const Camera& cam, const RenderOptions& options,
                       bool with_jacobian);

// Front-to-back alpha compositing of EWA splats.
RenderBuffers render_gaussians(const GaussianScene& scene, const Camera& cam,
                               const RenderOptions& options = {});

// Gradient of a loss with respect to every Gaussian given dL/d(buffers).
SceneGrad render_gaussians_backward(const GaussianScene& scene, const Camera& cam,
                                    const RenderGradIn& upstream,
                                    const RenderOptions& options = {});

// Sum over pixels of alpha * transmittance per Gaussian.
std::vector<double> blend_weights(const GaussianScene& scene, const Camera& cam,
                                  const RenderOptions& options = {});

struct MeshRender {
  DepthMap depth;
  NormalMap normal;
  Grid<int> face;  // winning face or -1
};

// Z-buffered rasterization with the top-left fill rule. Triangles with a
// vertex closer than `near` are skipped (no clipping).
MeshRender rasterize_mesh(std::span<const Vec3> vertices, std::span<const Face> faces,
                          const Camera& cam, double near = 1e-2);

// dL/d(vertex) through the winning triangle of each pixel (hard visibility).
// Either gradient grid may be empty.
std::vector<Vec3> rasterize_mesh_backward(std::span<const Vec3> vertices,
                                          std::span<const Face> faces, const Camera& cam,
                                          const MeshRender& render, const DepthMap& grad_depth,
                                          const NormalMap& grad_normal);

// 3x3 binomial blur applied where the full neighbourhood is foreground.
DepthMap antialias_depth(const DepthMap& depth);
DepthMap antialias_depth_backward(const DepthMap& depth, const DepthMap& grad_out);

// Normals from finite differences of back-projected depth. Uses the +x / +y
// neighbour, falling back to the -x / -y one at borders and next to
// background; pixels with no usable neighbour on an axis get a zero normal.
NormalMap depth_to_normal(const DepthMap& depth, const Camera& cam);
DepthMap depth_to_normal_backward(const DepthMap& depth, const Camera& cam,
                                  const NormalMap& grad_normal);

// 8-bit PNG dumps. Depth is mapped linearly from [min, max] of the foreground
// to [255, 0] (near is bright), background black. Normals map [-1, 1] to
// [0, 255]. Colors are clamped to [0, 1].
void write_png(const ColorImage& image, const std::filesystem::path& path);
ColorImage depth_to_image(const DepthMap& depth);
ColorImage normal_to_image(const NormalMap& normal);

}  // namespace meshloop
