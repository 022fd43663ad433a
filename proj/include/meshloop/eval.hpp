#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "meshloop/meshing.hpp"
#include "meshloop/render.hpp"

namespace meshloop {

// Area-weighted uniform samples on the mesh surface.
std::vector<Vec3> sample_mesh(const ExtractedMesh& mesh, std::size_t n, std::uint64_t seed);

struct GeometryMetrics {
  double accuracy = 0;      // mean distance mesh samples -> gt
  double completeness = 0;  // mean distance gt -> mesh samples
  double chamfer = 0;       // (accuracy + completeness) / 2
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

// Point-set versions, exact via k-d trees.
GeometryMetrics compare_point_sets(std::span<const Vec3> pred, std::span<const Vec3> gt,
                                   double threshold);

double chamfer(const ExtractedMesh& mesh, std::span<const Vec3> gt, std::size_t n_samples,
               std::uint64_t seed);
double f1_score(const ExtractedMesh& mesh, std::span<const Vec3> gt, double threshold,
                std::size_t n_samples = 100000, std::uint64_t seed = 0);
GeometryMetrics evaluate_geometry(const ExtractedMesh& mesh, std::span<const Vec3> gt,
                                  double threshold, std::size_t n_samples = 100000,
                                  std::uint64_t seed = 0);

// RGB voxel grid over an axis-aligned box, queried by trilinear interpolation.
class ColorField {
 public:
  ColorField() = default;
  ColorField(int n, const Vec3& lo, const Vec3& hi);

  int resolution() const { return n_; }
  const Vec3& lo() const { return lo_; }
  const Vec3& hi() const { return hi_; }
  Vec3 query(const Vec3& p) const;
  Vec3& voxel(int i, int j, int k) { return grid_[index(i, j, k)]; }
  const Vec3& voxel(int i, int j, int k) const { return grid_[index(i, j, k)]; }

  // Eight (voxel index, weight) pairs for trilinear interpolation at p.
  void stencil(const Vec3& p, std::array<std::size_t, 8>& idx, std::array<double, 8>& w) const;
  std::vector<Vec3>& data() { return grid_; }
  const std::vector<Vec3>& data() const { return grid_; }

 private:
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * n_ + j) * n_ + i;
  }
  int n_ = 0;
  Vec3 lo_ = Vec3::Zero(), hi_ = Vec3::Ones();
  std::vector<Vec3> grid_;
};

struct ColorFieldOptions {
  int n_grid = 64;
  int iters = 2000;
  double lr = 0.02;
};

// Fits grid colors to the target pixels of every view whose ray hits the
// mesh (surface point from the rasterized depth). Unobserved voxels stay at
// 0.5 gray.
ColorField fit_color_field(const ExtractedMesh& mesh, std::span<const Camera> cameras,
                           std::span<const ColorImage> images,
                           const ColorFieldOptions& options = {});

ColorImage render_mesh_colors(const ExtractedMesh& mesh, const ColorField& field,
                              const Camera& cam, const Vec3& background);

// PSNR on [0, 1] images, MSE floored at 1e-10 (100 dB cap).
double psnr(const ColorImage& a, const ColorImage& b);

std::vector<double> mesh_nvs_psnr(const ExtractedMesh& mesh, const ColorField& field,
                                  std::span<const Camera> cameras,
                                  std::span<const ColorImage> images, const Vec3& background);

struct MeshStats {
  std::size_t n_vertices = 0;
  std::size_t n_faces = 0;
  int n_interior_components = 0;
};

struct MetricsReport {
  std::optional<double> chamfer;
  std::optional<double> f1;
  std::vector<double> per_view_psnr;
  double mean_psnr = 0;
  MeshStats mesh_stats;
};

void write_metrics_json(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_metrics_json(const std::filesystem::path& path);

}  // namespace meshloop
