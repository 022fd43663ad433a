#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "meshloop/scene.hpp"

namespace meshloop {

struct RenderOptions;

struct PivotRef {
  int gaussian = 0;
  int corner = 0;  // 0 = center, 1..8 = box corners
  bool operator==(const PivotRef&) const = default;
};

// Delaunay sites derived from the selected Gaussians, nine per Gaussian,
// laid out as sites[9 * j + corner] for selected[j].
struct PivotSet {
  std::vector<Vec3> sites;
  std::vector<PivotRef> provenance;
  std::vector<int> selected;

  std::size_t size() const { return sites.size(); }
};

// b_0 = 0 and b_1..b_8 = corner_mult * (+-1, +-1, +-1), signs in
// lexicographic order (-,-,-), (-,-,+), ..., (+,+,+). Antipodal corners are
// i and 9 - i.
std::array<Vec3, kSitesPerGaussian> unit_box_points(double corner_mult = 1.0);

PivotSet sample_pivots(const GaussianScene& scene, std::span<const int> selected,
                       double corner_mult = 1.0);

// d site / d (mu[3], quat[4], log_scale[3]) for one corner of one Gaussian.
using PivotJacobian = Eigen::Matrix<double, 3, 10>;
PivotJacobian pivot_jacobian(const Gaussian& g, int corner, double corner_mult = 1.0);

// Per-Gaussian accumulated blending weight (alpha * transmittance) over all
// pixels of all views, divided by the number of views.
std::vector<double> compute_importance(const GaussianScene& scene,
                                       std::span<const Camera> cameras,
                                       const RenderOptions& options);

// Weighted sampling without replacement (exponential race, key -ln(u)/score).
// Zero-score Gaussians are only drawn once every positive one is taken.
// Result is sorted ascending.
std::vector<int> select_pivot_gaussians(std::span<const double> scores, int budget,
                                        std::uint64_t seed);

// Keep only the listed Gaussians (in the listed order).
GaussianScene prune_scene(const GaussianScene& scene, std::span<const int> keep);

std::vector<int> all_indices(std::size_t n);

}  // namespace meshloop
