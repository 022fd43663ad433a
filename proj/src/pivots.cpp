#include "meshloop/pivots.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "meshloop/dual.hpp"
#include "meshloop/render.hpp"

namespace meshloop {

std::array<Vec3, kSitesPerGaussian> unit_box_points(double corner_mult) {
  std::array<Vec3, kSitesPerGaussian> b;
  b[0] = Vec3::Zero();
  for (int i = 0; i < 8; ++i) {
    b[i + 1] = corner_mult * Vec3((i & 4) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0,
                                  (i & 1) ? 1.0 : -1.0);
  }
  return b;
}

PivotSet sample_pivots(const GaussianScene& scene, std::span<const int> selected,
                       double corner_mult) {
  require(!selected.empty(), "pivot selection is empty");
  require(corner_mult > 0, "corner_mult must be positive");
  const auto box = unit_box_points(corner_mult);
  PivotSet out;
  out.selected.assign(selected.begin(), selected.end());
  out.sites.reserve(selected.size() * kSitesPerGaussian);
  out.provenance.reserve(selected.size() * kSitesPerGaussian);
  for (int k : selected) {
    if (k < 0 || static_cast<std::size_t>(k) >= scene.size())
      throw InvalidArgument("selected Gaussian index out of range: " + std::to_string(k));
    const Gaussian& g = scene[k];
    const Mat3 r = g.rotation();
    const Vec3 s = g.scale();
    for (int i = 0; i < kSitesPerGaussian; ++i) {
      out.sites.push_back(g.mu + r * s.cwiseProduct(box[i]));
      out.provenance.push_back({k, i});
    }
  }
  return out;
}

PivotJacobian pivot_jacobian(const Gaussian& g, int corner, double corner_mult) {
  using D = Dual<4>;
  const Vec3 b = unit_box_points(corner_mult)[corner];
  const auto r = quat_to_rotation(D::variable(g.quat[0], 0), D::variable(g.quat[1], 1),
                                  D::variable(g.quat[2], 2), D::variable(g.quat[3], 3));
  const Vec3 sb = g.scale().cwiseProduct(b);
  PivotJacobian j = PivotJacobian::Zero();
  j.block<3, 3>(0, 0) = Mat3::Identity();
  for (int row = 0; row < 3; ++row) {
    D acc(0.0);
    for (int c = 0; c < 3; ++c) acc += r(row, c) * sb[c];
    j.block<1, 4>(row, 3) = acc.d.transpose();
  }
  // d/d log_scale of R (s * b) = R diag(s * b)
  const Mat3 rv = g.rotation();
  j.block<3, 3>(0, 7) = rv * sb.asDiagonal();
  return j;
}

std::vector<double> compute_importance(const GaussianScene& scene,
                                       std::span<const Camera> cameras,
                                       const RenderOptions& options) {
  require(!cameras.empty(), "compute_importance needs at least one camera");
  std::vector<double> score(scene.size(), 0.0);
  for (const auto& cam : cameras) {
    const auto w = blend_weights(scene, cam, options);
    for (std::size_t k = 0; k < score.size(); ++k) score[k] += w[k];
  }
  for (double& s : score) s /= static_cast<double>(cameras.size());
  return score;
}

std::vector<int> select_pivot_gaussians(std::span<const double> scores, int budget,
                                        std::uint64_t seed) {
  const int n = static_cast<int>(scores.size());
  require(budget >= 1, "pivot budget must be >= 1");
  if (budget > n)
    throw InvalidArgument("pivot budget " + std::to_string(budget) +
                          " exceeds number of Gaussians " + std::to_string(n));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  struct Key {
    int tier;  // 0 = positive score, 1 = zero score
    double key;
    int index;
  };
  std::vector<Key> keys(n);
  for (int k = 0; k < n; ++k) {
    double u = uni(rng);
    while (u <= 0.0) u = uni(rng);
    const double s = scores[k];
    if (!(s >= 0.0)) throw InvalidArgument("importance scores must be nonnegative");
    keys[k] = s > 0 ? Key{0, -std::log(u) / s, k} : Key{1, u, k};
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    if (a.tier != b.tier) return a.tier < b.tier;
    if (a.key != b.key) return a.key < b.key;
    return a.index < b.index;
  });
  std::vector<int> out(budget);
  for (int i = 0; i < budget; ++i) out[i] = keys[i].index;
  std::sort(out.begin(), out.end());
  return out;
}

GaussianScene prune_scene(const GaussianScene& scene, std::span<const int> keep) {
  GaussianScene out;
  out.reserve(keep.size());
  for (int k : keep) {
    require(k >= 0 && static_cast<std::size_t>(k) < scene.size(), "prune index out of range");
    out.push_back(scene[k]);
  }
  return out;
}

std::vector<int> all_indices(std::size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace meshloop
