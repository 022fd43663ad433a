#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "meshloop/meshing.hpp"
#include "meshloop/pivots.hpp"
#include "meshloop/render.hpp"

namespace meshloop {

struct LossWeights {
  double lambda_rgb = 0.2;
  double lambda_n = 0.05;
  double lambda_md = 0.05;
  double lambda_mn = 0.05;
  double lambda_erosion = 0.005;
  double lambda_interior = 0.005;

  void validate() const;
};

// Per-term values of one evaluation. `photometric` already mixes l1 and
// dssim with lambda_rgb.
struct LossBreakdown {
  double l1 = 0, dssim = 0, photometric = 0;
  double normal = 0, mesh_depth = 0, mesh_normal = 0;
  double erosion = 0, interior = 0;
  double total = 0;
};

// total = photometric + lambda_n normal + lambda_md mesh_depth
//       + lambda_mn mesh_normal + lambda_erosion erosion + lambda_interior interior
double combine_losses(LossBreakdown& terms, const LossWeights& w);

struct PhotometricLoss {
  double value = 0, l1 = 0, dssim = 0;
  ColorImage grad;  // d value / d rendered
};

// (1 - lambda) L1 + lambda (1 - SSIM) / 2 with an 11x11 Gaussian window
// (sigma 1.5, zero padding), both averaged over pixels and channels.
PhotometricLoss loss_photometric(const ColorImage& rendered, const ColorImage& target,
                                 double lambda_rgb);
double ssim(const ColorImage& a, const ColorImage& b);

struct NormalLoss {
  double value = 0;
  NormalMap grad_a, grad_b;
};

// mean over all pixels of (1 - a . b), pixels where either normal is zero
// contributing nothing.
NormalLoss loss_normal_consistency(const NormalMap& n, const NormalMap& n_tilde);
NormalLoss loss_mesh_normal(const NormalMap& n_tilde, const NormalMap& n_mesh);

struct DepthLoss {
  double value = 0;
  DepthMap grad_d, grad_dm;
};

// Mean of log(1 + |D - D_M|) over pixels foreground in either map; pixels
// foreground in only one map cost log(1 + d_cap) with no gradient.
DepthLoss loss_mesh_depth(const DepthMap& d, const DepthMap& d_mesh, double d_cap);

struct SdfLoss {
  double value = 0;
  std::vector<double> grad_pre;  // d value / d sdf_pre, one per input entry
};

// Mean over `selected` of max(0, tanh(sdf_pre[0])) of each Gaussian.
SdfLoss loss_erosion(const GaussianScene& scene, std::span<const int> selected);

struct OccupancyLabels {
  std::vector<std::uint8_t> o;
  int last_update_iter = -1;
};

// A site is inside (o = 1) when at least one camera sees it and, for every
// camera whose image contains it, the mesh depth there is foreground and
// closer than the site by more than epsilon = 1e-4 * bbox_diag.
OccupancyLabels compute_occupancy(const ExtractedMesh& mesh, std::span<const Camera> cameras,
                                  std::span<const Vec3> sites, double bbox_diag, int iter = 0);

// Mean over inside sites of softplus(f), f the activated SDF value of the
// site; grad_pre is per site.
SdfLoss loss_interior(const GaussianScene& scene, const PivotSet& pivots,
                      const OccupancyLabels& occupancy);

// Site SDF initialization from rendered Gaussian depth. Per view the signed
// difference D(pixel) - z(site) is taken; views where the site projects to
// background count as +tau, views where it is more than tau behind the
// surface are skipped as occluded. The view average is clamped to [-tau, tau];
// a site only ever seen occluded gets -tau, a site seen by no view +tau / 2.
// Returns pre-activation values atanh(sdf / tau * (1 - 1e-6)), one per site.
std::vector<double> init_sdf(const GaussianScene& scene, const PivotSet& pivots,
                             std::span<const Camera> cameras, double tau,
                             const RenderOptions& options = {});

// Pre-activation value for a clamped signed distance.
double sdf_to_pre(double sdf, double tau);

}  // namespace meshloop
