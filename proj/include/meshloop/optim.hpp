#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "meshloop/losses.hpp"

namespace meshloop {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

struct AdamState {
  std::vector<double> m, v;
  long step = 0;

  void reset(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    step = 0;
  }
};

// Bias-corrected Adam. `group` names the parameters in error messages.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const std::string& group, const AdamOptions& options = {});

struct LearningRates {
  double position = 1.6e-4;        // times bbox diagonal, decays to position_final
  double position_final = 1.6e-6;  // times bbox diagonal
  double scale = 5e-3;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double color = 2.5e-3;
  double sdf = 0.025;
};

enum class PivotMode { kBase, kDense };

struct TrainConfig {
  int iters_total = 2000;
  int iter_mesh_start = 800;
  int delaunay_refresh_every = 500;
  int occupancy_refresh_every = 200;
  int normal_warmup = -1;  // -1: iter_mesh_start / 3
  LearningRates lr;
  LossWeights weights;
  PivotMode mode = PivotMode::kBase;
  int pivot_budget = 0;  // 0: every Gaussian
  double corner_mult = 1.0;
  bool antialias = true;
  std::uint64_t seed = 0;
  RenderOptions render;
  int checkpoint_every = 0;  // 0: off
  std::filesystem::path checkpoint_dir;

  void validate() const;
  int normal_start() const { return normal_warmup >= 0 ? normal_warmup : iter_mesh_start / 3; }
};

// Inputs of one loss evaluation besides the scene itself.
struct StepContext {
  const Camera* camera = nullptr;
  const ColorImage* target = nullptr;
  LossWeights weights;
  RenderOptions render;
  bool normal_loss = false;
  bool mesh_losses = false;
  // Mesh phase only.
  std::span<const int> selected;
  std::span<const Tet> tets;
  const OccupancyLabels* occupancy = nullptr;
  double corner_mult = 1.0;
  double depth_cap = 1.0;
  bool antialias = true;
};

struct StepResult {
  LossBreakdown terms;
  SceneGrad grad;
  PivotSet pivots;
  ExtractedMesh mesh;
};

// Total loss and its gradient with respect to every Gaussian parameter,
// with the tetrahedralization held fixed.
StepResult loss_and_gradient(const GaussianScene& scene, const StepContext& ctx);

struct LossRecord {
  int iter = 0;
  LossBreakdown terms;
};

struct TrainResult {
  GaussianScene scene;
  ExtractedMesh mesh;
  PivotSet pivots;
  std::vector<int> selected;  // indices into `scene`
  OccupancyLabels occupancy;
  std::vector<LossRecord> history;
};

using TrainObserver = std::function<void(int iter, const LossBreakdown&)>;

TrainResult train(GaussianScene scene, const SyntheticScene& data, const TrainConfig& cfg,
                  const TrainObserver& observer = {});

// Mesh of the current pivots: fresh Delaunay + marching tetrahedra.
ExtractedMesh extract_mesh(const GaussianScene& scene, std::span<const int> selected,
                           double corner_mult, std::uint64_t seed, PivotSet* pivots = nullptr,
                           std::vector<Tet>* tets = nullptr);

// Fraction of the given Gaussians whose center SDF value is positive.
double positive_center_fraction(const GaussianScene& scene, std::span<const int> selected);

// iter, l1, dssim, normal, mesh_depth, mesh_normal, erosion, interior, total
void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path);

}  // namespace meshloop
