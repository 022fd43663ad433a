#pragma once

#include <filesystem>
#include <string>

#include "meshloop/eval.hpp"
#include "meshloop/optim.hpp"

namespace meshloop {

// Everything a `run` needs: scene generation, training, evaluation.
struct RunConfig {
  std::string name = "run";
  std::string shape = "sphere:r=1";
  int n_gaussians = 300;
  int n_cameras = 16;
  int width = 64;
  int height = 64;
  double init_band = 0.05;
  Vec3 background = Vec3::Zero();  // synthetic image background
  TrainConfig train;
  std::size_t eval_samples = 100000;
  double f1_threshold = 0.02;  // times the shape radius
  ColorFieldOptions color;
  bool dump_png = false;

  void validate() const;
};

// Plain "key = value" lines; '#' starts a comment. Unknown keys are errors.
// Keys: name shape n_gaussians n_cameras width height init_band background (r,g,b) seed
// iters_total iter_mesh_start delaunay_refresh_every occupancy_refresh_every
// normal_warmup lr_position lr_position_final lr_scale lr_rotation lr_opacity
// lr_color lr_sdf lambda_rgb lambda_n lambda_md lambda_mn lambda_erosion
// lambda_interior mode (base|dense) pivot_budget corner_mult antialias
// render_dilation render_fg_alpha
// checkpoint_every eval_samples f1_threshold color_grid color_iters color_lr
// dump_png
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
// Sets one key; used by the parser and for command-line overrides.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
// Canonical text form, parseable by parse_config.
std::string to_text(const RunConfig& cfg);

}  // namespace meshloop
