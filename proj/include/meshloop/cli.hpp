#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "meshloop/config.hpp"

namespace meshloop {

inline constexpr const char* kOutputRootEnv = "MESHLOOP_OUTPUT_ROOT";

// $MESHLOOP_OUTPUT_ROOT, or ./outputs when unset.
std::filesystem::path output_root();

struct EvalSettings {
  std::size_t samples = 100000;
  double f1_threshold = 0.02;  // times the shape radius
  ColorFieldOptions color;
};

// Chamfer/F1 against the dataset's surface samples (when present) and
// mesh-based novel view synthesis PSNR on the held-out views.
MetricsReport evaluate_mesh(const ExtractedMesh& mesh, const SyntheticScene& data,
                            const EvalSettings& settings);

// Subcommands. Each returns the process exit code and reports failures on
// `err` with the failing stage.
int cmd_run(const std::filesystem::path& config_path,
            const std::vector<std::pair<std::string, std::string>>& overrides, std::ostream& log,
            std::ostream& err);

int cmd_eval(const std::filesystem::path& mesh_path, const std::filesystem::path& scene_dir,
             const std::string& out_name, const EvalSettings& settings, std::ostream& log,
             std::ostream& err);

struct ExportOptions {
  std::filesystem::path selected_file;  // optional list of pivot Gaussian indices
  std::uint64_t seed = 0;
  double corner_mult = 1.0;
};

int cmd_export(const std::filesystem::path& scene_path, const std::filesystem::path& out,
               const std::string& format, const ExportOptions& options, std::ostream& log,
               std::ostream& err);

}  // namespace meshloop
