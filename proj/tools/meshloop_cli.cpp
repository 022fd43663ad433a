#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "meshloop/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"meshloop: Gaussian splatting with a Delaunay/SDF surface"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  auto* run = app.add_subcommand("run", "generate a scene, train and evaluate");
  run->add_option("config", config_path, "key = value config file")->required();
  run->add_option("--set", sets, "override a config key (key=value)");

  std::string mesh_path, scene_dir, out_name = "eval";
  meshloop::EvalSettings es;
  auto* ev = app.add_subcommand("eval", "compute metrics for a mesh against a saved dataset");
  ev->add_option("--mesh", mesh_path, "mesh file (.obj or .ply)")->required();
  ev->add_option("--scene", scene_dir, "dataset directory written by run")->required();
  ev->add_option("--out-name", out_name, "subdirectory of the output root");
  ev->add_option("--samples", es.samples, "surface samples for Chamfer/F1");
  ev->add_option("--f1-threshold", es.f1_threshold, "F1 distance in units of the shape radius");

  std::string scene_path, out_path, format = "ply";
  meshloop::ExportOptions xo;
  std::string selected;
  auto* ex = app.add_subcommand("export", "extract a mesh from a scene checkpoint");
  ex->add_option("--scene", scene_path, "scene checkpoint (.gs)")->required();
  ex->add_option("--out", out_path, "output mesh path")->required();
  ex->add_option("--format", format, "obj or ply")->check(CLI::IsMember({"obj", "ply"}));
  ex->add_option("--selected", selected, "file of pivot Gaussian indices");
  ex->add_option("--seed", xo.seed, "pivot sampling seed");
  ex->add_option("--corner-mult", xo.corner_mult, "extra corner sites per Gaussian");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (*run) {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        std::cerr << "--set expects key=value, got '" << s << "'\n";
        return 1;
      }
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return meshloop::cmd_run(config_path, overrides, std::cout, std::cerr);
  }
  if (*ev) return meshloop::cmd_eval(mesh_path, scene_dir, out_name, es, std::cout, std::cerr);
  xo.selected_file = selected;
  return meshloop::cmd_export(scene_path, out_path, format, xo, std::cout, std::cerr);
}
