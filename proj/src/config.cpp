#include "meshloop/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace meshloop {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw InvalidArgument("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw InvalidArgument("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidArgument("config key '" + key + "': expected true/false, got '" + v + "'");
}

Vec3 to_rgb(const std::string& key, const std::string& v) {
  Vec3 out;
  std::stringstream ss(v);
  std::string part;
  int i = 0;
  while (i <= 3 && std::getline(ss, part, ',')) {
    if (i == 3) i = 4;
    else out[i++] = to_double(key, trim(part));
  }
  if (i != 3)
    throw InvalidArgument("config key '" + key + "': expected r,g,b, got '" + v + "'");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  ShapeSpec::parse(shape);
  require(n_gaussians >= 1, "n_gaussians must be >= 1");
  require(n_cameras >= 2, "n_cameras must be >= 2");
  require(width >= 8 && height >= 8, "resolution must be at least 8x8");
  require(init_band > 0, "init_band must be positive");
  require(background.minCoeff() >= 0 && background.maxCoeff() <= 1,
          "background components must be in [0, 1]");
  require(eval_samples >= 1, "eval_samples must be >= 1");
  require(f1_threshold > 0, "f1_threshold must be positive");
  require(train.render.dilation >= 0, "render_dilation must be >= 0");
  require(train.render.fg_alpha >= 0 && train.render.fg_alpha <= 1, "render_fg_alpha must be in [0, 1]");
  require(color.n_grid >= 2 && color.iters >= 0 && color.lr > 0, "invalid color field settings");
  train.validate();
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& v) {
  auto& t = c.train;
  if (key == "name") c.name = v;
  else if (key == "shape") c.shape = v;
  else if (key == "n_gaussians") c.n_gaussians = static_cast<int>(to_int(key, v));
  else if (key == "n_cameras") c.n_cameras = static_cast<int>(to_int(key, v));
  else if (key == "width") c.width = static_cast<int>(to_int(key, v));
  else if (key == "height") c.height = static_cast<int>(to_int(key, v));
  else if (key == "init_band") c.init_band = to_double(key, v);
  else if (key == "background") c.background = to_rgb(key, v);
  else if (key == "seed") t.seed = static_cast<std::uint64_t>(to_int(key, v));
  else if (key == "iters_total") t.iters_total = static_cast<int>(to_int(key, v));
  else if (key == "iter_mesh_start") t.iter_mesh_start = static_cast<int>(to_int(key, v));
  else if (key == "delaunay_refresh_every") t.delaunay_refresh_every = static_cast<int>(to_int(key, v));
  else if (key == "occupancy_refresh_every") t.occupancy_refresh_every = static_cast<int>(to_int(key, v));
  else if (key == "normal_warmup") t.normal_warmup = static_cast<int>(to_int(key, v));
  else if (key == "lr_position") t.lr.position = to_double(key, v);
  else if (key == "lr_position_final") t.lr.position_final = to_double(key, v);
  else if (key == "lr_scale") t.lr.scale = to_double(key, v);
  else if (key == "lr_rotation") t.lr.rotation = to_double(key, v);
  else if (key == "lr_opacity") t.lr.opacity = to_double(key, v);
  else if (key == "lr_color") t.lr.color = to_double(key, v);
  else if (key == "lr_sdf") t.lr.sdf = to_double(key, v);
  else if (key == "lambda_rgb") t.weights.lambda_rgb = to_double(key, v);
  else if (key == "lambda_n") t.weights.lambda_n = to_double(key, v);
  else if (key == "lambda_md") t.weights.lambda_md = to_double(key, v);
  else if (key == "lambda_mn") t.weights.lambda_mn = to_double(key, v);
  else if (key == "lambda_erosion") t.weights.lambda_erosion = to_double(key, v);
  else if (key == "lambda_interior") t.weights.lambda_interior = to_double(key, v);
  else if (key == "mode") {
    if (v == "base") t.mode = PivotMode::kBase;
    else if (v == "dense") t.mode = PivotMode::kDense;
    else throw InvalidArgument("config key 'mode': expected base or dense, got '" + v + "'");
  } else if (key == "pivot_budget") t.pivot_budget = static_cast<int>(to_int(key, v));
  else if (key == "corner_mult") t.corner_mult = to_double(key, v);
  else if (key == "antialias") t.antialias = to_bool(key, v);
  else if (key == "render_dilation") t.render.dilation = to_double(key, v);
  else if (key == "render_fg_alpha") t.render.fg_alpha = to_double(key, v);
  else if (key == "checkpoint_every") t.checkpoint_every = static_cast<int>(to_int(key, v));
  else if (key == "eval_samples") c.eval_samples = static_cast<std::size_t>(to_int(key, v));
  else if (key == "f1_threshold") c.f1_threshold = to_double(key, v);
  else if (key == "color_grid") c.color.n_grid = static_cast<int>(to_int(key, v));
  else if (key == "color_iters") c.color.iters = static_cast<int>(to_int(key, v));
  else if (key == "color_lr") c.color.lr = to_double(key, v);
  else if (key == "dump_png") c.dump_png = to_bool(key, v);
  else throw InvalidArgument("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string to_text(const RunConfig& c) {
  const auto& t = c.train;
  std::ostringstream o;
  o << "name = " << c.name << "\n"
    << "shape = " << c.shape << "\n"
    << "n_gaussians = " << c.n_gaussians << "\n"
    << "n_cameras = " << c.n_cameras << "\n"
    << "width = " << c.width << "\n"
    << "height = " << c.height << "\n"
    << "init_band = " << fmt(c.init_band) << "\n"
    << "background = " << fmt(c.background[0]) << "," << fmt(c.background[1]) << ","
    << fmt(c.background[2]) << "\n"
    << "seed = " << t.seed << "\n"
    << "iters_total = " << t.iters_total << "\n"
    << "iter_mesh_start = " << t.iter_mesh_start << "\n"
    << "delaunay_refresh_every = " << t.delaunay_refresh_every << "\n"
    << "occupancy_refresh_every = " << t.occupancy_refresh_every << "\n"
    << "normal_warmup = " << t.normal_warmup << "\n"
    << "lr_position = " << fmt(t.lr.position) << "\n"
    << "lr_position_final = " << fmt(t.lr.position_final) << "\n"
    << "lr_scale = " << fmt(t.lr.scale) << "\n"
    << "lr_rotation = " << fmt(t.lr.rotation) << "\n"
    << "lr_opacity = " << fmt(t.lr.opacity) << "\n"
    << "lr_color = " << fmt(t.lr.color) << "\n"
    << "lr_sdf = " << fmt(t.lr.sdf) << "\n"
    << "lambda_rgb = " << fmt(t.weights.lambda_rgb) << "\n"
    << "lambda_n = " << fmt(t.weights.lambda_n) << "\n"
    << "lambda_md = " << fmt(t.weights.lambda_md) << "\n"
    << "lambda_mn = " << fmt(t.weights.lambda_mn) << "\n"
    << "lambda_erosion = " << fmt(t.weights.lambda_erosion) << "\n"
    << "lambda_interior = " << fmt(t.weights.lambda_interior) << "\n"
    << "mode = " << (t.mode == PivotMode::kBase ? "base" : "dense") << "\n"
    << "pivot_budget = " << t.pivot_budget << "\n"
    << "corner_mult = " << fmt(t.corner_mult) << "\n"
    << "antialias = " << (t.antialias ? "true" : "false") << "\n"
    << "render_dilation = " << fmt(t.render.dilation) << "\n"
    << "render_fg_alpha = " << fmt(t.render.fg_alpha) << "\n"
    << "checkpoint_every = " << t.checkpoint_every << "\n"
    << "eval_samples = " << c.eval_samples << "\n"
    << "f1_threshold = " << fmt(c.f1_threshold) << "\n"
    << "color_grid = " << c.color.n_grid << "\n"
    << "color_iters = " << c.color.iters << "\n"
    << "color_lr = " << fmt(c.color.lr) << "\n"
    << "dump_png = " << (c.dump_png ? "true" : "false") << "\n";
  return o.str();
}

}  // namespace meshloop
