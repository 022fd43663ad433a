#include "meshloop/scene.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "meshloop/kdtree.hpp"

namespace meshloop {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

Mat3 Gaussian::rotation() const {
  return quat_to_rotation(quat[0], quat[1], quat[2], quat[3]);
}

Mat3 Gaussian::covariance() const {
  const Mat3 r = rotation();
  const Vec3 s = scale();
  return r * s.cwiseProduct(s).asDiagonal() * r.transpose();
}

bool Camera::pixel_of(const Vec3& cam, int& px, int& py) const {
  if (!(cam.z() > 1e-9)) return false;
  const Vec2 uv = project(cam);
  if (!(uv.x() >= 0 && uv.y() >= 0 && uv.x() < width && uv.y() < height)) return false;
  px = static_cast<int>(uv.x());
  py = static_cast<int>(uv.y());
  return true;
}

void Camera::validate() const {
  require(width >= 8 && height >= 8, "camera resolution must be at least 8x8");
  require(fx > 0 && fy > 0, "camera focal lengths must be positive");
  const Mat3 rrt = rotation * rotation.transpose();
  require((rrt - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9,
          "camera rotation is not orthonormal");
  require(std::abs(rotation.determinant() - 1.0) < 1e-9,
          "camera rotation must have determinant +1");
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width,
               int height, double focal) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-8) right = forward.cross(Vec3::UnitX());
  right.normalize();
  const Vec3 down = forward.cross(right);
  Camera c;
  c.width = width;
  c.height = height;
  c.fx = c.fy = focal;
  c.cx = width * 0.5;
  c.cy = height * 0.5;
  c.rotation.row(0) = right.transpose();
  c.rotation.row(1) = down.transpose();
  c.rotation.row(2) = forward.transpose();
  c.translation = -c.rotation * eye;
  return c;
}

// --- primitives ------------------------------------------------------------

double Primitive::sdf(const Vec3& p) const {
  const Vec3 q = p - center;
  switch (kind) {
    case Kind::kSphere:
      return q.norm() - radius;
    case Kind::kTorus: {
      const double a = std::hypot(q.x(), q.y()) - radius;
      return std::hypot(a, q.z()) - minor_radius;
    }
    case Kind::kBox: {
      const Vec3 d = q.cwiseAbs() - half_extent;
      return d.cwiseMax(0.0).norm() + std::min(d.maxCoeff(), 0.0);
    }
  }
  return 0.0;
}

void Primitive::bounds(Vec3& lo, Vec3& hi) const {
  Vec3 h;
  switch (kind) {
    case Kind::kSphere: h = Vec3::Constant(radius); break;
    case Kind::kTorus: h = Vec3(radius + minor_radius, radius + minor_radius, minor_radius); break;
    case Kind::kBox: h = half_extent; break;
  }
  lo = center - h;
  hi = center + h;
}

double Primitive::area() const {
  constexpr double pi = std::numbers::pi;
  switch (kind) {
    case Kind::kSphere: return 4 * pi * radius * radius;
    case Kind::kTorus: return 4 * pi * pi * radius * minor_radius;
    case Kind::kBox: {
      const Vec3 e = 2 * half_extent;
      return 2 * (e.x() * e.y() + e.y() * e.z() + e.x() * e.z());
    }
  }
  return 0.0;
}

Vec3 Primitive::sample_surface(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  constexpr double pi = std::numbers::pi;
  switch (kind) {
    case Kind::kSphere: {
      const double z = 2 * uni(rng) - 1;
      const double phi = 2 * pi * uni(rng);
      const double r = std::sqrt(std::max(0.0, 1 - z * z));
      return center + radius * Vec3(r * std::cos(phi), r * std::sin(phi), z);
    }
    case Kind::kTorus: {
      const double u = 2 * pi * uni(rng);
      double v = 0;
      // Area element is proportional to (R + r cos v).
      while (true) {
        v = 2 * pi * uni(rng);
        if (uni(rng) * (radius + minor_radius) <= radius + minor_radius * std::cos(v)) break;
      }
      const double ring = radius + minor_radius * std::cos(v);
      return center + Vec3(ring * std::cos(u), ring * std::sin(u), minor_radius * std::sin(v));
    }
    case Kind::kBox: {
      const Vec3 e = 2 * half_extent;
      const std::array<double, 3> face_area{e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};
      const double total = face_area[0] + face_area[1] + face_area[2];
      double pick = uni(rng) * total;
      int axis = 0;
      while (axis < 2 && pick > face_area[axis]) pick -= face_area[axis++];
      Vec3 local(2 * uni(rng) - 1, 2 * uni(rng) - 1, 2 * uni(rng) - 1);
      local[axis] = uni(rng) < 0.5 ? -1.0 : 1.0;
      return center + local.cwiseProduct(half_extent);
    }
  }
  return center;
}

// --- shape spec --------------------------------------------------------------

namespace {

std::vector<double> parse_numbers(const std::string& s) {
  std::vector<double> out;
  std::string token;
  std::stringstream ss(s);
  while (std::getline(ss, token, ',')) {
    try {
      out.push_back(std::stod(token));
    } catch (const std::exception&) {
      throw InvalidArgument("bad number '" + token + "' in shape spec");
    }
  }
  return out;
}

// Parses "key=value,key=value".
double keyed(const std::string& args, const std::string& key, double fallback) {
  std::stringstream ss(args);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) continue;
    if (item.substr(0, eq) == key) return std::stod(item.substr(eq + 1));
  }
  return fallback;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

Primitive parse_call(const std::string& call) {
  const auto open = call.find('(');
  const auto close = call.rfind(')');
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw InvalidArgument("unknown shape spec: '" + call + "'");
  const std::string name = trim(call.substr(0, open));
  const auto v = parse_numbers(call.substr(open + 1, close - open - 1));
  Primitive p;
  if (name == "sphere" && v.size() == 4) {
    p.kind = Primitive::Kind::kSphere;
    p.center = {v[0], v[1], v[2]};
    p.radius = v[3];
  } else if (name == "torus" && v.size() == 5) {
    p.kind = Primitive::Kind::kTorus;
    p.center = {v[0], v[1], v[2]};
    p.radius = v[3];
    p.minor_radius = v[4];
  } else if (name == "box" && v.size() == 6) {
    p.kind = Primitive::Kind::kBox;
    p.center = {v[0], v[1], v[2]};
    p.half_extent = {v[3], v[4], v[5]};
  } else {
    throw InvalidArgument("unknown shape spec: '" + call + "'");
  }
  return p;
}

}  // namespace

ShapeSpec ShapeSpec::parse(const std::string& raw) {
  const std::string text = trim(raw);
  const auto colon = text.find(':');
  const std::string head = trim(text.substr(0, colon));
  const std::string args = colon == std::string::npos ? "" : trim(text.substr(colon + 1));
  ShapeSpec spec;
  Primitive p;
  try {
    if (head == "sphere") {
      p.kind = Primitive::Kind::kSphere;
      p.radius = keyed(args, "r", 1.0);
      spec.parts.push_back(p);
    } else if (head == "torus") {
      p.kind = Primitive::Kind::kTorus;
      p.radius = keyed(args, "R", 1.0);
      p.minor_radius = keyed(args, "r", 0.3);
      spec.parts.push_back(p);
    } else if (head == "box") {
      p.kind = Primitive::Kind::kBox;
      p.half_extent = Vec3(keyed(args, "hx", 1.0), keyed(args, "hy", 1.0), keyed(args, "hz", 1.0));
      spec.parts.push_back(p);
    } else if (head == "union") {
      std::stringstream ss(args);
      std::string call;
      while (std::getline(ss, call, '+')) spec.parts.push_back(parse_call(call));
    } else {
      throw InvalidArgument("unknown shape spec: '" + raw + "'");
    }
  } catch (const std::invalid_argument&) {
    throw InvalidArgument("unknown shape spec: '" + raw + "'");
  }
  if (spec.parts.empty()) throw InvalidArgument("unknown shape spec: '" + raw + "'");
  for (const auto& part : spec.parts) {
    const bool ok = part.kind == Primitive::Kind::kBox
                        ? (part.half_extent.array() > 0).all()
                        : part.radius > 0 && (part.kind != Primitive::Kind::kTorus ||
                                              (part.minor_radius > 0 && part.minor_radius < part.radius));
    if (!ok) throw InvalidArgument("degenerate primitive in shape spec: '" + raw + "'");
  }
  return spec;
}

std::string ShapeSpec::to_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "union:";
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (i) os << '+';
    const Vec3& c = p.center;
    switch (p.kind) {
      case Primitive::Kind::kSphere:
        os << "sphere(" << c.x() << ',' << c.y() << ',' << c.z() << ',' << p.radius << ')';
        break;
      case Primitive::Kind::kTorus:
        os << "torus(" << c.x() << ',' << c.y() << ',' << c.z() << ',' << p.radius << ','
           << p.minor_radius << ')';
        break;
      case Primitive::Kind::kBox:
        os << "box(" << c.x() << ',' << c.y() << ',' << c.z() << ',' << p.half_extent.x() << ','
           << p.half_extent.y() << ',' << p.half_extent.z() << ')';
        break;
    }
  }
  return os.str();
}

double ShapeSpec::sdf(const Vec3& p) const {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& part : parts) d = std::min(d, part.sdf(p));
  return d;
}

Vec3 ShapeSpec::sdf_gradient(const Vec3& p) const {
  constexpr double h = 1e-6;
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    Vec3 a = p, b = p;
    a[k] += h;
    b[k] -= h;
    g[k] = (sdf(a) - sdf(b)) / (2 * h);
  }
  return g;
}

void ShapeSpec::bounds(Vec3& lo, Vec3& hi) const {
  lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  hi = -lo;
  for (const auto& part : parts) {
    Vec3 a, b;
    part.bounds(a, b);
    lo = lo.cwiseMin(a);
    hi = hi.cwiseMax(b);
  }
}

double ShapeSpec::bbox_diagonal() const {
  Vec3 lo, hi;
  bounds(lo, hi);
  return (hi - lo).norm();
}

Vec3 ShapeSpec::centroid() const {
  Vec3 lo, hi;
  bounds(lo, hi);
  return 0.5 * (lo + hi);
}

double ShapeSpec::radius() const {
  const Vec3 c = centroid();
  double r = 0;
  for (const auto& part : parts) {
    const double offset = (part.center - c).norm();
    switch (part.kind) {
      case Primitive::Kind::kSphere: r = std::max(r, offset + part.radius); break;
      case Primitive::Kind::kTorus: r = std::max(r, offset + part.radius + part.minor_radius); break;
      case Primitive::Kind::kBox: r = std::max(r, offset + part.half_extent.norm()); break;
    }
  }
  return r;
}

double ShapeSpec::feature_size() const {
  double f = std::numeric_limits<double>::infinity();
  for (const auto& part : parts) {
    switch (part.kind) {
      case Primitive::Kind::kSphere: f = std::min(f, part.radius); break;
      case Primitive::Kind::kTorus: f = std::min(f, part.minor_radius); break;
      case Primitive::Kind::kBox: f = std::min(f, part.half_extent.minCoeff()); break;
    }
  }
  return f;
}

std::vector<Vec3> ShapeSpec::sample_surface(std::size_t n, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::vector<double> cumulative;
  double total = 0;
  for (const auto& part : parts) cumulative.push_back(total += part.area());
  std::uniform_real_distribution<double> uni(0.0, total);
  std::vector<Vec3> out;
  out.reserve(n);
  while (out.size() < n) {
    const double pick = uni(rng);
    const auto which = static_cast<std::size_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
    const std::size_t k = std::min(which, parts.size() - 1);
    const Vec3 p = parts[k].sample_surface(rng);
    bool covered = false;
    for (std::size_t j = 0; j < parts.size() && !covered; ++j)
      covered = j != k && parts[j].sdf(p) < 0;
    if (!covered) out.push_back(p);
  }
  return out;
}

double ShapeSpec::intersect(const Vec3& origin, const Vec3& dir, double t_max) const {
  const Vec3 d = dir.normalized();
  double t = 0;
  for (int it = 0; it < 1024 && t < t_max; ++it) {
    const double s = sdf(origin + t * d);
    if (s < 1e-10) {
      return t / dir.norm();
    }
    t += s;
  }
  return -1.0;
}

Vec3 ShapeSpec::albedo(const Vec3& p) const {
  const Vec3 c(0.55 + 0.35 * std::sin(3.1 * p.x() + 0.3) * std::cos(2.3 * p.z()),
               0.50 + 0.30 * std::sin(2.7 * p.y() + 1.1),
               0.45 + 0.35 * std::cos(3.3 * p.z() + 0.7 * p.x()));
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

std::vector<std::size_t> SyntheticScene::train_views() const {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < cameras.size(); ++i)
    if (!is_test_view(i)) v.push_back(i);
  return v;
}

std::vector<std::size_t> SyntheticScene::test_views() const {
  std::vector<std::size_t> v;
  for (std::size_t i = 0; i < cameras.size(); ++i)
    if (is_test_view(i)) v.push_back(i);
  return v;
}

BoundingBox bounds_of(const std::vector<Vec3>& pts) {
  BoundingBox b;
  for (const auto& p : pts) b.extend(p);
  return b;
}

namespace {

// Fixed world-space light, so the shading does not depend on the view.
const Vec3 kLightDirection = Vec3(0.3, -0.5, 0.8).normalized();

}  // namespace

ColorImage render_analytic(const ShapeSpec& shape, const Camera& cam,
                           const Vec3& background, int supersample) {
  ColorImage img(cam.width, cam.height, background);
  const Vec3 eye = cam.center();
  const double t_max = (eye - shape.centroid()).norm() + 2 * shape.radius();
  const int ss = std::max(1, supersample);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      Vec3 acc = Vec3::Zero();
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double u = x + (sx + 0.5) / ss;
          const double v = y + (sy + 0.5) / ss;
          const Vec3 dir = cam.rotation.transpose() * cam.ray(u, v);
          const double t = shape.intersect(eye, dir, t_max * dir.norm());
          if (t < 0) {
            acc += background;
            continue;
          }
          const Vec3 hit = eye + t * dir;
          const Vec3 n = shape.sdf_gradient(hit).normalized();
          const double lambert = std::abs(n.dot(kLightDirection));
          acc += shape.albedo(hit) * (0.35 + 0.65 * lambert);
        }
      }
      img(x, y) = (acc / (ss * ss)).cwiseMin(1.0).cwiseMax(0.0);
    }
  }
  return img;
}

SceneBundle make_synthetic_scene(const ShapeSpec& shape, int n_gaussians,
                                 int n_cameras, std::uint64_t seed,
                                 const SyntheticOptions& options) {
  require(n_gaussians >= 1, "n_gaussians must be >= 1");
  require(n_cameras >= 2,
          "n_cameras must be >= 2 (occupancy labeling and depth fusion need multiple views)");
  require(!shape.parts.empty(), "unknown shape spec: empty");

  SceneBundle out;
  SyntheticScene& data = out.data;
  data.shape = shape;
  data.background = options.background;

  std::mt19937_64 rng(seed);
  const double diag = shape.bbox_diagonal();
  const double band = options.init_band * diag;
  Vec3 lo, hi;
  shape.bounds(lo, hi);
  lo.array() -= band;
  hi.array() += band;
  std::uniform_real_distribution<double> ux(lo.x(), hi.x()), uy(lo.y(), hi.y()),
      uz(lo.z(), hi.z());

  std::vector<Vec3> centers;
  centers.reserve(n_gaussians);
  std::size_t attempts = 0;
  while (static_cast<int>(centers.size()) < n_gaussians) {
    if (++attempts > 10'000'000) throw Error("could not place Gaussians near the surface");
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    if (std::abs(shape.sdf(p)) < band) centers.push_back(p);
  }

  // Isotropic scale from the nearest other center.
  const KdTree tree(centers);
  out.gaussians.resize(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    Gaussian& g = out.gaussians[i];
    g.mu = centers[i];
    double d2 = 0;
    double s = 0.02 * diag;
    if (centers.size() > 1 && tree.nearest(centers[i], &d2, static_cast<std::int64_t>(i)) >= 0)
      s = std::max(std::sqrt(d2), 1e-4 * diag);
    g.log_scale = Vec3::Constant(std::log(s));
    g.logit_opacity = logit(0.8);
    g.color = Vec3::Constant(0.5);
    g.quat = Vec4(1, 0, 0, 0);
    g.sdf_pre.fill(0.0);
  }

  // Cameras on a Fibonacci sphere around the centroid.
  const Vec3 target = shape.centroid();
  const double radius = shape.radius();
  const double dist = options.camera_distance * radius;
  const double half_angle = std::asin(std::min(1.0, radius / dist));
  const double focal = 0.5 * options.width * options.fill / std::tan(half_angle);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_cameras; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n_cameras;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double th = golden * i;
    const Vec3 dir(r * std::cos(th), r * std::sin(th), z);
    data.cameras.push_back(look_at(target + dist * dir, target, Vec3::UnitZ(), options.width,
                                   options.height, focal));
  }
  for (const auto& cam : data.cameras)
    data.images.push_back(render_analytic(shape, cam, data.background, options.supersample));
  data.gt_samples = shape.sample_surface(options.n_gt_samples, seed ^ 0x9e3779b97f4a7c15ULL);
  return out;
}

// --- serialization -------------------------------------------------------------

namespace {

constexpr char kSceneMagic[8] = {'M', 'I', 'L', 'O', 'S', 'C', 'N', '1'};
constexpr char kImageMagic[8] = {'M', 'I', 'L', 'O', 'I', 'M', 'G', '1'};

template <class T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) throw FormatError("truncated file: " + path_);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw FormatError("truncated file: " + path_);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

void save_scene(const GaussianScene& scene, const std::filesystem::path& path) {
  std::string buf;
  buf.reserve(kSceneHeaderBytes + scene.size() * kSceneRecordBytes);
  buf.append(kSceneMagic, 8);
  put<std::uint64_t>(buf, scene.size());
  for (const auto& g : scene) {
    for (int k = 0; k < 3; ++k) put(buf, g.mu[k]);
    for (int k = 0; k < 4; ++k) put(buf, g.quat[k]);
    for (int k = 0; k < 3; ++k) put(buf, g.log_scale[k]);
    put(buf, g.logit_opacity);
    for (int k = 0; k < 3; ++k) put(buf, g.color[k]);
    for (double s : g.sdf_pre) put(buf, s);
  }
  write_file(path, buf);
}

GaussianScene load_scene(const std::filesystem::path& path) {
  Reader r(read_file(path), path.string());
  if (r.take(8) != std::string(kSceneMagic, 8))
    throw FormatError("bad magic (expected MILOSCN1): " + path.string());
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining() / kSceneRecordBytes) throw FormatError("truncated file: " + path.string());
  GaussianScene scene(count);
  for (auto& g : scene) {
    for (int k = 0; k < 3; ++k) g.mu[k] = r.get<double>();
    for (int k = 0; k < 4; ++k) g.quat[k] = r.get<double>();
    for (int k = 0; k < 3; ++k) g.log_scale[k] = r.get<double>();
    g.logit_opacity = r.get<double>();
    for (int k = 0; k < 3; ++k) g.color[k] = r.get<double>();
    for (double& s : g.sdf_pre) s = r.get<double>();
  }
  return scene;
}

void save_cameras(const std::vector<Camera>& cams, const std::filesystem::path& path) {
  nlohmann::json j;
  j["cameras"] = nlohmann::json::array();
  for (const auto& c : cams) {
    nlohmann::json e;
    e["width"] = c.width;
    e["height"] = c.height;
    e["intrinsics"] = {c.fx, 0.0, c.cx, 0.0, c.fy, c.cy, 0.0, 0.0, 1.0};
    std::vector<double> ext;
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) ext.push_back(c.rotation(r, k));
      ext.push_back(c.translation[r]);
    }
    ext.insert(ext.end(), {0.0, 0.0, 0.0, 1.0});
    e["extrinsics"] = ext;
    j["cameras"].push_back(e);
  }
  write_file(path, j.dump(2) + "\n");
}

std::vector<Camera> load_cameras(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid camera JSON " + path.string() + ": " + e.what());
  }
  std::vector<Camera> out;
  try {
    for (const auto& e : j.at("cameras")) {
      Camera c;
      c.width = e.at("width").get<int>();
      c.height = e.at("height").get<int>();
      const auto k = e.at("intrinsics").get<std::vector<double>>();
      const auto x = e.at("extrinsics").get<std::vector<double>>();
      if (k.size() != 9 || x.size() != 16) throw FormatError("camera arrays have wrong size");
      c.fx = k[0];
      c.cx = k[2];
      c.fy = k[4];
      c.cy = k[5];
      for (int r = 0; r < 3; ++r) {
        for (int q = 0; q < 3; ++q) c.rotation(r, q) = x[4 * r + q];
        c.translation[r] = x[4 * r + 3];
      }
      c.validate();
      out.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid camera JSON " + path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError("invalid camera in " + path.string() + ": " + e.what());
  }
  return out;
}

void save_images(const std::vector<ColorImage>& images, const std::filesystem::path& path) {
  std::string buf(kImageMagic, 8);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(images.size()));
  for (const auto& img : images) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(img.width()));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(img.height()));
    for (const auto& px : img.data())
      for (int k = 0; k < 3; ++k) put(buf, px[k]);
  }
  write_file(path, buf);
}

std::vector<ColorImage> load_images(const std::filesystem::path& path) {
  Reader r(read_file(path), path.string());
  if (r.take(8) != std::string(kImageMagic, 8))
    throw FormatError("bad magic (expected MILOIMG1): " + path.string());
  const auto n = r.get<std::uint32_t>();
  std::vector<ColorImage> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto w = r.get<std::uint32_t>();
    const auto h = r.get<std::uint32_t>();
    if (static_cast<std::uint64_t>(w) * h * 24 > r.remaining())
      throw FormatError("truncated file: " + path.string());
    ColorImage img(static_cast<int>(w), static_cast<int>(h));
    for (auto& px : img.data())
      for (int k = 0; k < 3; ++k) px[k] = r.get<double>();
    out.push_back(std::move(img));
  }
  return out;
}

void save_dataset(const SyntheticScene& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_cameras(scene.cameras, dir / "cameras.json");
  save_images(scene.images, dir / "images.bin");
  {
    std::ostringstream os;
    os.precision(17);
    os << "shape " << scene.shape.to_string() << "\n";
    os << "background " << scene.background.x() << ' ' << scene.background.y() << ' '
       << scene.background.z() << "\n";
    write_file(dir / "shape.txt", os.str());
  }
  std::string buf;
  put<std::uint64_t>(buf, scene.gt_samples.size());
  for (const auto& p : scene.gt_samples)
    for (int k = 0; k < 3; ++k) put(buf, p[k]);
  write_file(dir / "gt_samples.bin", buf);
}

SyntheticScene load_dataset(const std::filesystem::path& dir) {
  SyntheticScene s;
  s.cameras = load_cameras(dir / "cameras.json");
  s.images = load_images(dir / "images.bin");
  if (s.images.size() != s.cameras.size())
    throw FormatError("image count does not match camera count in " + dir.string());
  if (std::filesystem::exists(dir / "shape.txt")) {
    std::istringstream in(read_file(dir / "shape.txt"));
    std::string key;
    while (in >> key) {
      if (key == "shape") {
        std::string spec;
        in >> spec;
        s.shape = ShapeSpec::parse(spec);
      } else if (key == "background") {
        in >> s.background.x() >> s.background.y() >> s.background.z();
      }
    }
  }
  if (std::filesystem::exists(dir / "gt_samples.bin")) {
    Reader r(read_file(dir / "gt_samples.bin"), (dir / "gt_samples.bin").string());
    const auto n = r.get<std::uint64_t>();
    if (n > r.remaining() / 24) throw FormatError("truncated file: gt_samples.bin");
    s.gt_samples.resize(n);
    for (auto& p : s.gt_samples)
      for (int k = 0; k < 3; ++k) p[k] = r.get<double>();
  }
  return s;
}

}  // namespace meshloop
