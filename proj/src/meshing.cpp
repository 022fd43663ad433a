#include "meshloop/meshing.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace meshloop {
namespace {

constexpr int kFace[4][3] = {{1, 3, 2}, {0, 2, 3}, {0, 3, 1}, {0, 1, 2}};

std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

bool even_permutation(const std::array<int, 4>& p) {
  int inv = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (p[i] > p[j]) ++inv;
  return inv % 2 == 0;
}

double nudged(double f) { return std::abs(f) < kSdfNudge ? -kSdfNudge : f; }

}  // namespace

ExtractedMesh marching_tetrahedra(std::span<const Tet> tets, std::span<const Vec3> sites,
                                  std::span<const double> sdf) {
  if (sdf.size() != sites.size())
    throw InvalidArgument("sdf has " + std::to_string(sdf.size()) + " values for " +
                          std::to_string(sites.size()) + " sites");
  std::vector<double> f(sdf.size());
  for (std::size_t i = 0; i < sdf.size(); ++i) {
    if (std::isnan(sdf[i])) throw NumericalError("NaN SDF value at site " + std::to_string(i));
    if (!sites[i].allFinite()) throw NumericalError("non-finite site " + std::to_string(i));
    f[i] = nudged(sdf[i]);
  }

  ExtractedMesh mesh;
  std::unordered_map<std::uint64_t, int> vertex_of_edge;
  auto crossing = [&](int a, int b) {
    const std::uint64_t key = edge_key(a, b);
    auto it = vertex_of_edge.find(key);
    if (it != vertex_of_edge.end()) return it->second;
    if (a > b) std::swap(a, b);
    const double fa = f[a], fb = f[b];
    const int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back((fa * sites[b] - fb * sites[a]) / (fa - fb));
    mesh.provenance.push_back({a, b, fa, fb});
    vertex_of_edge.emplace(key, id);
    return id;
  };
  auto emit = [&](int a, int b, int c) {
    const Vec3 &pa = mesh.vertices[a], &pb = mesh.vertices[b], &pc = mesh.vertices[c];
    if ((pa - pb).norm() <= 1e-12 || (pb - pc).norm() <= 1e-12 || (pa - pc).norm() <= 1e-12)
      return;
    mesh.faces.push_back({a, b, c});
  };

  for (const Tet& t : tets) {
    for (int v : t)
      require(v >= 0 && static_cast<std::size_t>(v) < sites.size(), "tet index out of range");
    int n_neg = 0;
    for (int v : t) n_neg += f[v] < 0;
    if (n_neg == 0 || n_neg == 4) continue;
    if (n_neg == 1 || n_neg == 3) {
      int lone = 0;
      for (int i = 0; i < 4; ++i)
        if ((f[t[i]] < 0) == (n_neg == 1)) lone = i;
      const int j = t[kFace[lone][0]], k = t[kFace[lone][1]], l = t[kFace[lone][2]];
      const int i = t[lone];
      const int a = crossing(i, j), b = crossing(i, k), c = crossing(i, l);
      // (a, b, c) faces the lone vertex; flip when it is the negative one.
      if (f[i] > 0) emit(a, b, c);
      else emit(a, c, b);
      continue;
    }
    std::array<int, 4> perm{};
    int np = 0, pp = 2;
    for (int q = 0; q < 4; ++q) {
      if (f[t[q]] < 0) perm[np++] = q;
      else perm[pp++] = q;
    }
    const int i = t[perm[0]], j = t[perm[1]], k = t[perm[2]], l = t[perm[3]];
    std::array<int, 4> quad{crossing(i, k), crossing(i, l), crossing(j, l), crossing(j, k)};
    const std::array<std::uint64_t, 4> keys{edge_key(i, k), edge_key(i, l), edge_key(j, l),
                                            edge_key(j, k)};
    if (!even_permutation(perm)) std::swap(quad[1], quad[3]);
    const std::uint64_t k02 = std::min(keys[0], keys[2]);
    const std::uint64_t k13 = std::min(keys[1], keys[3]);
    if (k02 < k13) {
      emit(quad[0], quad[1], quad[2]);
      emit(quad[0], quad[2], quad[3]);
    } else {
      emit(quad[0], quad[1], quad[3]);
      emit(quad[1], quad[2], quad[3]);
    }
  }
  return mesh;
}

std::vector<VertexJacobian> mt_gradients(const ExtractedMesh& mesh, std::span<const Vec3> sites,
                                         std::span<const double> sdf) {
  if (mesh.provenance.size() != mesh.vertices.size())
    throw InvalidArgument("mesh has no vertex provenance");
  require(sdf.size() == sites.size(), "sdf/site length mismatch");
  std::vector<VertexJacobian> out(mesh.vertices.size());
  for (std::size_t n = 0; n < mesh.vertices.size(); ++n) {
    const auto& pr = mesh.provenance[n];
    require(pr.site_a >= 0 && static_cast<std::size_t>(pr.site_b) < sites.size(),
            "provenance site out of range");
    const double fa = nudged(sdf[pr.site_a]), fb = nudged(sdf[pr.site_b]);
    const Vec3& pa = sites[pr.site_a];
    const Vec3& pb = sites[pr.site_b];
    const double w = fa / (fa - fb);
    const Vec3 v = (1.0 - w) * pa + w * pb;
    auto& j = out[n];
    j.d_site_a = (1.0 - w) * Mat3::Identity();
    j.d_site_b = w * Mat3::Identity();
    j.d_f_a = (pb - v) / (fa - fb);
    j.d_f_b = (v - pa) / (fa - fb);
  }
  return out;
}

void mt_backward(const ExtractedMesh& mesh, std::span<const Vec3> sites,
                 std::span<const double> sdf, std::span<const Vec3> grad_vertices,
                 std::span<Vec3> grad_sites, std::span<double> grad_sdf) {
  require(grad_vertices.size() == mesh.vertices.size(), "vertex gradient length mismatch");
  require(grad_sites.size() == sites.size() && grad_sdf.size() == sites.size(),
          "site gradient length mismatch");
  const auto jac = mt_gradients(mesh, sites, sdf);
  for (std::size_t n = 0; n < jac.size(); ++n) {
    const auto& pr = mesh.provenance[n];
    const Vec3& g = grad_vertices[n];
    grad_sites[pr.site_a] += jac[n].d_site_a.transpose() * g;
    grad_sites[pr.site_b] += jac[n].d_site_b.transpose() * g;
    grad_sdf[pr.site_a] += jac[n].d_f_a.dot(g);
    grad_sdf[pr.site_b] += jac[n].d_f_b.dot(g);
  }
}

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

double mesh_area(const ExtractedMesh& mesh) {
  double s = 0;
  for (const auto& f : mesh.faces)
    s += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
  return s;
}

namespace {

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

// Moller-Trumbore; true for a hit at t > 0.
bool ray_hits(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = d.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-300) return false;
  const double inv = 1.0 / det;
  const Vec3 s = o - a;
  const double u = s.dot(p) * inv;
  if (u < 0 || u > 1) return false;
  const Vec3 q = s.cross(e1);
  const double v = d.dot(q) * inv;
  if (v < 0 || u + v > 1) return false;
  return e2.dot(q) * inv > 0;
}

}  // namespace

ComponentReport interior_components(const ExtractedMesh& mesh) {
  ComponentReport rep;
  if (mesh.faces.empty()) return rep;
  std::vector<int> parent(mesh.vertices.size());
  std::iota(parent.begin(), parent.end(), 0);
  for (const auto& f : mesh.faces)
    for (int i = 1; i < 3; ++i) {
      const int a = find_root(parent, f[0]), b = find_root(parent, f[i]);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  std::unordered_map<int, int> comp_of_root;
  rep.face_component.resize(mesh.faces.size());
  std::vector<int> first_face;
  for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const int r = find_root(parent, mesh.faces[fi][0]);
    auto [it, inserted] = comp_of_root.emplace(r, static_cast<int>(first_face.size()));
    if (inserted) first_face.push_back(static_cast<int>(fi));
    rep.face_component[fi] = it->second;
  }
  rep.n_components = static_cast<int>(first_face.size());
  rep.interior.assign(rep.n_components, false);
  if (rep.n_components < 2) return rep;

  const Vec3 dir = Vec3(1.0, 1e-3 * std::sqrt(2.0), 1e-3 * std::sqrt(3.0)).normalized();
  std::vector<double> area(rep.n_components, 0.0);
  for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const auto& f = mesh.faces[fi];
    area[rep.face_component[fi]] +=
        triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
  }
  double total = 0, interior = 0;
  for (int c = 0; c < rep.n_components; ++c) {
    const auto& f0 = mesh.faces[first_face[c]];
    const Vec3 probe = (mesh.vertices[f0[0]] + mesh.vertices[f0[1]] + mesh.vertices[f0[2]]) / 3.0;
    int fwd = 0, back = 0;
    for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
      if (rep.face_component[fi] == c) continue;
      const auto& f = mesh.faces[fi];
      const Vec3 &a = mesh.vertices[f[0]], &b = mesh.vertices[f[1]], &cc = mesh.vertices[f[2]];
      fwd += ray_hits(probe, dir, a, b, cc);
      back += ray_hits(probe, -dir, a, b, cc);
    }
    rep.interior[c] = (fwd % 2 == 1) && (back % 2 == 1);
    total += area[c];
    if (rep.interior[c]) {
      ++rep.n_interior;
      interior += area[c];
    }
  }
  rep.interior_area_fraction = total > 0 ? interior / total : 0.0;
  return rep;
}

MeshFormat parse_mesh_format(const std::string& name) {
  if (name == "obj") return MeshFormat::kObj;
  if (name == "ply") return MeshFormat::kPly;
  throw InvalidArgument("unknown mesh format '" + name + "' (expected obj or ply)");
}

void export_mesh(const ExtractedMesh& mesh, const std::filesystem::path& path, MeshFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  if (format == MeshFormat::kObj) {
    char line[128];
    for (const auto& v : mesh.vertices) {
      std::snprintf(line, sizeof line, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
      out << line;
    }
    for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  } else {
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << mesh.vertices.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "element face " << mesh.faces.size() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    for (const auto& v : mesh.vertices) {
      const float xyz[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()),
                            static_cast<float>(v.z())};
      out.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
    }
    for (const auto& f : mesh.faces) {
      const unsigned char n = 3;
      const std::int32_t idx[3] = {f[0], f[1], f[2]};
      out.write(reinterpret_cast<const char*>(&n), 1);
      out.write(reinterpret_cast<const char*>(idx), sizeof idx);
    }
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

ExtractedMesh read_obj(std::istream& in, const std::string& name) {
  ExtractedMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw FormatError("bad vertex line in " + name);
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const int i = std::stoi(tok.substr(0, tok.find('/')));
        idx.push_back(i > 0 ? i - 1 : static_cast<int>(mesh.vertices.size()) + i);
      }
      if (idx.size() < 3) throw FormatError("face with fewer than 3 vertices in " + name);
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  return mesh;
}

ExtractedMesh read_ply(std::istream& in, const std::string& name) {
  std::string line;
  std::size_t nv = 0, nf = 0;
  if (!std::getline(in, line) || line != "ply") throw FormatError(name + " is not a PLY file");
  bool binary = false;
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string a, b;
    ls >> a >> b;
    if (a == "format") binary = b == "binary_little_endian";
    if (a == "element" && b == "vertex") ls >> nv;
    if (a == "element" && b == "face") ls >> nf;
  }
  if (!binary) throw FormatError(name + ": only binary_little_endian PLY is supported");
  ExtractedMesh mesh;
  mesh.vertices.resize(nv);
  for (auto& v : mesh.vertices) {
    float xyz[3];
    if (!in.read(reinterpret_cast<char*>(xyz), sizeof xyz)) throw FormatError(name + " truncated");
    v = Vec3(xyz[0], xyz[1], xyz[2]);
  }
  mesh.faces.resize(nf);
  for (auto& f : mesh.faces) {
    unsigned char n = 0;
    std::int32_t idx[3];
    if (!in.read(reinterpret_cast<char*>(&n), 1) || n != 3 ||
        !in.read(reinterpret_cast<char*>(idx), sizeof idx))
      throw FormatError(name + " truncated or non-triangle face");
    f = {idx[0], idx[1], idx[2]};
  }
  return mesh;
}

}  // namespace

ExtractedMesh import_mesh(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string ext = path.extension().string();
  ExtractedMesh mesh = ext == ".ply" ? read_ply(in, path.string()) : read_obj(in, path.string());
  for (const auto& f : mesh.faces)
    for (int i : f)
      if (i < 0 || static_cast<std::size_t>(i) >= mesh.vertices.size())
        throw FormatError("face index out of range in " + path.string());
  return mesh;
}

ExtractedMesh subdivide_midpoint(const ExtractedMesh& mesh) {
  ExtractedMesh out;
  out.vertices = mesh.vertices;
  std::unordered_map<std::uint64_t, int> mid;
  auto midpoint = [&](int a, int b) {
    const auto key = edge_key(a, b);
    auto it = mid.find(key);
    if (it != mid.end()) return it->second;
    const int id = static_cast<int>(out.vertices.size());
    out.vertices.push_back(0.5 * (mesh.vertices[a] + mesh.vertices[b]));
    mid.emplace(key, id);
    return id;
  };
  for (const auto& f : mesh.faces) {
    const int ab = midpoint(f[0], f[1]), bc = midpoint(f[1], f[2]), ca = midpoint(f[2], f[0]);
    out.faces.push_back({f[0], ab, ca});
    out.faces.push_back({ab, f[1], bc});
    out.faces.push_back({ca, bc, f[2]});
    out.faces.push_back({ab, bc, ca});
  }
  return out;
}

}  // namespace meshloop
