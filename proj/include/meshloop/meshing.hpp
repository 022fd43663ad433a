#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "meshloop/delaunay.hpp"

namespace meshloop {

// Crossing edge and the SDF values that placed a vertex.
struct VertexProvenance {
  int site_a = 0;
  int site_b = 0;  // site_a < site_b
  double f_a = 0.0;
  double f_b = 0.0;
};

struct ExtractedMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<VertexProvenance> provenance;  // empty for imported meshes

  bool empty() const { return faces.empty(); }
};

// SDF values with |f| < kSdfNudge are moved to -kSdfNudge before extraction.
inline constexpr double kSdfNudge = 1e-12;

// Zero level set of per-site SDF values over the tetrahedra. One vertex per
// sign-changing edge at v = (f_a p_b - f_b p_a) / (f_a - f_b); faces are
// wound so their normals point from negative to positive values.
ExtractedMesh marching_tetrahedra(std::span<const Tet> tets, std::span<const Vec3> sites,
                                  std::span<const double> sdf);

// Derivatives of one vertex position. d_site_a = (1 - w) I and
// d_site_b = w I with w = f_a / (f_a - f_b).
struct VertexJacobian {
  Mat3 d_site_a = Mat3::Zero();
  Mat3 d_site_b = Mat3::Zero();
  Vec3 d_f_a = Vec3::Zero();
  Vec3 d_f_b = Vec3::Zero();
};

std::vector<VertexJacobian> mt_gradients(const ExtractedMesh& mesh, std::span<const Vec3> sites,
                                         std::span<const double> sdf);

// Chain dL/d(vertex) back to sites and SDF values (accumulated into the
// output arrays, which must be sized to the site count).
void mt_backward(const ExtractedMesh& mesh, std::span<const Vec3> sites,
                 std::span<const double> sdf, std::span<const Vec3> grad_vertices,
                 std::span<Vec3> grad_sites, std::span<double> grad_sdf);

struct ComponentReport {
  int n_components = 0;
  int n_interior = 0;
  double interior_area_fraction = 0.0;
  std::vector<int> face_component;  // per face
  std::vector<bool> interior;       // per component
};

// Connected components (through shared vertices) and their classification.
// A component is interior when rays from a point on it cross the other
// components an odd number of times in both directions along (perturbed) x.
ComponentReport interior_components(const ExtractedMesh& mesh);

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);
double mesh_area(const ExtractedMesh& mesh);

enum class MeshFormat { kObj, kPly };
MeshFormat parse_mesh_format(const std::string& name);

// ASCII OBJ or binary little-endian PLY (float32 positions, int32 indices).
void export_mesh(const ExtractedMesh& mesh, const std::filesystem::path& path, MeshFormat format);
// Reads what export_mesh writes; the format is taken from the extension.
ExtractedMesh import_mesh(const std::filesystem::path& path);

// Split every face into four at edge midpoints (shared edges share the new
// vertex). Provenance is dropped.
ExtractedMesh subdivide_midpoint(const ExtractedMesh& mesh);

}  // namespace meshloop
