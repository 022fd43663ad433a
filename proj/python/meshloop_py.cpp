// Thin numpy front-end over the core library.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "meshloop/cli.hpp"
#include "meshloop/delaunay.hpp"
#include "meshloop/eval.hpp"
#include "meshloop/meshing.hpp"
#include "meshloop/scene.hpp"

namespace py = pybind11;
using namespace meshloop;

namespace {

constexpr int kFields = 23;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32 = py::array_t<int, py::array::c_style | py::array::forcecast>;

template <class T>
void require_shape(const py::array_t<T, py::array::c_style | py::array::forcecast>& a, long cols,
                   const char* what) {
  if (a.ndim() != 2 || a.shape(1) != cols)
    throw InvalidArgument(std::string(what) + " must have shape (n, " + std::to_string(cols) + ")");
}

std::vector<Vec3> to_points(const F64& a, const char* what) {
  require_shape(a, 3, what);
  std::vector<Vec3> out(a.shape(0));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i] = Vec3(r(i, 0), r(i, 1), r(i, 2));
  return out;
}

F64 from_points(const std::vector<Vec3>& p) {
  F64 out({static_cast<py::ssize_t>(p.size()), py::ssize_t{3}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < p.size(); ++i)
    for (int k = 0; k < 3; ++k) w(i, k) = p[i][k];
  return out;
}

template <std::size_t N>
I32 from_index(const std::vector<std::array<int, N>>& v) {
  I32 out({static_cast<py::ssize_t>(v.size()), static_cast<py::ssize_t>(N)});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t k = 0; k < N; ++k) w(i, k) = v[i][k];
  return out;
}

template <std::size_t N>
std::vector<std::array<int, N>> to_index(const I32& a, const char* what) {
  require_shape(a, static_cast<long>(N), what);
  std::vector<std::array<int, N>> out(a.shape(0));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (std::size_t k = 0; k < N; ++k) out[i][k] = r(i, k);
  return out;
}

// One row per Gaussian in file order: mu, quat, log_scale, logit_opacity,
// rgb, sdf_pre.
F64 scene_to_array(const GaussianScene& s) {
  F64 out({static_cast<py::ssize_t>(s.size()), py::ssize_t{kFields}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& g = s[i];
    int c = 0;
    for (int k = 0; k < 3; ++k) w(i, c++) = g.mu[k];
    for (int k = 0; k < 4; ++k) w(i, c++) = g.quat[k];
    for (int k = 0; k < 3; ++k) w(i, c++) = g.log_scale[k];
    w(i, c++) = g.logit_opacity;
    for (int k = 0; k < 3; ++k) w(i, c++) = g.color[k];
    for (double f : g.sdf_pre) w(i, c++) = f;
  }
  return out;
}

GaussianScene array_to_scene(const F64& a) {
  require_shape(a, kFields, "scene array");
  GaussianScene s(a.shape(0));
  auto r = a.unchecked<2>();
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto& g = s[i];
    int c = 0;
    for (int k = 0; k < 3; ++k) g.mu[k] = r(i, c++);
    for (int k = 0; k < 4; ++k) g.quat[k] = r(i, c++);
    for (int k = 0; k < 3; ++k) g.log_scale[k] = r(i, c++);
    g.logit_opacity = r(i, c++);
    for (int k = 0; k < 3; ++k) g.color[k] = r(i, c++);
    for (double& f : g.sdf_pre) f = r(i, c++);
  }
  return s;
}

}  // namespace

PYBIND11_MODULE(_meshloop, m) {
  m.doc() = "meshloop core bindings";
  // Later registrations are tried first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  m.attr("FIELDS_PER_GAUSSIAN") = kFields;

  m.def(
      "triangulate",
      [](const F64& sites, std::uint64_t seed) {
        const auto pts = to_points(sites, "sites");
        return from_index(triangulate(pts, seed).tets);
      },
      py::arg("sites"), py::arg("seed") = 0, "Delaunay tetrahedra, (m, 4) int32.");

  m.def(
      "marching_tetrahedra",
      [](const I32& tets, const F64& sites, const F64& sdf) {
        const auto t = to_index<4>(tets, "tets");
        const auto p = to_points(sites, "sites");
        if (sdf.ndim() != 1 || sdf.shape(0) != static_cast<py::ssize_t>(p.size()))
          throw InvalidArgument("sdf must have one value per site");
        const auto mesh = marching_tetrahedra(t, p, std::span<const double>(sdf.data(), p.size()));
        return py::make_tuple(from_points(mesh.vertices), from_index(mesh.faces));
      },
      py::arg("tets"), py::arg("sites"), py::arg("sdf"), "Zero level set as (vertices, faces).");

  m.def("load_scene", [](const std::string& path) { return scene_to_array(load_scene(path)); },
        py::arg("path"));
  m.def("save_scene", [](const std::string& path, const F64& a) { save_scene(array_to_scene(a), path); },
        py::arg("path"), py::arg("scene"));

  m.def(
      "evaluate_geometry",
      [](const F64& vertices, const I32& faces, const F64& gt, double threshold, std::size_t n_samples,
         std::uint64_t seed) {
        ExtractedMesh mesh;
        mesh.vertices = to_points(vertices, "vertices");
        mesh.faces = to_index<3>(faces, "faces");
        const auto g = to_points(gt, "gt");
        const auto r = evaluate_geometry(mesh, g, threshold, n_samples, seed);
        py::dict d;
        d["accuracy"] = r.accuracy;
        d["completeness"] = r.completeness;
        d["chamfer"] = r.chamfer;
        d["precision"] = r.precision;
        d["recall"] = r.recall;
        d["f1"] = r.f1;
        return d;
      },
      py::arg("vertices"), py::arg("faces"), py::arg("gt"), py::arg("threshold"),
      py::arg("n_samples") = 100000, py::arg("seed") = 0);

  m.def(
      "run",
      [](const std::string& config, const std::map<std::string, std::string>& overrides) {
        std::vector<std::pair<std::string, std::string>> ov(overrides.begin(), overrides.end());
        std::ostringstream log, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cmd_run(config, ov, log, err);
        }
        return py::make_tuple(code, log.str(), err.str());
      },
      py::arg("config"), py::arg("overrides") = std::map<std::string, std::string>{},
      "Same as `meshloop run`; returns (exit_code, log, err).");

  m.def("output_root", []() { return output_root().string(); });
}
