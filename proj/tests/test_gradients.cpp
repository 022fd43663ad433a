// Finite-difference checks for every backward pass.
#include <doctest.h>

#include "gradient_checks.hpp"

using namespace testing_support;

namespace {

void report(const GradCheck& r) {
  MESSAGE(r.instances << " instances, " << r.coords << " coordinates, " << r.skipped
                      << " skipped, worst relative error " << r.worst);
}

}  // namespace

TEST_CASE("gaussian renderer backward matches finite differences") {
  const auto r = check_gaussian_renderer(100);
  report(r);
  CHECK(r.worst < 1e-4);
}

TEST_CASE("marching tetrahedra vertex jacobian matches finite differences") {
  const auto r = check_mt_jacobian(100);
  report(r);
  CHECK(r.coords > 100 * 24);
  CHECK(r.worst < 1e-6);
}

TEST_CASE("marching tetrahedra backward matches finite differences of the extracted mesh") {
  const auto r = check_mt_backward(100);
  report(r);
  CHECK(r.worst < 1e-6);
}

TEST_CASE("mesh rasterizer depth and normal gradients match finite differences") {
  const auto r = check_mesh_rasterizer(100);
  report(r);
  CHECK(r.worst < 1e-5);
}

TEST_CASE("depth_to_normal backward matches finite differences") {
  const auto r = check_depth_to_normal(100);
  report(r);
  CHECK(r.worst < 1e-6);
}

TEST_CASE("antialias backward matches finite differences") {
  CHECK(check_antialias(100).worst < 1e-6);
}

TEST_CASE("photometric loss gradient matches finite differences") {
  const auto r = check_photometric(100);
  report(r);
  CHECK(r.worst < 1e-4);
}

TEST_CASE("normal consistency and mesh normal gradients match finite differences") {
  CHECK(check_normal_losses(100).worst < 1e-6);
}

TEST_CASE("mesh depth loss gradients match finite differences") {
  CHECK(check_mesh_depth_loss(100).worst < 1e-6);
}

TEST_CASE("erosion and interior gradients match finite differences") {
  CHECK(check_sdf_losses(100).worst < 1e-6);
}

TEST_CASE("end-to-end loss gradient with frozen tetrahedra matches finite differences") {
  const auto r = check_end_to_end(100);
  report(r);
  CHECK(r.instances == 100);
  CHECK(r.skipped < r.coords / 10);
  CHECK(r.worst < 1e-3);
}
