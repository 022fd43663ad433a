#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "meshloop/scene.hpp"

namespace testing_support {

using meshloop::Vec3;

// ||a - b|| / max(||a||, ||b||, floor)
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b,
                      double floor = 1e-12) {
  double num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(num) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central differences of f over params, which are restored afterwards.
inline std::vector<double> fd_gradient(std::vector<double*> params,
                                       const std::function<double()>& f, double h) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double x = *params[i];
    *params[i] = x + h;
    const double fp = f();
    *params[i] = x - h;
    const double fm = f();
    *params[i] = x;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

// Camera at `eye` looking at the origin, z up.
inline meshloop::Camera test_camera(const Vec3& eye, int w = 16, int h = 16, double focal = 16) {
  return meshloop::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), w, h, focal);
}

inline meshloop::Gaussian random_gaussian(std::mt19937_64& rng, double spread, double scale_lo,
                                          double scale_hi, double opa_lo, double opa_hi) {
  std::uniform_real_distribution<double> u(-1, 1), s(std::log(scale_lo), std::log(scale_hi)),
      o(opa_lo, opa_hi), c(0, 1);
  meshloop::Gaussian g;
  g.mu = spread * Vec3(u(rng), u(rng), u(rng));
  g.quat = meshloop::Vec4(u(rng), u(rng), u(rng), u(rng)).normalized();
  g.log_scale = Vec3(s(rng), s(rng), s(rng));
  g.logit_opacity = meshloop::logit(o(rng));
  g.color = Vec3(c(rng), c(rng), c(rng));
  for (auto& v : g.sdf_pre) v = u(rng);
  return g;
}

}  // namespace testing_support
