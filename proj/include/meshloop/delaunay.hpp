#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "meshloop/common.hpp"

namespace meshloop {

using Tet = std::array<int, 4>;

// Delaunay tetrahedralization of a site array. Tets index the original site
// array and are positively oriented (orient3d > 0). Sites closer than
// 1e-9 * bbox diagonal to an earlier site are merged into it; site_remap
// maps every site to the representative that appears in `tets`.
struct Tetrahedralization {
  std::vector<Tet> tets;
  std::size_t n_sites = 0;
  std::vector<int> site_remap;
};

// Incremental Bowyer-Watson insertion in spatial (Morton) order, exact
// predicates, and a symbolic perturbation of the lifted coordinate keyed on
// (seed, site index) to resolve cospherical configurations. The convex hull
// is tracked with a vertex at infinity, so the result always covers it.
Tetrahedralization triangulate(std::span<const Vec3> sites, std::uint64_t seed = 0);

struct DelaunayViolation {
  std::size_t tet = 0;
  int site = 0;
  double depth = 0.0;  // how far inside the circumsphere, world units
};

// Brute-force empty-circumsphere check: reports every (tet, site) pair where
// the site is strictly inside the circumsphere by more than
// rel_tol * circumradius.
std::vector<DelaunayViolation> verify_delaunay(std::span<const Vec3> sites,
                                               std::span<const Tet> tets,
                                               double rel_tol = 1e-7);

double tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

// Even permutation starting at the smallest index, then lexicographic sort.
std::vector<Tet> canonical_tets(std::vector<Tet> tets);

}  // namespace meshloop
