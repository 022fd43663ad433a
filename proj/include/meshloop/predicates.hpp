#pragma once

#include <array>
#include <cstdint>

#include "meshloop/common.hpp"

// Exact geometric predicates: a floating-point filter backed by exact
// expansion arithmetic when the filter cannot certify the sign.
namespace meshloop::predicates {

// Sign of det[b - a; c - a; d - a]; positive when d lies on the side of
// plane (a, b, c) that its normal (b - a) x (c - a) points to.
int orient3d(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

// Sign of the lifted 5x5 determinant |x y z |x|^2 1| with rows a, b, c, d, e.
// For orient3d(a, b, c, d) > 0 it is negative iff e is strictly inside the
// circumsphere.
int insphere_det(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d,
                 const Vec3& e);

// Symbolically perturbed version: the lifted coordinate of each point gets an
// infinitesimal positive offset ordered by `priority` (higher = larger). Never
// returns 0 as long as (a, b, c, d) is not coplanar. Same sign convention as
// insphere_det.
int insphere_det_sos(const std::array<const Vec3*, 5>& pts,
                     const std::array<std::uint64_t, 5>& priority);

// Double-precision values, for diagnostics and oracles.
double orient3d_fast(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

}  // namespace meshloop::predicates
