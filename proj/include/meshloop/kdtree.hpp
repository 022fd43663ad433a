#pragma once

#include <cstdint>
#include <vector>

#include "meshloop/common.hpp"

namespace meshloop {

// Static 3D k-d tree with exact nearest-neighbour queries.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points);

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

  // Index of the nearest stored point; `skip` excludes one index (used for
  // nearest-other-point queries). Returns -1 when nothing qualifies.
  std::int64_t nearest(const Vec3& q, double* dist2 = nullptr,
                       std::int64_t skip = -1) const;
  double nearest_distance(const Vec3& q) const;

 private:
  struct Node {
    std::int32_t lo = 0, hi = 0;  // range into order_
    std::int32_t left = -1, right = -1;
    std::int8_t axis = -1;        // -1 for leaves
    double split = 0.0;
  };

  std::int32_t build(std::int32_t lo, std::int32_t hi);
  void search(std::int32_t node, const Vec3& q, std::int64_t skip,
              std::int64_t& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<std::int32_t> order_;
  std::vector<Node> nodes_;
  static constexpr int kLeafSize = 8;
};

}  // namespace meshloop
