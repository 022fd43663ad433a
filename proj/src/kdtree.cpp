#include "meshloop/kdtree.hpp"

#include <algorithm>
#include <numeric>

namespace meshloop {

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<std::int32_t>(points_.size()));
  }
}

std::int32_t KdTree::build(std::int32_t lo, std::int32_t hi) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({lo, hi, -1, -1, -1, 0.0});
  if (hi - lo <= kLeafSize) return id;

  Vec3 mn = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 mx = -mn;
  for (std::int32_t i = lo; i < hi; ++i) {
    mn = mn.cwiseMin(points_[order_[i]]);
    mx = mx.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const std::int32_t mid = lo + (hi - lo) / 2;
  std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                   [&](std::int32_t a, std::int32_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(lo, mid);
  const std::int32_t right = build(mid, hi);
  Node& n = nodes_[id];
  n.axis = static_cast<std::int8_t>(axis);
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void KdTree::search(std::int32_t node_id, const Vec3& q, std::int64_t skip,
                    std::int64_t& best, double& best_d2) const {
  const Node& n = nodes_[node_id];
  if (n.axis < 0) {
    for (std::int32_t i = n.lo; i < n.hi; ++i) {
      const std::int32_t idx = order_[i];
      if (idx == skip) continue;
      const double d2 = (points_[idx] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const std::int32_t near = diff < 0 ? n.left : n.right;
  const std::int32_t far = diff < 0 ? n.right : n.left;
  search(near, q, skip, best, best_d2);
  if (diff * diff <= best_d2) search(far, q, skip, best, best_d2);
}

std::int64_t KdTree::nearest(const Vec3& q, double* dist2, std::int64_t skip) const {
  std::int64_t best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  if (!nodes_.empty()) search(0, q, skip, best, best_d2);
  if (dist2) *dist2 = best_d2;
  return best;
}

double KdTree::nearest_distance(const Vec3& q) const {
  double d2 = 0;
  nearest(q, &d2);
  return std::sqrt(d2);
}

}  // namespace meshloop
