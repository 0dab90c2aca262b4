#include "trackkit/kdtree.hpp"

#include <algorithm>
#include <limits>

#include "trackkit/errors.hpp"

namespace trackkit {

void KdTree3::build(const std::vector<Vec3>& points) {
  nodes_.clear();
  points_ = points;
  scratch_.clear();
  scratch_.reserve(points.size());
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    scratch_.emplace_back(points[static_cast<std::size_t>(i)], i);
  }
  nodes_.reserve(points.size());
  root_ = scratch_.empty() ? -1 : build_recursive(0, static_cast<int>(scratch_.size()));
  scratch_.clear();
  scratch_.shrink_to_fit();
}

int KdTree3::build_recursive(int begin, int end) {
  // Split on the widest extent; ties and degenerate spreads fall back to x.
  Vec3 lo = scratch_[static_cast<std::size_t>(begin)].first;
  Vec3 hi = lo;
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(scratch_[static_cast<std::size_t>(i)].first);
    hi = hi.cwiseMax(scratch_[static_cast<std::size_t>(i)].first);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);

  const int mid = begin + (end - begin) / 2;
  std::nth_element(scratch_.begin() + begin, scratch_.begin() + mid, scratch_.begin() + end,
                   [axis](const auto& a, const auto& b) {
                     if (a.first[axis] != b.first[axis]) return a.first[axis] < b.first[axis];
                     return a.second < b.second;
                   });

  Node node;
  node.point = scratch_[static_cast<std::size_t>(mid)].first;
  node.index = scratch_[static_cast<std::size_t>(mid)].second;
  node.axis = axis;
  node.left = (mid > begin) ? build_recursive(begin, mid) : -1;
  node.right = (mid + 1 < end) ? build_recursive(mid + 1, end) : -1;
  nodes_.push_back(node);
  return static_cast<int>(nodes_.size()) - 1;
}

KdTree3::Hit KdTree3::nearest(const Vec3& query) const {
  if (nodes_.empty()) throw NumericError("nearest-neighbor query on empty tree");
  Hit best;
  best.distance = std::numeric_limits<double>::infinity();
  search(root_, query, best);
  best.distance = std::sqrt(best.distance);
  return best;
}

void KdTree3::search(int node_id, const Vec3& q, Hit& best) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  const double d2 = (node.point - q).squaredNorm();
  if (d2 < best.distance || (d2 == best.distance && node.index < best.index)) {
    best.distance = d2;
    best.index = node.index;
  }
  const double delta = q[node.axis] - node.point[node.axis];
  const int near = delta < 0.0 ? node.left : node.right;
  const int far = delta < 0.0 ? node.right : node.left;
  if (near >= 0) search(near, q, best);
  if (far >= 0 && delta * delta <= best.distance) search(far, q, best);
}

double mean_nn_distance(const PointCloud& from, const KdTree3& tree) {
  if (from.size() == 0) throw NumericError("mean_nn_distance over empty cloud");
  double sum = 0.0;
  for (const Vec3& p : from.points) sum += tree.nearest(p).distance;
  return sum / static_cast<double>(from.size());
}

}  // namespace trackkit
