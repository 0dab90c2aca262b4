#pragma once

#include <vector>

#include "trackkit/geometry.hpp"

namespace trackkit {

// Exact nearest-neighbor search over a fixed 3D point set. Median-split
// k-d tree with branch-and-bound descent.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(const std::vector<Vec3>& points) { build(points); }

  void build(const std::vector<Vec3>& points);

  struct Hit {
    int index = -1;
    double distance = 0.0;
  };
  Hit nearest(const Vec3& query) const;

  bool empty() const { return nodes_.empty(); }
  int size() const { return static_cast<int>(points_.size()); }

 private:
  struct Node {
    Vec3 point;
    int index;      // index into the original input
    int left;       // -1 when absent
    int right;      // -1 when absent
    int axis;
  };

  int build_recursive(int begin, int end);
  void search(int node, const Vec3& q, Hit& best) const;

  std::vector<Node> nodes_;
  std::vector<Vec3> points_;           // original order
  std::vector<std::pair<Vec3, int>> scratch_;
  int root_ = -1;
};

// Mean nearest-neighbor distance from each point of `from` to the set
// indexed by `tree`.
double mean_nn_distance(const PointCloud& from, const KdTree3& tree);

}  // namespace trackkit
