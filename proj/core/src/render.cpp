#include "trackkit/render.hpp"

#include <algorithm>
#include <cmath>

#include "trackkit/errors.hpp"
#include "trackkit/rng.hpp"

namespace trackkit {

namespace {

constexpr double kNearPlane = 1e-4;  // meters

struct ScreenVertex {
  double x, y;      // continuous pixel coordinates
  double inv_z;
};

// Clips a camera-frame triangle against z >= near; emits 0, 3 or 4 vertices.
int clip_near(const Vec3 in[3], Vec3 out[4]) {
  int n = 0;
  for (int i = 0; i < 3; ++i) {
    const Vec3& a = in[i];
    const Vec3& b = in[(i + 1) % 3];
    const bool a_in = a.z() >= kNearPlane;
    const bool b_in = b.z() >= kNearPlane;
    if (a_in) out[n++] = a;
    if (a_in != b_in) {
      const double t = (kNearPlane - a.z()) / (b.z() - a.z());
      out[n++] = a + t * (b - a);
    }
  }
  return n;
}

inline double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

// Boundary pixels belong to top edges (horizontal, interior below) and left
// edges (pointing up in image coordinates), so shared edges are written by
// exactly one triangle.
inline bool top_left(const ScreenVertex& a, const ScreenVertex& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

void raster_triangle(DepthImage& zbuf, std::vector<std::int32_t>* owner, std::int32_t id,
                     ScreenVertex v0, ScreenVertex v1, ScreenVertex v2) {
  const double area2 = (v1.x - v0.x) * (v2.y - v0.y) - (v1.y - v0.y) * (v2.x - v0.x);
  if (area2 == 0.0) return;
  if (area2 < 0.0) std::swap(v1, v2);  // culling disabled: orient instead

  const double min_x = std::min({v0.x, v1.x, v2.x});
  const double max_x = std::max({v0.x, v1.x, v2.x});
  const double min_y = std::min({v0.y, v1.y, v2.y});
  const double max_y = std::max({v0.y, v1.y, v2.y});

  const int x0 = std::max(0, static_cast<int>(std::floor(min_x - 0.5)));
  const int x1 = std::min(zbuf.width - 1, static_cast<int>(std::ceil(max_x - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
  const int y1 = std::min(zbuf.height - 1, static_cast<int>(std::ceil(max_y - 0.5)));

  for (int y = y0; y <= y1; ++y) {
    const double py = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5;
      const double w0 = edge(v1, v2, px, py);
      const double w1 = edge(v2, v0, px, py);
      const double w2 = edge(v0, v1, px, py);
      const bool in0 = w0 > 0.0 || (w0 == 0.0 && top_left(v1, v2));
      const bool in1 = w1 > 0.0 || (w1 == 0.0 && top_left(v2, v0));
      const bool in2 = w2 > 0.0 || (w2 == 0.0 && top_left(v0, v1));
      if (!(in0 && in1 && in2)) continue;
      const double denom = w0 + w1 + w2;
      if (denom <= 0.0) continue;
      const double inv_z = (w0 * v0.inv_z + w1 * v1.inv_z + w2 * v2.inv_z) / denom;
      if (inv_z <= 0.0) continue;
      const float z = static_cast<float>(1.0 / inv_z);
      float& slot = zbuf.at(x, y);
      if (slot == 0.f || z < slot) {
        slot = z;
        if (owner) (*owner)[static_cast<std::size_t>(y) * zbuf.width + x] = id;
      }
    }
  }
}

}  // namespace

void CameraIntrinsics::validate() const {
  if (width < 1 || height < 1) throw ConfigError("intrinsics: image dimensions must be positive");
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("intrinsics: focal lengths must be positive");
  if (cx < 0.0 || cx > width || cy < 0.0 || cy > height) {
    throw ConfigError("intrinsics: principal point outside the image");
  }
}

int MaskImage::count() const {
  int n = 0;
  for (const auto b : bits) n += b != 0;
  return n;
}

void rasterize_into(DepthImage& zbuf, std::vector<std::int32_t>* owner, std::int32_t id,
                    const TriangleMesh& mesh, const RigidTransform& pose,
                    const CameraIntrinsics& intr) {
  const Mat3 r = pose.rotation.toRotationMatrix();
  std::vector<Vec3> cam(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    cam[i] = r * mesh.vertices[i] + pose.translation;
  }

  auto project = [&](const Vec3& p) {
    return ScreenVertex{intr.fx * p.x() / p.z() + intr.cx, intr.fy * p.y() / p.z() + intr.cy,
                        1.0 / p.z()};
  };

  for (const auto& t : mesh.triangles) {
    const Vec3 tri[3] = {cam[static_cast<std::size_t>(t[0])], cam[static_cast<std::size_t>(t[1])],
                         cam[static_cast<std::size_t>(t[2])]};
    Vec3 poly[4];
    const int n = clip_near(tri, poly);
    if (n < 3) continue;
    const ScreenVertex s0 = project(poly[0]);
    ScreenVertex prev = project(poly[1]);
    for (int k = 2; k < n; ++k) {
      const ScreenVertex cur = project(poly[k]);
      raster_triangle(zbuf, owner, id, s0, prev, cur);
      prev = cur;
    }
  }
}

DepthImage rasterize(const TriangleMesh& mesh, const RigidTransform& pose,
                     const CameraIntrinsics& intr) {
  intr.validate();
  DepthImage zbuf(intr.width, intr.height);
  rasterize_into(zbuf, nullptr, 0, mesh, pose, intr);
  return zbuf;
}

MaskImage mask_of(const DepthImage& d) {
  MaskImage m(d.width, d.height);
  for (std::size_t i = 0; i < d.depth.size(); ++i) m.bits[i] = d.depth[i] > 0.f ? 1 : 0;
  return m;
}

MaskImage dilate(const MaskImage& mask, int radius) {
  if (radius <= 0) return mask;
  MaskImage cur = mask;
  MaskImage next(mask.width, mask.height);
  for (int step = 0; step < radius; ++step) {
    for (int y = 0; y < cur.height; ++y) {
      for (int x = 0; x < cur.width; ++x) {
        bool on = false;
        for (int dy = -1; dy <= 1 && !on; ++dy) {
          for (int dx = -1; dx <= 1 && !on; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (nx >= 0 && nx < cur.width && ny >= 0 && ny < cur.height && cur.at(nx, ny)) {
              on = true;
            }
          }
        }
        next.set(x, y, on);
      }
    }
    std::swap(cur, next);
  }
  return cur;
}

double visibility_ratio(const DepthImage& rendered, const DepthImage& observed, double tau) {
  if (rendered.width != observed.width || rendered.height != observed.height) {
    throw NumericError("visibility_ratio: image dimensions differ");
  }
  long long rendered_count = 0, inliers = 0;
  for (std::size_t i = 0; i < rendered.depth.size(); ++i) {
    const float r = rendered.depth[i];
    if (r <= 0.f) continue;
    ++rendered_count;
    const float o = observed.depth[i];
    if (o > 0.f && static_cast<double>(r) <= static_cast<double>(o) + tau) ++inliers;
  }
  if (rendered_count == 0) return 0.0;
  return static_cast<double>(inliers) / static_cast<double>(rendered_count);
}

Vec3 backproject(int x, int y, double depth, const CameraIntrinsics& intr) {
  return {(x + 0.5 - intr.cx) / intr.fx * depth, (y + 0.5 - intr.cy) / intr.fy * depth, depth};
}

PointCloud extract_segment(const DepthImage& observed, const MaskImage& mask,
                           const CameraIntrinsics& intr, int n_points, std::uint64_t seed) {
  if (n_points < 1) throw ConfigError("extract_segment: n_points must be >= 1");
  if (observed.width != mask.width || observed.height != mask.height) {
    throw NumericError("extract_segment: mask dimensions differ from depth");
  }

  std::vector<int> valid;  // linear pixel indices, row-major
  for (int y = 0; y < observed.height; ++y) {
    for (int x = 0; x < observed.width; ++x) {
      if (mask.at(x, y) && observed.at(x, y) > 0.f) {
        valid.push_back(y * observed.width + x);
      }
    }
  }
  if (valid.empty()) {
    throw LostSegmentError("segment lost: mask does not intersect valid depth");
  }

  Rng rng(seed);
  std::vector<int> chosen;
  if (static_cast<int>(valid.size()) > n_points) {
    const auto pick = rng.sample_without_replacement(static_cast<int>(valid.size()), n_points);
    chosen.reserve(static_cast<std::size_t>(n_points));
    for (const int i : pick) chosen.push_back(valid[static_cast<std::size_t>(i)]);
  } else {
    chosen = valid;
    for (int i = static_cast<int>(valid.size()); i < n_points; ++i) {
      chosen.push_back(valid[static_cast<std::size_t>(i % static_cast<int>(valid.size()))]);
    }
  }

  PointCloud pc;
  pc.points.reserve(static_cast<std::size_t>(n_points));
  for (const int lin : chosen) {
    const int x = lin % observed.width;
    const int y = lin / observed.width;
    pc.points.push_back(backproject(x, y, observed.at(x, y), intr));
  }
  return pc;
}

}  // namespace trackkit
