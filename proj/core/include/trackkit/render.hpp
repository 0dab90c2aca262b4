#pragma once

#include <cstdint>
#include <vector>

#include "trackkit/geometry.hpp"
#include "trackkit/model.hpp"

namespace trackkit {

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;  // pixels
  int width = 0, height = 0;

  void validate() const;
};

// Depth in meters; 0 marks empty pixels. Row-major, row y at y*width.
struct DepthImage {
  int width = 0, height = 0;
  std::vector<float> depth;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, 0.f) {}

  float at(int x, int y) const { return depth[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return depth[static_cast<std::size_t>(y) * width + x]; }
};

struct MaskImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> bits;

  MaskImage() = default;
  MaskImage(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  int count() const;
};

// Z-buffer rasterization of `mesh` under `pose`, perspective projection,
// nearest surface wins, no back-face culling. Off-screen geometry simply
// leaves the image empty. When `owner` is given, pixels written by this call
// are tagged with `id`.
void rasterize_into(DepthImage& zbuf, std::vector<std::int32_t>* owner, std::int32_t id,
                    const TriangleMesh& mesh, const RigidTransform& pose,
                    const CameraIntrinsics& intr);

DepthImage rasterize(const TriangleMesh& mesh, const RigidTransform& pose,
                     const CameraIntrinsics& intr);

MaskImage mask_of(const DepthImage& d);

// Chebyshev dilation by `radius` pixels.
MaskImage dilate(const MaskImage& mask, int radius);

// Fraction of rendered pixels that are at most tau behind valid observed
// depth. Empty renders give 0.
double visibility_ratio(const DepthImage& rendered, const DepthImage& observed, double tau);

// Camera-frame ray through the center of pixel (x, y) scaled to `depth`.
Vec3 backproject(int x, int y, double depth, const CameraIntrinsics& intr);

// Backprojects masked valid pixels and deterministically subsamples or pads
// to exactly n_points. Throws LostSegmentError when the mask does not
// intersect valid depth.
PointCloud extract_segment(const DepthImage& observed, const MaskImage& mask,
                           const CameraIntrinsics& intr, int n_points, std::uint64_t seed);

}  // namespace trackkit
