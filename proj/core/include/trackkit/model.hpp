#pragma once

#include <array>
#include <string>
#include <vector>

#include "trackkit/geometry.hpp"
#include "trackkit/rng.hpp"

namespace trackkit {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  double area() const;
  // Every undirected edge is shared by exactly two triangles.
  bool is_closed() const;
};

// Tracked object: mesh for rendering, uniform surface samples for alignment,
// diameter for normalization.
struct ObjectModel {
  std::string id;
  TriangleMesh mesh;
  std::vector<Vec3> sample_points;  // object frame, meters
  double diameter = 0.0;            // meters

  Vec3 sample_centroid() const;
  PointCloud sample_cloud() const;
};

enum class PrimitiveKind { Box, Cylinder, LBlock, Stack };

PrimitiveKind primitive_kind_from_string(const std::string& s);
std::string to_string(PrimitiveKind kind);

// dims per kind:
//   Box:      {sx, sy, sz}
//   Cylinder: {radius, height}
//   LBlock:   {sx, sy, sz, arm}  (arm < sx, arm < sy; L footprint extruded in z)
//   Stack:    {sx, sy, sz, tx, ty, tz}  (top box centered on the base box)
ObjectModel make_primitive(PrimitiveKind kind, const std::vector<double>& dims, int samples,
                           std::uint64_t seed, const std::string& id = "");

// Uniform area-weighted surface sampling.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, int count, Rng& rng);

// Max pairwise distance over samples and mesh vertices. Vertices participate
// so that box corners and cylinder rims are hit exactly.
double compute_diameter(const std::vector<Vec3>& samples, const std::vector<Vec3>& vertices);

// Distance from a point to the closest triangle (oracle for sampling and
// backprojection checks).
double point_mesh_distance(const Vec3& p, const TriangleMesh& mesh);

// Model sample points scaled by 1/frame.scale and posed by the normalized
// pose, i.e. the refinement target cloud in the normalized frame.
PointCloud model_points_normalized(const ObjectModel& model, const NormalizationFrame& frame,
                                   const RigidTransform& pose_cam);

}  // namespace trackkit
