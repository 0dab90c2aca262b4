#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cstdint>
#include <vector>

namespace trackkit {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

// SE(3) pose or pose update: y = R x + t. The quaternion is kept unit-norm.
struct RigidTransform {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Mat4 matrix() const;
  static RigidTransform from_matrix(const Mat4& m);

  // Quaternion sign canonicalized (w >= 0) and renormalized; used before
  // serialization so round trips are stable.
  RigidTransform canonical() const;
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);  // applies b, then a
RigidTransform invert(const RigidTransform& t);

Vec3 apply(const RigidTransform& t, const Vec3& p);

// Fixed-size point set; labels, when present, flag foreground points.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<std::uint8_t> labels;  // empty, or one entry per point

  bool has_labels() const { return !labels.empty(); }
  int size() const { return static_cast<int>(points.size()); }

  Vec3 centroid() const;
  void validate() const;  // N >= 1, finite coordinates, label count
};

PointCloud apply(const RigidTransform& t, const PointCloud& pc);

// Symmetric Chamfer distance: mean nearest-neighbor distance a->b plus
// mean nearest-neighbor distance b->a. Exact search.
double chamfer(const PointCloud& a, const PointCloud& b);

// Affine frame that re-expresses camera-frame data so the tracked model fits
// in a unit-diameter ball at the origin: x' = (x - center) / scale.
struct NormalizationFrame {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;  // meters per normalized unit

  Vec3 normalize(const Vec3& p) const { return (p - center) / scale; }
  Vec3 denormalize(const Vec3& p) const { return p * scale + center; }
  PointCloud normalize(const PointCloud& pc) const;

  // Pose acting on model coordinates pre-scaled by 1/scale.
  RigidTransform normalize_pose(const RigidTransform& t) const;
  RigidTransform denormalize_pose(const RigidTransform& t) const;

  // Conjugation for transforms that act on already-normalized points
  // (pose updates): U_cam = denorm . U . norm and back.
  RigidTransform normalize_update(const RigidTransform& u) const;
  RigidTransform denormalize_update(const RigidTransform& u) const;
};

struct ObjectModel;  // model.hpp

// Frame centered on the model under `model_pose`, scaled by the model
// diameter. Returns the re-expressed segment and pose alongside the frame.
struct NormalizedPair {
  PointCloud segment;
  RigidTransform pose;
  NormalizationFrame frame;
};
NormalizedPair normalize_pair(const PointCloud& segment, const RigidTransform& model_pose,
                              const ObjectModel& model);

// Intrinsic XYZ Euler angles: R = Rx(a) * Ry(b) * Rz(c).
Mat3 rotation_from_euler_xyz(const Vec3& abc);
// Throws NumericError past 89 degrees of pitch (gimbal neighborhood).
Vec3 euler_xyz_from_rotation(const Mat3& r);
// Non-throwing variant for control paths; pitch saturates instead.
Vec3 euler_xyz_saturating(const Mat3& r);

// Correction that maps `est` onto `gt` when composed on the left
// (compose(correction, est) == gt), decomposed as XYZ Euler + translation.
struct PoseResidual {
  Vec3 rotation_xyz = Vec3::Zero();  // radians
  Vec3 translation = Vec3::Zero();   // normalized units
};
PoseResidual residual(const RigidTransform& gt, const RigidTransform& est);
// As residual(), but never throws near gimbal lock (expert/control path).
PoseResidual residual_saturating(const RigidTransform& gt, const RigidTransform& est);

double rotation_geodesic(const Quat& a, const Quat& b);  // radians

}  // namespace trackkit
