#include "trackkit/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "trackkit/errors.hpp"
#include "trackkit/kdtree.hpp"
#include "trackkit/model.hpp"

namespace trackkit {

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation.toRotationMatrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  RigidTransform t;
  t.rotation = Quat(Mat3(m.topLeftCorner<3, 3>())).normalized();
  t.translation = m.topRightCorner<3, 1>();
  return t;
}

RigidTransform RigidTransform::canonical() const {
  RigidTransform t = *this;
  t.rotation.normalize();
  if (t.rotation.w() < 0.0) t.rotation.coeffs() = -t.rotation.coeffs();
  return t;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

RigidTransform invert(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.conjugate();
  out.translation = -(out.rotation * t.translation);
  return out;
}

Vec3 apply(const RigidTransform& t, const Vec3& p) { return t.rotation * p + t.translation; }

Vec3 PointCloud::centroid() const {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : points) c += p;
  return c / static_cast<double>(points.size());
}

void PointCloud::validate() const {
  if (points.empty()) throw NumericError("point cloud is empty");
  if (!labels.empty() && labels.size() != points.size()) {
    throw NumericError("label count does not match point count");
  }
  for (const Vec3& p : points) {
    if (!p.allFinite()) throw NumericError("point cloud contains non-finite coordinates");
  }
}

PointCloud apply(const RigidTransform& t, const PointCloud& pc) {
  PointCloud out;
  out.points.reserve(pc.points.size());
  const Mat3 r = t.rotation.toRotationMatrix();
  for (const Vec3& p : pc.points) out.points.push_back(r * p + t.translation);
  out.labels = pc.labels;
  return out;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.size() == 0 || b.size() == 0) throw NumericError("chamfer over empty cloud");
  KdTree3 tree_a(a.points);
  KdTree3 tree_b(b.points);
  return mean_nn_distance(a, tree_b) + mean_nn_distance(b, tree_a);
}

PointCloud NormalizationFrame::normalize(const PointCloud& pc) const {
  PointCloud out;
  out.points.reserve(pc.points.size());
  for (const Vec3& p : pc.points) out.points.push_back(normalize(p));
  out.labels = pc.labels;
  return out;
}

RigidTransform NormalizationFrame::normalize_pose(const RigidTransform& t) const {
  return {t.rotation, (t.translation - center) / scale};
}

RigidTransform NormalizationFrame::denormalize_pose(const RigidTransform& t) const {
  return {t.rotation, t.translation * scale + center};
}

RigidTransform NormalizationFrame::normalize_update(const RigidTransform& u) const {
  // x' = (x - c)/s: conjugate u by the frame map.
  const Mat3 r = u.rotation.toRotationMatrix();
  return {u.rotation, (r * center + u.translation - center) / scale};
}

RigidTransform NormalizationFrame::denormalize_update(const RigidTransform& u) const {
  const Mat3 r = u.rotation.toRotationMatrix();
  return {u.rotation, center - r * center + u.translation * scale};
}

NormalizedPair normalize_pair(const PointCloud& segment, const RigidTransform& model_pose,
                              const ObjectModel& model) {
  segment.validate();
  if (!(model.diameter > 0.0)) throw NumericError("model has zero diameter");
  NormalizationFrame frame;
  frame.center = apply(model_pose, model.sample_centroid());
  frame.scale = model.diameter;
  return {frame.normalize(segment), frame.normalize_pose(model_pose), frame};
}

Mat3 rotation_from_euler_xyz(const Vec3& abc) {
  const Mat3 rx = Eigen::AngleAxisd(abc.x(), Vec3::UnitX()).toRotationMatrix();
  const Mat3 ry = Eigen::AngleAxisd(abc.y(), Vec3::UnitY()).toRotationMatrix();
  const Mat3 rz = Eigen::AngleAxisd(abc.z(), Vec3::UnitZ()).toRotationMatrix();
  return rx * ry * rz;
}

Vec3 euler_xyz_from_rotation(const Mat3& r) {
  // R = Rx(a)Ry(b)Rz(c):
  //   R02 = sin b; R12 = -sin a cos b; R22 = cos a cos b;
  //   R01 = -cos b sin c; R00 = cos b cos c.
  const double sb = std::clamp(r(0, 2), -1.0, 1.0);
  const double b = std::asin(sb);
  constexpr double kPitchLimit = 89.0 * M_PI / 180.0;
  if (std::abs(b) > kPitchLimit) {
    throw NumericError("Euler decomposition near gimbal lock (|pitch| > 89 deg)");
  }
  const double a = std::atan2(-r(1, 2), r(2, 2));
  const double c = std::atan2(-r(0, 1), r(0, 0));
  return {a, b, c};
}

Vec3 euler_xyz_saturating(const Mat3& r) {
  const double sb = std::clamp(r(0, 2), -1.0, 1.0);
  const double b = std::asin(sb);
  const double a = std::atan2(-r(1, 2), r(2, 2));
  const double c = std::atan2(-r(0, 1), r(0, 0));
  return {a, b, c};
}

PoseResidual residual(const RigidTransform& gt, const RigidTransform& est) {
  const RigidTransform delta = compose(gt, invert(est));
  PoseResidual out;
  out.rotation_xyz = euler_xyz_from_rotation(delta.rotation.toRotationMatrix());
  out.translation = delta.translation;
  return out;
}

PoseResidual residual_saturating(const RigidTransform& gt, const RigidTransform& est) {
  const RigidTransform delta = compose(gt, invert(est));
  PoseResidual out;
  out.rotation_xyz = euler_xyz_saturating(delta.rotation.toRotationMatrix());
  out.translation = delta.translation;
  return out;
}

double rotation_geodesic(const Quat& a, const Quat& b) {
  const double d = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
  return 2.0 * std::acos(d);
}

}  // namespace trackkit
