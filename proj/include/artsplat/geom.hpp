#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace artsplat::geom {

using Eigen::Matrix3d;
using Eigen::Matrix4d;
using Eigen::Quaterniond;
using Eigen::Vector3d;

using PointSet = std::vector<Vector3d>;

// Rigid SE(3) transform stored as a unit quaternion plus translation.
struct RigidTransform {
  Quaterniond rotation{1.0, 0.0, 0.0, 0.0};
  Vector3d translation{0.0, 0.0, 0.0};

  RigidTransform() = default;
  RigidTransform(const Quaterniond& q, const Vector3d& t)
      : rotation(q.normalized()), translation(t) {}

  static RigidTransform identity() { return RigidTransform{}; }

  Matrix3d rotation_matrix() const { return rotation.toRotationMatrix(); }
  Matrix4d matrix() const;

  Vector3d operator*(const Vector3d& p) const {
    return rotation * p + translation;
  }
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform inverse(const RigidTransform& t);
RigidTransform from_matrix(const Matrix4d& m);

// 6-DOF pose as translation + intrinsic XYZ Euler angles (radians).
// Angles stay unwrapped so optimizer gradients are never aliased by
// modular reduction.
struct EulerPose {
  Vector3d translation{0.0, 0.0, 0.0};
  Vector3d angles{0.0, 0.0, 0.0};
};

// Rotation convention: R = Rz(az) * Ry(ay) * Rx(ax).
Matrix3d euler_rotation(const Vector3d& angles);
// Partial derivatives dR/d(ax), dR/d(ay), dR/d(az) for the convention above.
std::array<Matrix3d, 3> euler_rotation_jacobian(const Vector3d& angles);
RigidTransform euler_to_transform(const EulerPose& p);
// Inverse of euler_rotation (principal branch; gimbal lock resolved
// with az = 0).
Vector3d euler_angles(const Matrix3d& r);

PointSet apply(const RigidTransform& t, const PointSet& pts);

Vector3d centroid(const PointSet& pts);

// Least-squares rigid alignment of index-matched correspondences
// (SVD / Kabsch). Throws std::invalid_argument when the inputs are
// rank-deficient (coincident or collinear point sets).
RigidTransform kabsch_align(const PointSet& src, const PointSet& dst);

// Point-to-point ICP with brute-force nearest neighbours. Returns the
// best transform found (never fails); stops once the mean residual
// change drops below tol.
RigidTransform icp_align(const PointSet& src, const PointSet& dst,
                         int max_iters = 50, double tol = 1e-7);

// Rotation matrix for an angle about an arbitrary (not necessarily unit)
// axis; the axis is normalized internally.
Matrix3d axis_angle_rotation(const Vector3d& axis, double angle);

// Geodesic distance between two rotations, radians.
double rotation_geodesic(const Quaterniond& a, const Quaterniond& b);

}  // namespace artsplat::geom
