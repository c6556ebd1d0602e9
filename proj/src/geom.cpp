#include "artsplat/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace artsplat::geom {

Matrix4d RigidTransform::matrix() const {
  Matrix4d m = Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

RigidTransform inverse(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = t.rotation.conjugate();
  out.translation = -(out.rotation * t.translation);
  return out;
}

RigidTransform from_matrix(const Matrix4d& m) {
  RigidTransform out;
  out.rotation = Quaterniond(Matrix3d(m.topLeftCorner<3, 3>())).normalized();
  out.translation = m.topRightCorner<3, 1>();
  return out;
}

Matrix3d euler_rotation(const Vector3d& angles) {
  const double cx = std::cos(angles.x()), sx = std::sin(angles.x());
  const double cy = std::cos(angles.y()), sy = std::sin(angles.y());
  const double cz = std::cos(angles.z()), sz = std::sin(angles.z());
  Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, cx, -sx, 0, sx, cx;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rz << cz, -sz, 0, sz, cz, 0, 0, 0, 1;
  return rz * ry * rx;
}

std::array<Matrix3d, 3> euler_rotation_jacobian(const Vector3d& angles) {
  const double cx = std::cos(angles.x()), sx = std::sin(angles.x());
  const double cy = std::cos(angles.y()), sy = std::sin(angles.y());
  const double cz = std::cos(angles.z()), sz = std::sin(angles.z());
  Matrix3d rx, ry, rz, drx, dry, drz;
  rx << 1, 0, 0, 0, cx, -sx, 0, sx, cx;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rz << cz, -sz, 0, sz, cz, 0, 0, 0, 1;
  drx << 0, 0, 0, 0, -sx, -cx, 0, cx, -sx;
  dry << -sy, 0, cy, 0, 0, 0, -cy, 0, -sy;
  drz << -sz, -cz, 0, cz, -sz, 0, 0, 0, 0;
  return {Matrix3d(rz * ry * drx), Matrix3d(rz * dry * rx),
          Matrix3d(drz * ry * rx)};
}

RigidTransform euler_to_transform(const EulerPose& p) {
  RigidTransform out;
  out.rotation = Quaterniond(euler_rotation(p.angles)).normalized();
  out.translation = p.translation;
  return out;
}

Vector3d euler_angles(const Matrix3d& r) {
  const double sy = std::clamp(-r(2, 0), -1.0, 1.0);
  if (std::abs(sy) > 1.0 - 1e-12) {
    // Gimbal lock: only ax -+ az is observable; pin az = 0.
    if (sy > 0.0) return {std::atan2(r(0, 1), r(1, 1)), M_PI / 2.0, 0.0};
    return {std::atan2(-r(0, 1), r(1, 1)), -M_PI / 2.0, 0.0};
  }
  return {std::atan2(r(2, 1), r(2, 2)), std::asin(sy), std::atan2(r(1, 0), r(0, 0))};
}

PointSet apply(const RigidTransform& t, const PointSet& pts) {
  PointSet out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(t * p);
  return out;
}

Vector3d centroid(const PointSet& pts) {
  Vector3d c = Vector3d::Zero();
  for (const auto& p : pts) c += p;
  return pts.empty() ? c : Vector3d(c / static_cast<double>(pts.size()));
}

RigidTransform kabsch_align(const PointSet& src, const PointSet& dst) {
  if (src.size() != dst.size() || src.size() < 3) {
    throw std::invalid_argument(
        "kabsch_align: needs >= 3 index-matched correspondences");
  }
  const Vector3d cs = centroid(src);
  const Vector3d cd = centroid(dst);
  Matrix3d h = Matrix3d::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    h += (src[i] - cs) * (dst[i] - cd).transpose();
  }
  Eigen::JacobiSVD<Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector3d sv = svd.singularValues();
  // Two near-zero singular values mean the points are collinear or
  // coincident and the rotation is not determined.
  const double scale = std::max(sv(0), 1e-12);
  if (sv(1) / scale < 1e-9) {
    throw std::invalid_argument("kabsch_align: degenerate (rank-deficient) input");
  }
  Matrix3d d = Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  const Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
  RigidTransform out;
  out.rotation = Quaterniond(r).normalized();
  out.translation = cd - r * cs;
  return out;
}

namespace {

double mean_nn_residual(const PointSet& moved, const PointSet& dst,
                        std::vector<int>* nearest) {
  double total = 0.0;
  for (size_t i = 0; i < moved.size(); ++i) {
    double best = std::numeric_limits<double>::max();
    int best_j = 0;
    for (size_t j = 0; j < dst.size(); ++j) {
      const double d2 = (moved[i] - dst[j]).squaredNorm();
      if (d2 < best) {
        best = d2;
        best_j = static_cast<int>(j);
      }
    }
    if (nearest) (*nearest)[i] = best_j;
    total += std::sqrt(best);
  }
  return total / static_cast<double>(moved.size());
}

}  // namespace

RigidTransform icp_align(const PointSet& src, const PointSet& dst,
                         int max_iters, double tol) {
  if (src.empty() || dst.empty()) {
    throw std::invalid_argument("icp_align: empty point set");
  }
  RigidTransform current;
  RigidTransform best;
  std::vector<int> nearest(src.size());
  PointSet moved = src;
  double best_residual = mean_nn_residual(moved, dst, &nearest);
  double prev_residual = best_residual;
  for (int it = 0; it < max_iters; ++it) {
    PointSet corr(src.size());
    for (size_t i = 0; i < src.size(); ++i) corr[i] = dst[nearest[i]];
    RigidTransform step;
    try {
      step = kabsch_align(moved, corr);
    } catch (const std::invalid_argument&) {
      break;  // degenerate correspondences, keep best-so-far
    }
    current = compose(step, current);
    moved = artsplat::geom::apply(current, src);
    const double residual = mean_nn_residual(moved, dst, &nearest);
    if (residual < best_residual) {
      best_residual = residual;
      best = current;
    }
    if (std::abs(prev_residual - residual) < tol) break;
    prev_residual = residual;
  }
  return best;
}

Matrix3d axis_angle_rotation(const Vector3d& axis, double angle) {
  const double n = axis.norm();
  if (n < 1e-12) return Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, axis / n).toRotationMatrix();
}

double rotation_geodesic(const Quaterniond& a, const Quaterniond& b) {
  const double d = std::min(1.0, std::abs(a.normalized().dot(b.normalized())));
  return 2.0 * std::acos(d);
}

}  // namespace artsplat::geom
