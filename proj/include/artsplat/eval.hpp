#pragma once

#include <string>
#include <vector>

#include "artsplat/artic.hpp"
#include "artsplat/geom.hpp"

namespace artsplat::eval {

using artic::JointEdge;
using geom::PointSet;
using Eigen::Vector3d;

// arccos(|est . gt|) in degrees; invariant to axis sign.
double axis_angle_error(const Vector3d& est, const Vector3d& gt);

// Minimum distance between the infinite lines {c + t a}, in units of
// 0.1 m (the convention the reports use). Revolute joints only.
double axis_pos_error(const Vector3d& est_c, const Vector3d& est_a,
                      const Vector3d& gt_c, const Vector3d& gt_a);
// Convenience overload; throws for prismatic joints, which have no
// axis position.
double axis_pos_error(const artic::JointCandidate& est, const artic::JointCandidate& gt);

// |delta_v_est - delta_v_gt| with delta_v = v1 - v0, sign-aligned via
// the axis direction; degrees for revolute, meters for prismatic.
// Mismatched types report the worst case |delta_est| + |delta_gt|.
double part_motion_error(const artic::JointCandidate& est, const artic::JointCandidate& gt);

// Symmetric mean nearest-neighbor distance, millimeters. Brute force.
double chamfer(const PointSet& a, const PointSet& b);

struct JointMetrics {
  int part_a = 0, part_b = 0;  // unordered pair, a < b
  bool matched = false;        // an estimated edge exists for this pair
  bool type_match = false;
  artic::JointType gt_type = artic::JointType::kRevolute;
  double axis_angle_deg = 0.0;
  double axis_pos = 0.0;       // 0.1 m units; only meaningful for revolute
  bool has_axis_pos = false;
  double part_motion = 0.0;    // degrees or meters by gt type
};

struct MetricReport {
  std::vector<JointMetrics> joints;
  double cd_static_mm = 0.0;
  double cd_moving_mm = 0.0;
  double cd_whole_mm = 0.0;
  double runtime_seconds = 0.0;  // report-only; kept out of the metrics file
};

// Matches estimated tree edges to planted joints by unordered part
// pair, re-orienting estimated edges that run the other way.
std::vector<JointMetrics> compare_joints(const std::vector<JointEdge>& estimated,
                                         const std::vector<JointEdge>& planted);

// Human-readable report (includes runtime).
void write_report(const std::string& path, const MetricReport& report);
// Machine-readable, bit-deterministic for identical metrics.
void write_metrics(const std::string& path, const MetricReport& report);

}  // namespace artsplat::eval
