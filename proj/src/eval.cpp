#include "artsplat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace artsplat::eval {

using artic::JointCandidate;
using artic::JointType;

double axis_angle_error(const Vector3d& est, const Vector3d& gt) {
  if (est.norm() < 1e-12 || gt.norm() < 1e-12) {
    throw std::invalid_argument("axis_angle_error: zero axis");
  }
  const double d = std::clamp(std::abs(est.normalized().dot(gt.normalized())), 0.0, 1.0);
  return std::acos(d) * 180.0 / M_PI;
}

double axis_pos_error(const Vector3d& est_c, const Vector3d& est_a,
                      const Vector3d& gt_c, const Vector3d& gt_a) {
  if (est_a.norm() < 1e-12 || gt_a.norm() < 1e-12) {
    throw std::invalid_argument("axis_pos_error: zero axis");
  }
  const Vector3d a1 = est_a.normalized(), a2 = gt_a.normalized();
  const Vector3d d = gt_c - est_c;
  const Vector3d n = a1.cross(a2);
  double dist;
  if (n.norm() < 1e-9) {
    dist = (d - d.dot(a1) * a1).norm();  // parallel lines
  } else {
    dist = std::abs(d.dot(n.normalized()));
  }
  return dist / 0.1;
}

double axis_pos_error(const JointCandidate& est, const JointCandidate& gt) {
  if (est.type != JointType::kRevolute || gt.type != JointType::kRevolute) {
    throw std::invalid_argument("axis_pos_error: unsupported for prismatic joints");
  }
  return axis_pos_error(est.revolute.center, est.revolute.axis, gt.revolute.center,
                        gt.revolute.axis);
}

namespace {

double config_delta(const JointCandidate& c) {
  return c.configs.size() >= 2 ? c.configs[1] - c.configs[0] : 0.0;
}

const Vector3d& joint_axis(const JointCandidate& c) {
  return c.type == JointType::kRevolute ? c.revolute.axis : c.prismatic.axis;
}

}  // namespace

double part_motion_error(const JointCandidate& est, const JointCandidate& gt) {
  const double dv_gt = config_delta(gt);
  double dv_est = config_delta(est);
  if (est.type != gt.type) {
    // Classification failure: report the worst case in gt units.
    const double worst = std::abs(dv_est) + std::abs(dv_gt);
    return gt.type == JointType::kRevolute ? worst * 180.0 / M_PI : worst;
  }
  if (joint_axis(est).dot(joint_axis(gt)) < 0.0) dv_est = -dv_est;
  const double err = std::abs(dv_est - dv_gt);
  return gt.type == JointType::kRevolute ? err * 180.0 / M_PI : err;
}

double chamfer(const PointSet& a, const PointSet& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty point set");
  auto one_way = [](const PointSet& from, const PointSet& to) {
    double total = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      total += std::sqrt(best);
    }
    return total / double(from.size());
  };
  return 1000.0 * 0.5 * (one_way(a, b) + one_way(b, a));
}

std::vector<JointMetrics> compare_joints(const std::vector<JointEdge>& estimated,
                                         const std::vector<JointEdge>& planted) {
  std::vector<JointMetrics> out;
  for (const auto& gt : planted) {
    JointMetrics m;
    m.part_a = std::min(gt.parent, gt.child);
    m.part_b = std::max(gt.parent, gt.child);
    m.gt_type = gt.joint.type;

    const JointEdge* match = nullptr;
    JointEdge reversed;
    for (const auto& e : estimated) {
      if (std::min(e.parent, e.child) != m.part_a || std::max(e.parent, e.child) != m.part_b)
        continue;
      if (e.parent == gt.parent) {
        match = &e;
      } else {
        reversed = artic::reverse_edge(e);
        match = &reversed;
      }
      break;
    }

    if (!match) {
      m.matched = false;
      m.axis_angle_deg = 90.0;
      const double dv = std::abs(config_delta(gt.joint));
      m.part_motion = gt.joint.type == JointType::kRevolute ? dv * 180.0 / M_PI : dv;
      out.push_back(m);
      continue;
    }

    m.matched = true;
    m.type_match = match->joint.type == gt.joint.type;
    m.axis_angle_deg = axis_angle_error(joint_axis(match->joint), joint_axis(gt.joint));
    if (m.type_match && gt.joint.type == JointType::kRevolute) {
      m.axis_pos = axis_pos_error(match->joint.revolute.center, match->joint.revolute.axis,
                                  gt.joint.revolute.center, gt.joint.revolute.axis);
      m.has_axis_pos = true;
    }
    m.part_motion = part_motion_error(match->joint, gt.joint);
    out.push_back(m);
  }
  return out;
}

namespace {

void write_joint_lines(std::ostream& os, const MetricReport& report, bool machine) {
  char buf[256];
  for (const auto& j : report.joints) {
    std::snprintf(buf, sizeof buf,
                  "joint %d %d matched %d type_match %d gt_type %s axis_angle_deg %.17g "
                  "axis_pos ",
                  j.part_a, j.part_b, j.matched ? 1 : 0, j.type_match ? 1 : 0,
                  j.gt_type == JointType::kRevolute ? "revolute" : "prismatic",
                  j.axis_angle_deg);
    os << buf;
    if (j.has_axis_pos) {
      std::snprintf(buf, sizeof buf, "%.17g", j.axis_pos);
      os << buf;
    } else {
      os << '-';
    }
    std::snprintf(buf, sizeof buf, " part_motion %.17g\n", j.part_motion);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "cd_static_mm %.17g\ncd_moving_mm %.17g\ncd_whole_mm %.17g\n",
                report.cd_static_mm, report.cd_moving_mm, report.cd_whole_mm);
  os << buf;
  if (!machine) os << "runtime_seconds " << report.runtime_seconds << '\n';
}

}  // namespace

void write_report(const std::string& path, const MetricReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "evaluation report\n=================\n";
  write_joint_lines(os, report, false);
}

void write_metrics(const std::string& path, const MetricReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "metrics v1\n";
  write_joint_lines(os, report, true);
}

}  // namespace artsplat::eval
