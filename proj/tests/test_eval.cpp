#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "artsplat/eval.hpp"
#include "artsplat/synth.hpp"

using namespace artsplat;
using namespace artsplat::eval;
using artic::JointCandidate;
using artic::JointEdge;
using artic::JointType;
using geom::RigidTransform;
using Eigen::Quaterniond;

namespace {

std::mt19937_64 rng(777);

Vector3d random_unit() {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vector3d(n(rng), n(rng), n(rng)).normalized();
}

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "artsplat_test_eval";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("axis angle error oracles") {
  const Vector3d a = random_unit();
  CHECK(axis_angle_error(a, a) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(axis_angle_error(a, -a) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(axis_angle_error(Vector3d(1, 0, 0), Vector3d(1, 1, 0).normalized()) ==
        doctest::Approx(45.0).epsilon(1e-9));
  for (int i = 0; i < 100; ++i) {
    const double e = axis_angle_error(random_unit(), random_unit());
    CHECK(e >= 0.0);
    CHECK(e <= 90.0);
  }
  CHECK_THROWS(axis_angle_error(Vector3d::Zero(), a));
}

TEST_CASE("axis position error oracles") {
  const Vector3d c = random_unit() * 0.3;
  const Vector3d a = random_unit();
  CHECK(axis_pos_error(c, a, c, a) == doctest::Approx(0.0));
  // Same line, different anchor point and flipped direction.
  CHECK(axis_pos_error(c, a, c + 0.7 * a, -a) == doctest::Approx(0.0).epsilon(1e-9));

  // Parallel lines 0.05 m apart -> 0.5 units of 0.1 m.
  Vector3d perp = a.cross(Vector3d::UnitX());
  if (perp.norm() < 1e-3) perp = a.cross(Vector3d::UnitY());
  perp.normalize();
  CHECK(axis_pos_error(c, a, c + 0.05 * perp, a) == doctest::Approx(0.5).epsilon(1e-9));

  // Skew: z axis vs an x-parallel line through (0, 1, 0) -> 1 m -> 10.
  CHECK(axis_pos_error(Vector3d::Zero(), Vector3d::UnitZ(), Vector3d(0, 1, 0),
                       Vector3d::UnitX()) == doctest::Approx(10.0).epsilon(1e-9));

  JointCandidate rev, pri;
  rev.type = JointType::kRevolute;
  pri.type = JointType::kPrismatic;
  CHECK_THROWS(axis_pos_error(pri, rev));
  CHECK_THROWS(axis_pos_error(rev, pri));
  CHECK_NOTHROW(axis_pos_error(rev, rev));
}

TEST_CASE("part motion error oracles") {
  JointCandidate gt;
  gt.type = JointType::kRevolute;
  gt.revolute.axis = Vector3d::UnitZ();
  gt.configs = {0.1, 0.1 + 40.0 * M_PI / 180.0};

  JointCandidate est = gt;
  CHECK(part_motion_error(est, gt) == doctest::Approx(0.0));

  est.configs = {0.1, 0.1 + 39.2 * M_PI / 180.0};
  CHECK(part_motion_error(est, gt) == doctest::Approx(0.8).epsilon(1e-9));

  // Flipped axis with negated configuration delta is the same motion.
  est = gt;
  est.revolute.axis = -gt.revolute.axis;
  est.configs = {-0.1, -0.1 - 40.0 * M_PI / 180.0};
  CHECK(part_motion_error(est, gt) == doctest::Approx(0.0).epsilon(1e-9));

  JointCandidate pri;
  pri.type = JointType::kPrismatic;
  pri.prismatic.axis = Vector3d::UnitX();
  pri.configs = {0.0, 0.02};
  // Type mismatch: worst case in gt units.
  const double worst = part_motion_error(pri, gt);
  CHECK(worst == doctest::Approx((0.02 + 40.0 * M_PI / 180.0) * 180.0 / M_PI).epsilon(1e-9));

  JointCandidate pri_gt = pri;
  pri.configs = {0.0, 0.0215};
  CHECK(part_motion_error(pri, pri_gt) == doctest::Approx(0.0015).epsilon(1e-9));
}

TEST_CASE("chamfer distance matches a brute-force oracle and is symmetric") {
  geom::PointSet a{{0, 0, 0}}, b{{1, 0, 0}};
  CHECK(chamfer(a, a) == doctest::Approx(0.0));
  CHECK(chamfer(a, b) == doctest::Approx(1000.0));

  geom::PointSet ra, rb;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    ra.push_back({u(rng), u(rng), u(rng)});
    rb.push_back({u(rng), u(rng), u(rng)});
  }
  CHECK(chamfer(ra, rb) == chamfer(rb, ra));

  double fwd = 0.0, bwd = 0.0;
  for (const auto& p : ra) {
    double best = 1e18;
    for (const auto& q : rb) best = std::min(best, (p - q).norm());
    fwd += best;
  }
  for (const auto& q : rb) {
    double best = 1e18;
    for (const auto& p : ra) best = std::min(best, (q - p).norm());
    bwd += best;
  }
  const double oracle = 1000.0 * 0.5 * (fwd / ra.size() + bwd / rb.size());
  CHECK(chamfer(ra, rb) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK_THROWS(chamfer(geom::PointSet{}, ra));
}

TEST_CASE("estimate equal to ground truth scores zero everywhere") {
  const auto spec = synth::make_serial_chain(5, 21);
  const auto metrics = compare_joints(spec.joints, spec.joints);
  REQUIRE(metrics.size() == spec.joints.size());
  for (const auto& m : metrics) {
    CHECK(m.matched);
    CHECK(m.type_match);
    CHECK(m.axis_angle_deg == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(m.has_axis_pos);
    CHECK(m.axis_pos == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(m.part_motion == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("compare_joints handles reversed edges and missing pairs") {
  const auto spec = synth::make_two_part_revolute(3);
  // The same joint observed from the child side.
  std::vector<JointEdge> est{artic::reverse_edge(spec.joints[0])};
  auto metrics = compare_joints(est, spec.joints);
  REQUIRE(metrics.size() == 1);
  CHECK(metrics[0].matched);
  CHECK(metrics[0].axis_angle_deg < 1e-6);
  CHECK(metrics[0].axis_pos < 1e-6);
  CHECK(metrics[0].part_motion < 1e-9);

  metrics = compare_joints({}, spec.joints);
  REQUIRE(metrics.size() == 1);
  CHECK(!metrics[0].matched);
  // Unmatched joint scores the full planted swing (70 degrees).
  CHECK(metrics[0].part_motion == doctest::Approx(70.0).epsilon(1e-9));
}

TEST_CASE("metrics file is deterministic and excludes runtime") {
  MetricReport report;
  JointMetrics j;
  j.part_a = 0;
  j.part_b = 1;
  j.matched = true;
  j.type_match = true;
  j.axis_angle_deg = 1.234;
  j.axis_pos = 0.05;
  j.has_axis_pos = true;
  j.part_motion = 0.42;
  report.joints.push_back(j);
  report.cd_static_mm = 1.5;
  report.cd_moving_mm = 2.5;
  report.cd_whole_mm = 2.0;
  report.runtime_seconds = 12.3;

  const auto p1 = temp_path("m1.txt");
  const auto p2 = temp_path("m2.txt");
  write_metrics(p1, report);
  report.runtime_seconds = 99.9;  // must not affect the metrics file
  write_metrics(p2, report);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(!slurp(p1).empty());

  const auto rp = temp_path("report.txt");
  write_report(rp, report);
  CHECK(slurp(rp).find("runtime") != std::string::npos);
  CHECK(slurp(p1).find("runtime") == std::string::npos);
}
