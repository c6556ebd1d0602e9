#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <random>

#include "artsplat/fit.hpp"
#include "artsplat/synth.hpp"

using namespace artsplat;
using namespace artsplat::fit;
using geom::RigidTransform;
using Eigen::Vector3d;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "artsplat_test_fit";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

// World-frame splat assembled from the planted parts at one time; the
// planted one-hot semantics come along.
SemanticSplat splat_from_gt(const synth::GroundTruth& gt, int time) {
  SemanticSplat s;
  s.num_parts = gt.num_parts;
  for (int j = 0; j < gt.num_parts; ++j) {
    const auto& t = gt.poses[time][j];
    for (Gaussian g : gt.parts[j]) {
      g.mean = t * g.mean;
      g.orientation = (t.rotation * g.orientation).normalized();
      s.gaussians.push_back(g);
    }
  }
  return s;
}

std::vector<int> gt_assignment(const synth::GroundTruth& gt) {
  std::vector<int> a;
  for (int j = 0; j < gt.num_parts; ++j) {
    a.insert(a.end(), gt.parts[j].size(), j + 1);
  }
  return a;
}

bool same_gaussian_geometry(const Gaussian& a, const Gaussian& b) {
  return a.mean == b.mean && a.log_scale == b.log_scale &&
         a.orientation.coeffs() == b.orientation.coeffs() &&
         a.opacity_logit == b.opacity_logit && a.color == b.color;
}

// Relative motion of part j between the two estimated pose sets.
RigidTransform relative_motion(const PartPoseSet& poses, int part) {
  return geom::compose(poses.transform(part, 1), geom::inverse(poses.transform(part, 0)));
}

}  // namespace

TEST_CASE("pose sidecar round trips exactly") {
  PartPoseSet set;
  set.poses = {{geom::EulerPose{{0.1, -0.2, 0.3}, {0.01, 0.5, -1.3}},
                geom::EulerPose{{1e-17, 2.0, -3.0}, {0.0, M_PI, 0.123456789012345}}},
               {geom::EulerPose{}, geom::EulerPose{{7, 8, 9}, {0.1, 0.2, 0.3}}}};
  const auto path = temp_path("poses.txt");
  save_poses(path, set);
  const auto back = load_poses(path);
  REQUIRE(back.poses.size() == 2);
  for (size_t j = 0; j < 2; ++j) {
    for (size_t t = 0; t < 2; ++t) {
      CHECK(back.poses[j][t].translation == set.poses[j][t].translation);
      CHECK(back.poses[j][t].angles == set.poses[j][t].angles);
    }
  }
  CHECK_THROWS(load_poses(temp_path("missing.txt")));
}

TEST_CASE("fit_rgb_splat reconstructs a one-part object") {
  synth::ObjectSpec spec;
  spec.parts.push_back({1, Vector3d(0.08, 0.05, 0.05), Vector3d(0.8, 0.3, 0.2)});
  spec.seed = 5;
  const auto gt = synth::generate_object(spec);
  const auto [ds0, ds1] = synth::render_dataset(gt, 12, 32, 1.0);

  OptimConfig cfg;
  cfg.iterations = 1500;
  cfg.seed = 7;
  cfg.target_l1 = 0.015;
  const auto splat = fit_rgb_splat(ds0, 20, cfg);
  CHECK(!splat.gaussians.empty());
  CHECK(mean_view_l1(splat, ds0) < 0.02);

  CHECK_THROWS(fit_rgb_splat(SceneDataset{}, 10, cfg));
}

TEST_CASE("fit_rgb_splat is deterministic for a fixed seed") {
  const auto gt = synth::generate_object(
      {{{60, Vector3d(0.08, 0.05, 0.05), Vector3d(0.3, 0.6, 0.4)}}, {}, 11});
  const auto [ds0, ds1] = synth::render_dataset(gt, 6, 24, 1.0);

  OptimConfig cfg;
  cfg.iterations = 150;
  cfg.seed = 42;
  const auto a = fit_rgb_splat(ds0, 40, cfg);
  const auto b = fit_rgb_splat(ds0, 40, cfg);
  REQUIRE(a.gaussians.size() == b.gaussians.size());
  for (size_t i = 0; i < a.gaussians.size(); ++i) {
    CHECK(same_gaussian_geometry(a.gaussians[i], b.gaussians[i]));
  }
  CHECK(mean_view_l1(a, ds0) == mean_view_l1(b, ds0));
}

TEST_CASE("fit_semantics labels a planted two-part object without touching geometry") {
  // Parts kept spatially separated: Gaussians inside an overlap region
  // have genuinely ambiguous pixel evidence and would cap the accuracy.
  synth::ObjectSpec two;
  two.seed = 9;
  two.parts.push_back({220, Vector3d(0.12, 0.1, 0.05), Vector3d(0.75, 0.35, 0.25)});
  two.parts.push_back({220, Vector3d(0.08, 0.04, 0.1), Vector3d(0.25, 0.45, 0.8)});
  artic::JointEdge j;
  j.parent = 0;
  j.child = 1;
  j.joint.type = artic::JointType::kRevolute;
  j.joint.revolute.center = Vector3d(0.32, 0.0, 0.0);
  j.joint.revolute.axis = Vector3d(0.0, 0.0, 1.0);
  j.joint.revolute.fixed_offset =
      RigidTransform(Eigen::Quaterniond::Identity(), Vector3d(0.38, 0.0, 0.0));
  j.joint.configs = {0.05, 0.65};
  two.joints = {j};
  const auto gt = synth::generate_object(two);
  auto splat = splat_from_gt(gt, 0);
  for (auto& g : splat.gaussians) g.semantic_logits.setZero();
  const auto truth = gt_assignment(gt);

  OptimConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 3;

  SUBCASE("full labels reach 99 percent accuracy, CE decreases") {
    const auto [ds0, ds1] = synth::render_dataset(gt, 16, 48, 1.0);
    std::vector<double> ce;
    const auto out = fit_semantics(splat, ds0, cfg, &ce);
    REQUIRE(out.gaussians.size() == splat.gaussians.size());
    for (size_t i = 0; i < out.gaussians.size(); ++i) {
      CHECK(same_gaussian_geometry(out.gaussians[i], splat.gaussians[i]));
    }
    REQUIRE(ce.size() == size_t(cfg.epochs));
    CHECK(ce.back() < ce.front());

    // Gaussians buried inside the object never appear in any view and
    // keep zero logits (assigned background); they are excluded from
    // the accuracy figure but bounded by the coverage check.
    const auto assign = part_assignment(out);
    int hits = 0, covered = 0;
    for (size_t i = 0; i < assign.size(); ++i) {
      if (assign[i] == 0) continue;
      ++covered;
      hits += assign[i] == truth[i];
    }
    CHECK(double(covered) / double(assign.size()) >= 0.9);
    CHECK(double(hits) / double(covered) >= 0.99);
  }

  SUBCASE("30 percent labels reach 95 percent accuracy") {
    const auto [ds0, ds1] = synth::render_dataset(gt, 16, 48, 0.3);
    const auto out = fit_semantics(splat, ds0, cfg);
    const auto assign = part_assignment(out);
    int hits = 0;
    for (size_t i = 0; i < assign.size(); ++i) hits += assign[i] == truth[i];
    CHECK(double(hits) / double(assign.size()) >= 0.95);
  }

  SUBCASE("no labeled views throws") {
    const auto [ds0, ds1] = synth::render_dataset(gt, 4, 24, 0.0);
    CHECK_THROWS(fit_semantics(splat, ds0, cfg));
  }
}

TEST_CASE("init_part_poses recovers planted translations") {
  // Two synthetic clusters; part 2 translated between the times.
  const Vector3d delta(0.05, -0.02, 0.03);
  SemanticSplat s0;
  s0.num_parts = 2;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 0.03);
  auto add = [&](SemanticSplat& s, const Vector3d& center, int part) {
    Gaussian g;
    g.mean = center + Vector3d(n(rng), n(rng), n(rng));
    g.semantic_logits = Eigen::VectorXd::Constant(3, -20.0);
    g.semantic_logits(part) = 20.0;
    s.gaussians.push_back(g);
  };
  for (int i = 0; i < 40; ++i) add(s0, Vector3d(0, 0, 0), 1);
  for (int i = 0; i < 40; ++i) add(s0, Vector3d(0.3, 0, 0), 2);
  SemanticSplat s1 = s0;
  for (auto& g : s1.gaussians) {
    if (g.semantic_logits(2) > 0) g.mean += delta;
  }

  OptimConfig cfg;
  SUBCASE("centroid mode") {
    cfg.icp_seed = false;
    const auto poses = init_part_poses(s0, s1, cfg);
    REQUIRE(poses.poses.size() == 2);
    CHECK((poses.poses[0][1].translation - poses.poses[0][0].translation).norm() < 1e-12);
    CHECK((poses.poses[1][1].translation - poses.poses[1][0].translation - delta).norm() <
          1e-12);
    for (int j = 0; j < 2; ++j) {
      for (int t = 0; t < 2; ++t) CHECK(poses.poses[j][t].angles.norm() == 0.0);
    }
  }
  SUBCASE("icp mode matches on pure translation") {
    cfg.icp_seed = true;
    const auto poses = init_part_poses(s0, s1, cfg);
    CHECK((poses.poses[1][1].translation - poses.poses[1][0].translation - delta).norm() <
          1e-6);
    CHECK(poses.poses[1][1].angles.norm() < 1e-6);
  }
  SUBCASE("icp mode recovers a planted rotation") {
    const Eigen::Matrix3d r = geom::axis_angle_rotation(Vector3d(0.2, 1.0, 0.1), 0.4);
    SemanticSplat s1r = s0;
    const Vector3d c(0.3, 0, 0);
    for (auto& g : s1r.gaussians) {
      if (g.semantic_logits(2) > 0) g.mean = c + r * (g.mean - c);
    }
    cfg.icp_seed = true;
    const auto poses = init_part_poses(s0, s1r, cfg);
    const auto rel = relative_motion(poses, 1);
    CHECK(geom::rotation_geodesic(rel.rotation, Eigen::Quaterniond(r)) < 1e-3);
  }
  SUBCASE("empty part throws") {
    SemanticSplat bad = s0;
    for (auto& g : bad.gaussians) {
      g.semantic_logits(2) = -20.0;
      g.semantic_logits(1) = 20.0;
    }
    CHECK_THROWS(init_part_poses(bad, s1, cfg));
  }
}

TEST_CASE("cross-scene optimization holds a null motion at identity") {
  const auto gt = synth::generate_object(synth::make_two_part_revolute(13));
  const auto [ds0, ds1] = synth::render_dataset(gt, 10, 32, 1.0);
  const auto splat = splat_from_gt(gt, 0);

  OptimConfig cfg;
  cfg.cross_iterations = 200;
  cfg.seed = 1;
  // Both "times" see the same scene: the recovered motion must vanish.
  const auto init = init_part_poses(splat, splat, cfg);
  const auto result = optimize_cross_scene(splat, splat, ds0, ds0, init, cfg);
  CHECK(!result.aborted_nan);
  for (int j = 0; j < 2; ++j) {
    const auto rel = relative_motion(result.poses, j);
    CHECK(geom::rotation_geodesic(rel.rotation, Eigen::Quaterniond::Identity()) <
          0.5 * M_PI / 180.0);
    // Residual translation measured at the part centroid.
    const Vector3d c = result.poses.poses[j][0].translation;
    CHECK((rel * c - c).norm() < 2e-3);
  }
}

TEST_CASE("cross-scene optimization recovers a 40 degree door swing") {
  auto spec = synth::make_two_part_revolute(23);
  spec.joints[0].joint.configs = {0.1, 0.1 + 40.0 * M_PI / 180.0};
  const auto gt = synth::generate_object(spec);
  const auto [ds0, ds1] = synth::render_dataset(gt, 12, 32, 1.0);
  const auto splat0 = splat_from_gt(gt, 0);
  const auto splat1 = splat_from_gt(gt, 1);

  OptimConfig cfg;
  cfg.cross_iterations = 250;
  cfg.cross_pose_avg = 100;
  cfg.seed = 2;
  const auto init = init_part_poses(splat0, splat1, cfg);
  const auto result = optimize_cross_scene(splat0, splat1, ds0, ds1, init, cfg);
  CHECK(!result.aborted_nan);
  REQUIRE(result.canonical_parts.size() == 2);

  for (int j = 0; j < 2; ++j) {
    const RigidTransform gt_rel =
        geom::compose(gt.poses[1][j], geom::inverse(gt.poses[0][j]));
    const auto est_rel = relative_motion(result.poses, j);
    CHECK(geom::rotation_geodesic(est_rel.rotation, gt_rel.rotation) < 1.0 * M_PI / 180.0);
    const Vector3d c = result.poses.poses[j][0].translation;
    CHECK((est_rel * c - gt_rel * c).norm() < 2e-3);
  }

  // Canonical parts must reproduce scene-0 when pushed through P^0.
  const auto idx_check = result.canonical_parts[1];
  CHECK(!idx_check.empty());

  // Cross-rendering loss must come down to the same-scene ballpark.
  double same_scene = 0.0;
  int count = 0;
  for (const auto* p : {&result.splat_t0, &result.splat_t1}) {
    const auto* ds = (p == &result.splat_t0) ? &ds0 : &ds1;
    std::vector<PartInput> inputs{{&p->gaussians, RigidTransform::identity()}};
    for (const auto& obs : ds->observations) {
      RenderContext ctx;
      const auto render = rasterize(inputs, obs.camera, p->num_parts, &ctx);
      Image1 acc(obs.labels.height, obs.labels.width);
      for (int r = 0; r < acc.height; ++r) {
        for (int c2 = 0; c2 < acc.width; ++c2) {
          acc.at(r, c2) = obs.labels.at(r, c2) != kUnlabeled && obs.labels.at(r, c2) != 0;
        }
      }
      same_scene += total_loss(render, ctx, obs.rgb, acc, obs.labels, cfg.weights);
      ++count;
    }
  }
  same_scene /= double(count);
  CHECK(result.final_loss < 2.0 * same_scene);
}

TEST_CASE("joint optimization beats pose-only on most seeds") {
  // Perturbed geometry: only the joint mode can repair it, so it should
  // reach a lower final loss on a clear majority of seeds.
  int wins = 0;
  for (int seed = 0; seed < 10; ++seed) {
    const auto gt = synth::generate_object(synth::make_two_part_revolute(100 + seed));
    const auto [ds0, ds1] = synth::render_dataset(gt, 6, 24, 1.0);
    auto splat0 = splat_from_gt(gt, 0);
    auto splat1 = splat_from_gt(gt, 1);
    std::mt19937_64 prng(seed);
    std::normal_distribution<double> n(0.0, 0.01);
    for (auto* s : {&splat0, &splat1}) {
      for (auto& g : s->gaussians) g.mean += Vector3d(n(prng), n(prng), n(prng));
    }

    OptimConfig cfg;
    cfg.cross_iterations = 120;
    cfg.cross_warmup = 0;  // unfreeze immediately: the contrast under test
    cfg.seed = seed;
    const auto init = init_part_poses(splat0, splat1, cfg);
    const auto joint = optimize_cross_scene(splat0, splat1, ds0, ds1, init, cfg);
    cfg.poses_only = true;
    const auto frozen = optimize_cross_scene(splat0, splat1, ds0, ds1, init, cfg);
    wins += joint.final_loss < frozen.final_loss;
  }
  CHECK(wins >= 8);
}
