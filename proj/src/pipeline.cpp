#include "artsplat/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "artsplat/png_io.hpp"

namespace artsplat::pipeline {

namespace fs = std::filesystem;

namespace {

bool exists(const std::string& p) { return fs::exists(p); }

template <typename Fn>
void stage(const char* name, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage ") + name + ": " + e.what());
  }
}

synth::ObjectSpec resolve_spec(const PipelineConfig& cfg) {
  if (!cfg.spec_path.empty()) return synth::load_spec(cfg.spec_path);
  if (cfg.preset == "revolute") return synth::make_two_part_revolute(cfg.seed);
  if (cfg.preset == "prismatic") return synth::make_two_part_prismatic(cfg.seed);
  if (cfg.preset == "chain") return synth::make_serial_chain(cfg.chain_parts, cfg.seed);
  throw std::invalid_argument("unknown preset: " + cfg.preset);
}

int generator_root(const synth::ObjectSpec& spec) {
  std::vector<char> is_child(spec.parts.size(), 0);
  for (const auto& j : spec.joints) is_child[j.child] = 1;
  for (size_t i = 0; i < is_child.size(); ++i) {
    if (!is_child[i]) return int(i);
  }
  return 0;
}

geom::PointSet part_points_est(const SemanticSplat& splat, int part) {
  const auto assign = part_assignment(splat);
  geom::PointSet pts;
  for (size_t i = 0; i < assign.size(); ++i) {
    if (assign[i] == part + 1) pts.push_back(splat.gaussians[i].mean);
  }
  return pts;
}

geom::PointSet part_points_gt(const synth::GroundTruth& gt, int part) {
  geom::PointSet pts;
  for (const auto& g : gt.parts[part]) pts.push_back(gt.poses[0][part] * g.mean);
  return pts;
}

void append(geom::PointSet& dst, const geom::PointSet& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

std::vector<artic::PairResult> fit_all_pairs(
    const std::vector<std::vector<Gaussian>>& canonical_parts,
    const fit::PartPoseSet& poses, const artic::JointFitConfig& cfg) {
  const int np = int(canonical_parts.size());
  std::vector<artic::PairResult> pairs;
  for (int parent = 0; parent < np; ++parent) {
    for (int child = 0; child < np; ++child) {
      if (parent == child) continue;
      std::vector<Vector3d> means;
      for (const auto& g : canonical_parts[child]) means.push_back(g.mean);
      const std::vector<geom::RigidTransform> child_poses{poses.transform(child, 0),
                                                          poses.transform(child, 1)};
      const std::vector<geom::RigidTransform> parent_poses{poses.transform(parent, 0),
                                                           poses.transform(parent, 1)};
      artic::PairResult r;
      r.child = child;
      r.parent = parent;
      r.fit = artic::fit_joint_pair(means, child_poses, parent_poses, cfg);
      pairs.push_back(std::move(r));
    }
  }
  return pairs;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot hash missing file: " + path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[65536];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= std::uint64_t(std::uint8_t(buf[i]));
      h *= 1099511628211ull;
    }
  }
  return h;
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  if (cfg.out_dir.empty()) throw std::invalid_argument("pipeline: out_dir required");
  const bool external_data = !cfg.manifest_t0.empty() || !cfg.manifest_t1.empty();
  if (external_data) {
    if (cfg.manifest_t0.empty() || cfg.manifest_t1.empty() || !exists(cfg.manifest_t0) ||
        !exists(cfg.manifest_t1)) {
      throw std::invalid_argument("pipeline: both scene manifests must exist");
    }
  }
  if (!cfg.spec_path.empty() && !exists(cfg.spec_path)) {
    throw std::invalid_argument("pipeline: spec file missing: " + cfg.spec_path);
  }
  const bool have_gt = !external_data || !cfg.spec_path.empty();
  if (external_data && !have_gt) {
    std::cerr << "note: external data without an object spec; evaluation is skipped\n";
  }

  fs::create_directories(cfg.out_dir);
  const auto path = [&](const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
  };
  std::vector<std::string> artifacts;

  // Stage 1: synthesize or load the two-scene datasets. Synthetic data
  // is written out and read back so every later stage consumes the
  // serialized form (resume-identical by construction).
  SceneDataset ds0, ds1;
  synth::ObjectSpec spec;
  stage("data", [&] {
    if (external_data) {
      ds0 = load_dataset(cfg.manifest_t0);
      ds1 = load_dataset(cfg.manifest_t1);
      if (have_gt) spec = synth::load_spec(cfg.spec_path);
      return;
    }
    const auto spec_file = path("object_spec.txt");
    const auto m0 = path("data_t0/manifest.txt");
    const auto m1 = path("data_t1/manifest.txt");
    if (!(cfg.resume && exists(spec_file) && exists(m0) && exists(m1))) {
      const auto fresh = resolve_spec(cfg);
      synth::save_spec(spec_file, fresh);
      const auto gt = synth::generate_object(fresh);
      const auto [a, b] =
          synth::render_dataset(gt, cfg.views, cfg.resolution, cfg.label_fraction);
      save_dataset(path("data_t0"), "manifest.txt", a);
      save_dataset(path("data_t1"), "manifest.txt", b);
    }
    spec = synth::load_spec(spec_file);
    ds0 = load_dataset(m0);
    ds1 = load_dataset(m1);
    artifacts.insert(artifacts.end(), {spec_file, m0, m1});
  });

  // Stage 2: per-scene RGB splats.
  SemanticSplat rgb0, rgb1;
  stage("rgb", [&] {
    const auto p0 = path("splat_t0_rgb.splat");
    const auto p1 = path("splat_t1_rgb.splat");
    fit::OptimConfig oc = cfg.optim;
    oc.seed = cfg.seed;
    if (!(cfg.resume && exists(p0))) save_splat(p0, fit::fit_rgb_splat(ds0, cfg.init_gaussians, oc));
    oc.seed = cfg.seed + 1;
    if (!(cfg.resume && exists(p1))) save_splat(p1, fit::fit_rgb_splat(ds1, cfg.init_gaussians, oc));
    rgb0 = load_splat(p0);
    rgb1 = load_splat(p1);
    artifacts.insert(artifacts.end(), {p0, p1});
  });

  // Stage 3: semantic heads, geometry frozen.
  SemanticSplat sem0, sem1;
  stage("semantics", [&] {
    const auto p0 = path("splat_t0_sem.splat");
    const auto p1 = path("splat_t1_sem.splat");
    fit::OptimConfig oc = cfg.optim;
    oc.seed = cfg.seed;
    if (!(cfg.resume && exists(p0))) save_splat(p0, fit::fit_semantics(rgb0, ds0, oc));
    oc.seed = cfg.seed + 1;
    if (!(cfg.resume && exists(p1))) save_splat(p1, fit::fit_semantics(rgb1, ds1, oc));
    sem0 = load_splat(p0);
    sem1 = load_splat(p1);
    artifacts.insert(artifacts.end(), {p0, p1});
  });

  // Stage 4: part poses via cross-scene optimization.
  PipelineResult result;
  SemanticSplat refined0;
  stage("poses", [&] {
    const auto pp = path("poses.txt");
    const auto r0 = path("splat_t0_refined.splat");
    const auto r1 = path("splat_t1_refined.splat");
    if (!(cfg.resume && exists(pp) && exists(r0) && exists(r1))) {
      fit::OptimConfig oc = cfg.optim;
      oc.seed = cfg.seed;
      const auto init = fit::init_part_poses(sem0, sem1, oc);
      const auto cross = fit::optimize_cross_scene(sem0, sem1, ds0, ds1, init, oc);
      if (cross.aborted_nan) {
        std::cerr << "warning: cross-scene stage restored its last-good checkpoint\n";
      }
      fit::save_poses(pp, cross.poses);
      save_splat(r0, cross.splat_t0);
      save_splat(r1, cross.splat_t1);
    }
    result.poses = fit::load_poses(pp);
    refined0 = load_splat(r0);
    result.canonical_parts = fit::canonical_parts(refined0, result.poses);
    artifacts.insert(artifacts.end(), {pp, r0, r1});
  });

  // Stage 5: joint fitting over all ordered pairs, graph, tree.
  stage("joints", [&] {
    const auto gp = path("graph.txt");
    const auto tp = path("tree.txt");
    if (!(cfg.resume && exists(gp) && exists(tp))) {
      const auto pairs = fit_all_pairs(result.canonical_parts, result.poses, cfg.joint);
      const auto graph =
          artic::build_joint_graph(int(result.canonical_parts.size()), pairs, cfg.eps);
      artic::save_graph(gp, graph);
      artic::save_tree(tp, artic::build_tree(graph, cfg.root));
    }
    result.tree = artic::load_tree(tp);
    artifacts.insert(artifacts.end(), {gp, tp});
  });

  // Stage 6: renders at linearly interpolated configurations.
  stage("renders", [&] {
    if (ds0.observations.empty() || cfg.interp_steps <= 0) return;
    fs::create_directories(path("renders"));
    const Camera& cam = ds0.observations[0].camera;
    const RigidTransform base = result.poses.transform(result.tree.root, 0);
    std::ofstream cfgs(path("renders/configs.txt"));
    cfgs << "interp_configs v1\n";
    for (int s = 0; s < cfg.interp_steps; ++s) {
      const double u = cfg.interp_steps == 1
                           ? 0.0
                           : double(s) / double(cfg.interp_steps - 1);
      std::vector<double> config;
      cfgs << "step " << s;
      for (const auto& e : result.tree.edges) {
        const double v0 = e.joint.configs.size() > 0 ? e.joint.configs[0] : 0.0;
        const double v1 = e.joint.configs.size() > 1 ? e.joint.configs[1] : v0;
        config.push_back((1.0 - u) * v0 + u * v1);
        cfgs << ' ' << config.back();
      }
      cfgs << '\n';
      const auto out = artic::render_configuration(result.canonical_parts, result.tree,
                                                   config, base, cam);
      char name[64];
      std::snprintf(name, sizeof name, "renders/step_%02d.png", s);
      write_png_rgb(path(name), out.rgb);
      artifacts.push_back(path(name));
    }
    artifacts.push_back(path("renders/configs.txt"));
  });

  // Stage 7: evaluation against the planted ground truth.
  if (have_gt) {
    stage("eval", [&] {
      const auto gt = synth::generate_object(spec);
      eval::MetricReport report;
      report.joints = eval::compare_joints(result.tree.edges, spec.joints);

      const int root = generator_root(spec);
      geom::PointSet est_static = part_points_est(refined0, root);
      geom::PointSet gt_static = part_points_gt(gt, root);
      geom::PointSet est_moving, gt_moving;
      for (int j = 0; j < gt.num_parts; ++j) {
        if (j == root) continue;
        append(est_moving, part_points_est(refined0, j));
        append(gt_moving, part_points_gt(gt, j));
      }
      geom::PointSet est_whole = est_static, gt_whole = gt_static;
      append(est_whole, est_moving);
      append(gt_whole, gt_moving);
      report.cd_static_mm = eval::chamfer(est_static, gt_static);
      if (!est_moving.empty() && !gt_moving.empty()) {
        report.cd_moving_mm = eval::chamfer(est_moving, gt_moving);
      }
      report.cd_whole_mm = eval::chamfer(est_whole, gt_whole);

      eval::write_metrics(path("metrics.txt"), report);
      eval::write_report(path("report.txt"), report);
      result.report = report;
      result.has_report = true;
      result.metrics_path = path("metrics.txt");
      artifacts.push_back(path("metrics.txt"));
    });
  }

  // Artifact manifest with content hashes.
  {
    std::ofstream os(path("artifacts.txt"));
    os << "artifacts v1\n";
    char buf[32];
    for (const auto& a : artifacts) {
      std::snprintf(buf, sizeof buf, "%016llx",
                    static_cast<unsigned long long>(file_hash(a)));
      os << buf << "  " << fs::relative(a, cfg.out_dir).generic_string() << '\n';
    }
  }
  return result;
}

}  // namespace artsplat::pipeline
