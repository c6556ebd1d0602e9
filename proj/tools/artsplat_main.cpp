#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "artsplat/parallel.hpp"
#include "artsplat/pipeline.hpp"
#include "artsplat/png_io.hpp"

using namespace artsplat;
namespace fs = std::filesystem;

namespace {

void add_optim_flags(CLI::App* cmd, fit::OptimConfig& oc) {
  cmd->add_option("--rgb-iters", oc.iterations, "RGB-stage iterations");
  cmd->add_option("--sem-epochs", oc.epochs, "semantic-stage epochs");
  cmd->add_option("--cross-iters", oc.cross_iterations, "cross-scene iterations");
  cmd->add_option("--cross-warmup", oc.cross_warmup,
                  "cross-scene iterations with Gaussians frozen");
  cmd->add_option("--cross-pose-avg", oc.cross_pose_avg,
                  "trailing iterations averaged into the final poses");
  cmd->add_option("--lr-mean", oc.lr_mean, "mean learning rate");
  cmd->add_option("--lr-scale", oc.lr_scale, "log-scale learning rate");
  cmd->add_option("--lr-quat", oc.lr_quat, "quaternion learning rate");
  cmd->add_option("--lr-opacity", oc.lr_opacity, "opacity learning rate");
  cmd->add_option("--lr-color", oc.lr_color, "color learning rate");
  cmd->add_option("--lr-semantic", oc.lr_semantic, "semantic learning rate");
  cmd->add_option("--lr-pose-t", oc.lr_pose_t, "pose translation learning rate");
  cmd->add_option("--lr-pose-r", oc.lr_pose_r, "pose rotation learning rate");
  cmd->add_option("--w-acc", oc.weights.acc, "accumulation loss weight");
  cmd->add_option("--w-l1", oc.weights.l1, "RGB L1 loss weight");
  cmd->add_option("--w-ssim", oc.weights.ssim, "SSIM loss weight");
  cmd->add_option("--w-seg", oc.weights.seg, "segmentation loss weight");
  cmd->add_option("--target-l1", oc.target_l1, "early-exit train-view L1 (0 = off)");
  cmd->add_option("--prune-interval", oc.prune_interval, "pruning interval in iterations");
  cmd->add_option("--prune-alpha", oc.prune_alpha, "opacity pruning threshold");
  cmd->add_flag("--no-icp", [&oc](std::int64_t) { oc.icp_seed = false; },
                "disable ICP rotation seeding");
  cmd->add_flag("--poses-only", [&oc](std::int64_t) { oc.poses_only = true; },
                "freeze Gaussians in the cross-scene stage");
}

void add_joint_flags(CLI::App* cmd, artic::JointFitConfig& jc) {
  cmd->add_option("--joint-iters", jc.iterations, "joint polish iterations");
  cmd->add_option("--joint-lr", jc.lr, "joint polish learning rate");
  cmd->add_option("--joint-points", jc.max_points, "points used in the ADD score");
}

std::vector<double> parse_config_vector(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"articulated-object splat pipeline"};
  app.set_config("--config", "", "read defaults from an INI/TOML file");
  int threads = 0;
  app.add_option("--threads", threads, "fixed worker thread count (determinism)");
  app.require_subcommand(1);

  // synth: generate a planted object and render the two-scene datasets.
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic two-scene dataset");
  struct {
    std::string spec, preset = "revolute", out;
    int chain_parts = 8, views = 50, resolution = 64;
    double label_fraction = 1.0;
    std::uint64_t seed = 7;
  } sy;
  synth_cmd->add_option("--spec", sy.spec, "object spec file to render");
  synth_cmd->add_option("--preset", sy.preset, "revolute | prismatic | chain");
  synth_cmd->add_option("--chain-parts", sy.chain_parts, "parts in the chain preset");
  synth_cmd->add_option("--views", sy.views, "views per time");
  synth_cmd->add_option("--res", sy.resolution, "image resolution");
  synth_cmd->add_option("--label-fraction", sy.label_fraction, "fraction of labeled views");
  synth_cmd->add_option("--seed", sy.seed, "generator seed");
  synth_cmd->add_option("--out", sy.out, "output directory")->required();

  // train: RGB splat fitting for one scene.
  auto* train_cmd = app.add_subcommand("train", "fit an RGB splat to one scene");
  struct {
    std::string data, out;
    int init_count = 600;
    std::uint64_t seed = 7;
  } tr;
  fit::OptimConfig tr_oc;
  train_cmd->add_option("--data", tr.data, "scene manifest")->required();
  train_cmd->add_option("--out", tr.out, "output splat file")->required();
  train_cmd->add_option("--init", tr.init_count, "initial Gaussian count");
  train_cmd->add_option("--seed", tr.seed, "optimizer seed");
  add_optim_flags(train_cmd, tr_oc);

  // segment: semantic head on a trained splat.
  auto* seg_cmd = app.add_subcommand("segment", "fit semantics with frozen geometry");
  struct {
    std::string splat, data, out;
    std::uint64_t seed = 7;
  } sg;
  fit::OptimConfig sg_oc;
  seg_cmd->add_option("--splat", sg.splat, "trained splat")->required();
  seg_cmd->add_option("--data", sg.data, "scene manifest with labels")->required();
  seg_cmd->add_option("--out", sg.out, "output splat file")->required();
  seg_cmd->add_option("--seed", sg.seed, "optimizer seed");
  add_optim_flags(seg_cmd, sg_oc);

  // poses: cross-scene pose estimation.
  auto* poses_cmd = app.add_subcommand("poses", "estimate part poses across the two scenes");
  struct {
    std::string splat0, splat1, data0, data1, out_poses, out_splat0, out_splat1;
    std::uint64_t seed = 7;
  } po;
  fit::OptimConfig po_oc;
  poses_cmd->add_option("--splat0", po.splat0, "segmented splat, t=0")->required();
  poses_cmd->add_option("--splat1", po.splat1, "segmented splat, t=1")->required();
  poses_cmd->add_option("--data0", po.data0, "manifest, t=0")->required();
  poses_cmd->add_option("--data1", po.data1, "manifest, t=1")->required();
  poses_cmd->add_option("--out-poses", po.out_poses, "pose sidecar output")->required();
  poses_cmd->add_option("--out-splat0", po.out_splat0, "refined splat output, t=0");
  poses_cmd->add_option("--out-splat1", po.out_splat1, "refined splat output, t=1");
  poses_cmd->add_option("--seed", po.seed, "optimizer seed");
  add_optim_flags(poses_cmd, po_oc);

  // joints: pairwise joint fitting, graph and tree.
  auto* joints_cmd = app.add_subcommand("joints", "fit joints and build the kinematic tree");
  struct {
    std::string splat0, poses, out_graph, out_tree;
    double eps = 0.005;
    int root = 0;
  } jo;
  artic::JointFitConfig jo_jc;
  joints_cmd->add_option("--splat0", jo.splat0, "refined splat, t=0")->required();
  joints_cmd->add_option("--poses", jo.poses, "pose sidecar")->required();
  joints_cmd->add_option("--eps", jo.eps, "joint acceptance threshold (ADD, m)");
  joints_cmd->add_option("--root", jo.root, "root part id");
  joints_cmd->add_option("--out-graph", jo.out_graph, "joint graph output")->required();
  joints_cmd->add_option("--out-tree", jo.out_tree, "kinematic tree output")->required();
  add_joint_flags(joints_cmd, jo_jc);

  // render: novel configurations from the recovered model.
  auto* render_cmd = app.add_subcommand("render", "render at novel joint configurations");
  struct {
    std::string splat0, poses, tree, data, out, config_vector;
    int interp = 0, view = 0;
  } re;
  render_cmd->add_option("--splat0", re.splat0, "refined splat, t=0")->required();
  render_cmd->add_option("--poses", re.poses, "pose sidecar")->required();
  render_cmd->add_option("--tree", re.tree, "kinematic tree")->required();
  render_cmd->add_option("--data", re.data, "manifest providing the camera")->required();
  render_cmd->add_option("--view", re.view, "camera index within the manifest");
  render_cmd->add_option("--out", re.out, "output directory")->required();
  render_cmd->add_option("--config-vector", re.config_vector,
                         "comma-separated joint configuration");
  render_cmd->add_option("--interp", re.interp,
                         "render N configurations interpolated between v0 and v1");

  // eval: score a recovered tree against the planted ground truth.
  auto* eval_cmd = app.add_subcommand("eval", "evaluate against the planted object");
  struct {
    std::string tree, spec, splat0, out;
    double max_axis_deg = -1.0, max_motion = -1.0, max_cd_mm = -1.0;
  } ev;
  eval_cmd->add_option("--tree", ev.tree, "kinematic tree")->required();
  eval_cmd->add_option("--spec", ev.spec, "planted object spec")->required();
  eval_cmd->add_option("--splat0", ev.splat0, "refined splat, t=0 (chamfer)")->required();
  eval_cmd->add_option("--out", ev.out, "output directory")->required();
  eval_cmd->add_option("--max-axis-deg", ev.max_axis_deg, "fail above this axis error");
  eval_cmd->add_option("--max-motion", ev.max_motion, "fail above this motion error");
  eval_cmd->add_option("--max-cd-mm", ev.max_cd_mm, "fail above this whole-object chamfer");

  // pipeline: everything end to end.
  auto* pipe_cmd = app.add_subcommand("pipeline", "run the full pipeline");
  pipeline::PipelineConfig pc;
  pipe_cmd->add_option("--out", pc.out_dir, "run directory")->required();
  pipe_cmd->add_option("--data0", pc.manifest_t0, "pre-rendered manifest, t=0");
  pipe_cmd->add_option("--data1", pc.manifest_t1, "pre-rendered manifest, t=1");
  pipe_cmd->add_option("--spec", pc.spec_path, "object spec file");
  pipe_cmd->add_option("--preset", pc.preset, "revolute | prismatic | chain");
  pipe_cmd->add_option("--chain-parts", pc.chain_parts, "parts in the chain preset");
  pipe_cmd->add_option("--views", pc.views, "views per time");
  pipe_cmd->add_option("--res", pc.resolution, "image resolution");
  pipe_cmd->add_option("--label-fraction", pc.label_fraction, "fraction of labeled views");
  pipe_cmd->add_option("--init", pc.init_gaussians, "initial Gaussian count");
  pipe_cmd->add_option("--eps", pc.eps, "joint acceptance threshold (ADD, m)");
  pipe_cmd->add_option("--root", pc.root, "root part id");
  pipe_cmd->add_option("--seed", pc.seed, "run seed");
  pipe_cmd->add_option("--interp-steps", pc.interp_steps, "interpolated render count");
  pipe_cmd->add_flag("--fresh", [&pc](std::int64_t) { pc.resume = false; },
                     "ignore existing checkpoints");
  add_optim_flags(pipe_cmd, pc.optim);
  add_joint_flags(pipe_cmd, pc.joint);

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) set_num_threads(threads);

  try {
    if (*synth_cmd) {
      synth::ObjectSpec spec;
      if (!sy.spec.empty()) {
        spec = synth::load_spec(sy.spec);
      } else if (sy.preset == "revolute") {
        spec = synth::make_two_part_revolute(sy.seed);
      } else if (sy.preset == "prismatic") {
        spec = synth::make_two_part_prismatic(sy.seed);
      } else if (sy.preset == "chain") {
        spec = synth::make_serial_chain(sy.chain_parts, sy.seed);
      } else {
        throw std::invalid_argument("unknown preset: " + sy.preset);
      }
      fs::create_directories(sy.out);
      synth::save_spec((fs::path(sy.out) / "object_spec.txt").string(), spec);
      const auto gt = synth::generate_object(spec);
      const auto [a, b] =
          synth::render_dataset(gt, sy.views, sy.resolution, sy.label_fraction);
      save_dataset((fs::path(sy.out) / "data_t0").string(), "manifest.txt", a);
      save_dataset((fs::path(sy.out) / "data_t1").string(), "manifest.txt", b);
      std::cout << "wrote " << sy.out << "\n";
    } else if (*train_cmd) {
      tr_oc.seed = tr.seed;
      const auto ds = load_dataset(tr.data);
      const auto splat = fit::fit_rgb_splat(ds, tr.init_count, tr_oc);
      save_splat(tr.out, splat);
      std::cout << "trained " << splat.gaussians.size() << " gaussians, train L1 "
                << fit::mean_view_l1(splat, ds) << "\n";
    } else if (*seg_cmd) {
      sg_oc.seed = sg.seed;
      const auto ds = load_dataset(sg.data);
      save_splat(sg.out, fit::fit_semantics(load_splat(sg.splat), ds, sg_oc));
      std::cout << "wrote " << sg.out << "\n";
    } else if (*poses_cmd) {
      po_oc.seed = po.seed;
      const auto s0 = load_splat(po.splat0);
      const auto s1 = load_splat(po.splat1);
      const auto d0 = load_dataset(po.data0);
      const auto d1 = load_dataset(po.data1);
      const auto init = fit::init_part_poses(s0, s1, po_oc);
      const auto cross = fit::optimize_cross_scene(s0, s1, d0, d1, init, po_oc);
      fit::save_poses(po.out_poses, cross.poses);
      if (!po.out_splat0.empty()) save_splat(po.out_splat0, cross.splat_t0);
      if (!po.out_splat1.empty()) save_splat(po.out_splat1, cross.splat_t1);
      std::cout << "final cross loss " << cross.final_loss
                << (cross.aborted_nan ? " (restored last-good checkpoint)" : "") << "\n";
    } else if (*joints_cmd) {
      const auto splat = load_splat(jo.splat0);
      const auto poses = fit::load_poses(jo.poses);
      const auto parts = fit::canonical_parts(splat, poses);
      const auto pairs = pipeline::fit_all_pairs(parts, poses, jo_jc);
      const auto graph = artic::build_joint_graph(int(parts.size()), pairs, jo.eps);
      artic::save_graph(jo.out_graph, graph);
      const auto tree = artic::build_tree(graph, jo.root);
      artic::save_tree(jo.out_tree, tree);
      std::cout << graph.edges.size() << " edges, tree depth " << artic::tree_depth(tree)
                << "\n";
    } else if (*render_cmd) {
      const auto splat = load_splat(re.splat0);
      const auto poses = fit::load_poses(re.poses);
      const auto tree = artic::load_tree(re.tree);
      const auto parts = fit::canonical_parts(splat, poses);
      const auto ds = load_dataset(re.data);
      if (re.view < 0 || re.view >= int(ds.observations.size())) {
        throw std::invalid_argument("--view out of range");
      }
      const Camera& cam = ds.observations[re.view].camera;
      const auto base = poses.transform(tree.root, 0);
      fs::create_directories(re.out);
      if (!re.config_vector.empty()) {
        const auto config = parse_config_vector(re.config_vector);
        const auto out = artic::render_configuration(parts, tree, config, base, cam);
        write_png_rgb((fs::path(re.out) / "config.png").string(), out.rgb);
        std::cout << "wrote config.png\n";
      } else if (re.interp > 0) {
        for (int s = 0; s < re.interp; ++s) {
          const double u = re.interp == 1 ? 0.0 : double(s) / double(re.interp - 1);
          std::vector<double> config;
          for (const auto& e : tree.edges) {
            const double v0 = e.joint.configs.empty() ? 0.0 : e.joint.configs[0];
            const double v1 = e.joint.configs.size() > 1 ? e.joint.configs[1] : v0;
            config.push_back((1.0 - u) * v0 + u * v1);
          }
          const auto out = artic::render_configuration(parts, tree, config, base, cam);
          char name[32];
          std::snprintf(name, sizeof name, "step_%02d.png", s);
          write_png_rgb((fs::path(re.out) / name).string(), out.rgb);
        }
        std::cout << "wrote " << re.interp << " interpolated renders\n";
      } else {
        throw std::invalid_argument("render: pass --config-vector or --interp");
      }
    } else if (*eval_cmd) {
      const auto tree = artic::load_tree(ev.tree);
      const auto spec = synth::load_spec(ev.spec);
      const auto gt = synth::generate_object(spec);
      const auto splat = load_splat(ev.splat0);

      eval::MetricReport report;
      report.joints = eval::compare_joints(tree.edges, spec.joints);
      const auto assign = part_assignment(splat);
      geom::PointSet est_whole, gt_whole;
      for (int j = 0; j < gt.num_parts; ++j) {
        for (size_t i = 0; i < assign.size(); ++i) {
          if (assign[i] == j + 1) est_whole.push_back(splat.gaussians[i].mean);
        }
        for (const auto& g : gt.parts[j]) gt_whole.push_back(gt.poses[0][j] * g.mean);
      }
      report.cd_whole_mm = eval::chamfer(est_whole, gt_whole);
      fs::create_directories(ev.out);
      eval::write_metrics((fs::path(ev.out) / "metrics.txt").string(), report);
      eval::write_report((fs::path(ev.out) / "report.txt").string(), report);

      bool ok = true;
      for (const auto& m : report.joints) {
        if (!m.matched) ok = false;
        if (ev.max_axis_deg >= 0.0 && m.axis_angle_deg > ev.max_axis_deg) ok = false;
        if (ev.max_motion >= 0.0 && m.part_motion > ev.max_motion) ok = false;
      }
      if (ev.max_cd_mm >= 0.0 && report.cd_whole_mm > ev.max_cd_mm) ok = false;
      std::cout << (ok ? "PASS" : "FAIL") << " cd_whole " << report.cd_whole_mm << " mm\n";
      return ok ? 0 : 2;
    } else if (*pipe_cmd) {
      const auto result = pipeline::run_pipeline(pc);
      if (result.has_report) {
        std::cout << "metrics: " << result.metrics_path << "\n";
        for (const auto& m : result.report.joints) {
          std::cout << "joint " << m.part_a << "-" << m.part_b << " axis "
                    << m.axis_angle_deg << " deg, motion " << m.part_motion << "\n";
        }
      }
      std::cout << "tree depth " << artic::tree_depth(result.tree) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
