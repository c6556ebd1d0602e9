#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "artsplat/geom.hpp"
#include "artsplat/render.hpp"
#include "artsplat/splat.hpp"

namespace artsplat::fit {

using geom::EulerPose;
using geom::RigidTransform;

struct OptimConfig {
  int iterations = 3500;        // rgb stage
  int epochs = 20;              // semantic stage
  int cross_iterations = 3000;  // cross-scene stage

  // Per-group Adam learning rates.
  double lr_mean = 2e-3;
  double lr_scale = 5e-3;
  double lr_quat = 2e-3;
  double lr_opacity = 5e-2;
  double lr_color = 1e-2;
  double lr_semantic = 1e-1;
  double lr_pose_t = 1e-4;
  double lr_pose_r = 5e-4;

  LossWeights weights;
  std::uint64_t seed = 0;
  double target_l1 = 0.0;   // > 0 enables early exit on train-view L1
  int prune_interval = 200;
  double prune_alpha = 0.005;
  bool icp_seed = true;     // rotation seeding in init_part_poses
  bool poses_only = false;  // cross stage: freeze all Gaussian parameters
  // Cross-stage iterations with the Gaussians frozen before joint
  // refinement starts; keeps the geometry from absorbing pose error
  // while the poses are still far from converged.
  int cross_warmup = 2500;
  // Final pose estimate = average of the pose iterates over this many
  // trailing iterations (0 disables). Cancels the optimizer's
  // stationary noise band without touching the learning rate.
  int cross_pose_avg = 1500;
};

// Estimated part poses, canonical (part-local) frame to world, indexed
// poses[part][time].
struct PartPoseSet {
  std::vector<std::vector<EulerPose>> poses;

  RigidTransform transform(int part, int time) const {
    return geom::euler_to_transform(poses[part][time]);
  }
};

void save_poses(const std::string& path, const PartPoseSet& set);
PartPoseSet load_poses(const std::string& path);

// Stage 1: fit geometry + appearance against RGB, accumulation and SSIM
// losses over seeded random view minibatches. Semantic logits stay at
// zero. Throws on divergence (non-finite loss).
SemanticSplat fit_rgb_splat(const SceneDataset& dataset, int init_count,
                            const OptimConfig& cfg);

// Stage 2: learn only the semantic logits from labeled views with the
// geometry frozen. Throws when the dataset has no labeled pixels.
SemanticSplat fit_semantics(const SemanticSplat& splat, const SceneDataset& dataset,
                            const OptimConfig& cfg);
// Same, recording the per-epoch mean training CE when epoch_ce != null.
SemanticSplat fit_semantics(const SemanticSplat& splat, const SceneDataset& dataset,
                            const OptimConfig& cfg, std::vector<double>* epoch_ce);

// Stage 3 init: per-part centroid translations; rotations zero, or ICP
// between the two times' part means when cfg.icp_seed is set. Throws
// naming any empty part.
PartPoseSet init_part_poses(const SemanticSplat& splat_t0, const SemanticSplat& splat_t1,
                            const OptimConfig& cfg);

struct CrossSceneResult {
  PartPoseSet poses;
  SemanticSplat splat_t0;  // refined, still in native scene frames
  SemanticSplat splat_t1;
  std::vector<std::vector<Gaussian>> canonical_parts;  // from splat_t0 and P^0
  double final_loss = 0.0;
  bool aborted_nan = false;  // true when restored from the last-good state
};

// Stage 3: joint optimization of part poses and Gaussian geometry/color
// (opacity and semantics frozen) by re-rendering each time with the
// opposite time's parts transported through P_dst o inverse(P_src).
CrossSceneResult optimize_cross_scene(const SemanticSplat& splat_t0,
                                      const SemanticSplat& splat_t1,
                                      const SceneDataset& ds_t0, const SceneDataset& ds_t1,
                                      const PartPoseSet& init, const OptimConfig& cfg);

// Part-local Gaussians: inverse(P^0_j) applied to scene-0 part j.
std::vector<std::vector<Gaussian>> canonical_parts(const SemanticSplat& splat_t0,
                                                   const PartPoseSet& poses);

// Mean per-view RGB L1 of a splat rendered at identity against a
// dataset (diagnostic used by tests and the pipeline).
double mean_view_l1(const SemanticSplat& splat, const SceneDataset& dataset);

}  // namespace artsplat::fit
