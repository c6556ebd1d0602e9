#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "artsplat/artic.hpp"
#include "artsplat/eval.hpp"
#include "artsplat/fit.hpp"
#include "artsplat/synth.hpp"

namespace artsplat::pipeline {

struct PipelineConfig {
  std::string out_dir;

  // Data source: pre-rendered manifests for both times, an object-spec
  // file, or a named preset rendered on the fly.
  std::string manifest_t0, manifest_t1;
  std::string spec_path;
  std::string preset = "revolute";  // revolute | prismatic | chain
  int chain_parts = 8;

  int views = 50;
  int resolution = 64;
  double label_fraction = 1.0;
  int init_gaussians = 4500;

  fit::OptimConfig optim;
  artic::JointFitConfig joint;
  double eps = 0.005;  // joint acceptance threshold (ADD, meters)
  int root = 0;
  std::uint64_t seed = 7;
  int interp_steps = 8;  // interpolated-configuration renders
  bool resume = true;    // reuse stage checkpoints already on disk
};

struct PipelineResult {
  artic::KinematicTree tree;
  fit::PartPoseSet poses;
  std::vector<std::vector<Gaussian>> canonical_parts;
  eval::MetricReport report;
  bool has_report = false;  // ground truth available (spec or preset mode)
  std::string metrics_path;
};

// Runs synth-or-load -> rgb fit x2 -> semantics x2 -> pose init +
// cross-scene optimization -> joint fitting -> tree -> interpolated
// renders -> evaluation. Every stage writes its artifacts into out_dir
// and reloads them from disk, so a resumed run is bit-identical to an
// uninterrupted one. Stage failures raise with the stage name; earlier
// checkpoints stay intact.
PipelineResult run_pipeline(const PipelineConfig& cfg);

// Both joint hypotheses for every ordered part pair, fitted over the
// canonical part means and per-time pose estimates.
std::vector<artic::PairResult> fit_all_pairs(
    const std::vector<std::vector<Gaussian>>& canonical_parts,
    const fit::PartPoseSet& poses, const artic::JointFitConfig& cfg);

// FNV-1a over the file bytes; used for the artifact manifest.
std::uint64_t file_hash(const std::string& path);

}  // namespace artsplat::pipeline
