#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "artsplat/geom.hpp"
#include "artsplat/image.hpp"

namespace artsplat {

using geom::RigidTransform;
using Eigen::Matrix3d;
using Eigen::Quaterniond;
using Eigen::Vector3d;
using Eigen::VectorXd;

// One anisotropic 3D Gaussian. Scale is stored as log, opacity as a
// logit, so the optimizer stays unconstrained; clamps happen after each
// step. semantic_logits has length num_parts+1 with index 0 reserved
// for background.
struct Gaussian {
  Vector3d mean = Vector3d::Zero();
  Vector3d log_scale = Vector3d::Zero();
  Quaterniond orientation{1.0, 0.0, 0.0, 0.0};
  double opacity_logit = 0.0;
  Vector3d color = Vector3d::Zero();  // degree-0 appearance (the sh slot)
  VectorXd semantic_logits;

  Vector3d scale() const { return log_scale.array().exp(); }
  double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
};

// Sigma = R * diag(s)^2 * R^T with s = exp(log_scale).
Matrix3d covariance(const Gaussian& g);

struct SemanticSplat {
  std::vector<Gaussian> gaussians;
  int num_parts = 0;
};

// Argmax over semantic logits; ties break toward the lowest index, so
// untrained (all-zero) logits land on background (0). Emits a warning to
// stderr for parts with no Gaussians.
std::vector<int> part_assignment(const SemanticSplat& splat);

// Gaussians of part j (1-based part index), in splat order.
std::vector<Gaussian> extract_part(const SemanticSplat& splat, int part);

struct Camera {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  RigidTransform pose;  // camera-to-world

  RigidTransform world_to_camera() const { return geom::inverse(pose); }
};

struct Observation {
  Camera camera;
  Image3 rgb;
  LabelImage labels;  // all-255 when the view carries no labels

  bool has_labels() const;
};

struct SceneDataset {
  int time = 0;
  int num_parts = 0;
  std::vector<Observation> observations;
};

// Splat file: 16-byte magic, textual header terminated by a blank line,
// then little-endian float32 records (mean, log_scale, quat wxyz,
// opacity_logit, color, semantic_logits).
void save_splat(const std::string& path, const SemanticSplat& splat);
SemanticSplat load_splat(const std::string& path);

// Scene manifest: line-oriented text file next to the referenced PNGs.
SceneDataset load_dataset(const std::string& manifest_path);
void save_dataset(const std::string& dir, const std::string& manifest_name,
                  const SceneDataset& dataset);

}  // namespace artsplat
