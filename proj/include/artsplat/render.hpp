#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "artsplat/image.hpp"
#include "artsplat/splat.hpp"

namespace artsplat {

using Eigen::Matrix2d;
using Eigen::Vector2d;
using Eigen::Vector4d;

struct LossWeights {
  double acc = 1.0;
  double l1 = 0.8;
  double ssim = 0.2;
  double seg = 1.0;
};

// One rigid part fed to the rasterizer: Gaussians in their local frame
// plus the local->world transform. The pointed-to vector must outlive
// the render context.
struct PartInput {
  const std::vector<Gaussian>* gaussians = nullptr;
  RigidTransform pose;
};

struct RenderOutput {
  Image3 rgb;
  Image1 accumulation;
  int num_parts = 0;
  // Per pixel, composited class distribution of length num_parts+1;
  // sums to the pixel's accumulation (background completes to 1).
  std::vector<double> segmentation;

  double seg_at(int r, int c, int k) const {
    return segmentation[(size_t(r) * rgb.width + c) * (num_parts + 1) + k];
  }
};

struct ProjectedGaussian {
  int part = 0;
  int local_index = 0;
  Vector2d pix_mean = Vector2d::Zero();
  Matrix2d cov2d = Matrix2d::Zero();
  Matrix2d inv2d = Matrix2d::Zero();
  double depth = 0.0;
  Vector3d mean_cam = Vector3d::Zero();
  Matrix3d cov_cam = Matrix3d::Zero();
  double radius_sq = 0.0;  // screen-space support bound
  double alpha = 0.0;
  Vector3d color = Vector3d::Zero();
  VectorXd probs;  // softmax(semantic_logits)
};

struct PixelContribution {
  int proj = 0;    // index into RenderContext::projected
  double weight = 0.0;
};

// Everything the backward pass needs; filled by rasterize() on request.
struct RenderContext {
  std::vector<PartInput> parts;
  Camera camera;
  int num_parts = 0;
  std::vector<ProjectedGaussian> projected;
  std::vector<int> order;  // depth-sorted indices into projected
  std::vector<std::vector<PixelContribution>> contributions;  // per pixel
  std::vector<double> final_transmittance;                    // per pixel
  int culled = 0;
};

struct GaussianGrad {
  Vector3d mean = Vector3d::Zero();
  Vector3d log_scale = Vector3d::Zero();
  Vector4d orientation = Vector4d::Zero();  // w,x,y,z
  double opacity_logit = 0.0;
  Vector3d color = Vector3d::Zero();
  VectorXd semantic;
};

// Gradient w.r.t. a part's composed rigid transform, as a free 3x3
// rotation-matrix gradient plus translation gradient. Chaining into a
// concrete pose parametrization happens in the fit module.
struct TransformGrad {
  Vector3d translation = Vector3d::Zero();
  Matrix3d rotation = Matrix3d::Zero();
};

struct GradientBuffer {
  std::vector<std::vector<GaussianGrad>> parts;  // aligned with input parts
  std::vector<TransformGrad> poses;

  bool all_finite() const;
};

// Projects a single Gaussian; nullopt when behind the near plane
// (0.01 m). Screen covariance is first-order (Jacobian) projection plus
// the 0.3 px^2 isotropic dilation.
struct Projection {
  Vector2d pix_mean;
  Matrix2d cov2d;
  double depth;
};
std::optional<Projection> project_gaussian(const Gaussian& g, const Camera& cam);

// Front-to-back alpha compositing of all parts, strictly depth ordered
// with ties broken by input order. Pass ctx to enable total_loss().
RenderOutput rasterize(std::span<const PartInput> parts, const Camera& cam,
                       int num_parts, RenderContext* ctx = nullptr);

// Weighted loss of Eq.-style terms: accumulation L1 (over labeled
// pixels), RGB L1, 1-SSIM, and cross entropy of the composited
// segmentation over labeled pixels. gt_acc is compared only where
// gt_labels != 255. Fills grads (analytic backward) when non-null.
double total_loss(const RenderOutput& out, const RenderContext& ctx,
                  const Image3& gt_rgb, const Image1& gt_acc,
                  const LabelImage& gt_labels, const LossWeights& w,
                  GradientBuffer* grads = nullptr);

// Chain a composed-transform gradient into Euler pose parameters.
// Direct: the part transform is euler_to_transform(pose).
void chain_pose_direct(const TransformGrad& g, const geom::EulerPose& pose,
                       Vector3d* g_translation, Vector3d* g_angles);
// Transport: the part transform is dst o inverse(src); accumulates into
// all four outputs.
void chain_pose_transport(const TransformGrad& g, const geom::EulerPose& src,
                          const geom::EulerPose& dst, Vector3d* g_t_src,
                          Vector3d* g_a_src, Vector3d* g_t_dst, Vector3d* g_a_dst);

}  // namespace artsplat
