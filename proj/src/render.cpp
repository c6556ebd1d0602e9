#include "artsplat/render.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "artsplat/parallel.hpp"
#include "artsplat/ssim.hpp"

namespace artsplat {

namespace {

constexpr double kNearPlane = 0.01;
constexpr double kDilation = 0.3;       // px^2, isotropic
constexpr double kMaxExponent = 18.5;   // support cutoff, G < ~1e-8
constexpr double kMaxWeight = 0.999;
constexpr double kMinTransmittance = 1e-4;
constexpr int kTile = 16;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VectorXd softmax(const VectorXd& v) {
  const double m = v.maxCoeff();
  VectorXd e = (v.array() - m).exp();
  return e / e.sum();
}

// Jacobian of the pinhole projection (fx*x/z + cx, fy*y/z + cy) w.r.t.
// the camera-space point.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Camera& cam, const Vector3d& p) {
  Eigen::Matrix<double, 2, 3> j;
  const double z = p.z();
  j << cam.fx / z, 0.0, -cam.fx * p.x() / (z * z),
       0.0, cam.fy / z, -cam.fy * p.y() / (z * z);
  return j;
}

// dR/dq for a unit quaternion (w,x,y,z).
std::array<Matrix3d, 4> quat_rotation_jacobian(const Vector4d& q) {
  const double w = q(0), x = q(1), y = q(2), z = q(3);
  std::array<Matrix3d, 4> d;
  d[0] << 0, -z, y, z, 0, -x, -y, x, 0;
  d[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  d[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  d[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  for (auto& m : d) m *= 2.0;
  return d;
}

struct Projector {
  const Camera& cam;
  RigidTransform w2c;
  Matrix3d r_cw;

  explicit Projector(const Camera& c)
      : cam(c), w2c(c.world_to_camera()), r_cw(w2c.rotation_matrix()) {}

  bool project(const Gaussian& g, const RigidTransform& pose, ProjectedGaussian* out) const {
    const Vector3d mean_w = pose * g.mean;
    const Vector3d mean_c = w2c * mean_w;
    if (mean_c.z() <= kNearPlane) return false;
    const Matrix3d rot_w = pose.rotation_matrix() * g.orientation.normalized().toRotationMatrix();
    const Vector3d s2 = g.scale().cwiseProduct(g.scale());
    const Matrix3d cov_w = rot_w * s2.asDiagonal() * rot_w.transpose();
    const Matrix3d cov_cam = r_cw * cov_w * r_cw.transpose();
    const auto j = projection_jacobian(cam, mean_c);
    Matrix2d cov2d = j * cov_cam * j.transpose();
    cov2d(0, 0) += kDilation;
    cov2d(1, 1) += kDilation;
    const double det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(1, 0);
    Matrix2d inv;
    inv << cov2d(1, 1), -cov2d(0, 1), -cov2d(1, 0), cov2d(0, 0);
    inv /= det;
    const double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
    const double lmax = mid + std::sqrt(std::max(mid * mid - det, 0.0));
    out->pix_mean = Vector2d(cam.fx * mean_c.x() / mean_c.z() + cam.cx,
                             cam.fy * mean_c.y() / mean_c.z() + cam.cy);
    out->cov2d = cov2d;
    out->inv2d = inv;
    out->depth = mean_c.z();
    out->mean_cam = mean_c;
    out->cov_cam = cov_cam;
    out->radius_sq = 2.0 * kMaxExponent * lmax;
    out->alpha = sigmoid(g.opacity_logit);
    out->color = g.color;
    out->probs = softmax(g.semantic_logits);
    return true;
  }
};

}  // namespace

std::optional<Projection> project_gaussian(const Gaussian& g, const Camera& cam) {
  Projector prj(cam);
  ProjectedGaussian pg;
  if (!prj.project(g, RigidTransform::identity(), &pg)) return std::nullopt;
  return Projection{pg.pix_mean, pg.cov2d, pg.depth};
}

RenderOutput rasterize(std::span<const PartInput> parts, const Camera& cam,
                       int num_parts, RenderContext* ctx) {
  const int h = cam.height, w = cam.width;
  const int classes = num_parts + 1;
  RenderOutput out;
  out.rgb = Image3(h, w);
  out.accumulation = Image1(h, w);
  out.num_parts = num_parts;
  out.segmentation.assign(size_t(h) * w * classes, 0.0);

  RenderContext local;
  RenderContext& rc = ctx ? *ctx : local;
  rc.parts.assign(parts.begin(), parts.end());
  rc.camera = cam;
  rc.num_parts = num_parts;
  rc.projected.clear();
  rc.culled = 0;

  Projector prj(cam);
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& part = parts[pi];
    for (size_t gi = 0; gi < part.gaussians->size(); ++gi) {
      const Gaussian& g = (*part.gaussians)[gi];
      if (g.semantic_logits.size() != classes) {
        throw std::invalid_argument("rasterize: semantic length != num_parts+1");
      }
      ProjectedGaussian pg;
      if (!prj.project(g, part.pose, &pg)) {
        ++rc.culled;
        continue;
      }
      pg.part = static_cast<int>(pi);
      pg.local_index = static_cast<int>(gi);
      rc.projected.push_back(std::move(pg));
    }
  }

  rc.order.resize(rc.projected.size());
  for (size_t i = 0; i < rc.order.size(); ++i) rc.order[i] = static_cast<int>(i);
  std::sort(rc.order.begin(), rc.order.end(), [&](int a, int b) {
    if (rc.projected[a].depth != rc.projected[b].depth)
      return rc.projected[a].depth < rc.projected[b].depth;
    return a < b;
  });

  rc.contributions.assign(size_t(h) * w, {});
  rc.final_transmittance.assign(size_t(h) * w, 1.0);

  const int tiles_x = (w + kTile - 1) / kTile;
  const int tiles_y = (h + kTile - 1) / kTile;
  parallel_for(tiles_x * tiles_y, [&](int tile) {
    const int tr = (tile / tiles_x) * kTile;
    const int tc = (tile % tiles_x) * kTile;
    for (int r = tr; r < std::min(h, tr + kTile); ++r) {
      for (int c = tc; c < std::min(w, tc + kTile); ++c) {
        const Vector2d pix(c + 0.5, r + 0.5);
        double trans = 1.0;
        auto& contribs = rc.contributions[size_t(r) * w + c];
        for (int idx : rc.order) {
          const auto& pg = rc.projected[idx];
          const Vector2d d = pix - pg.pix_mean;
          if (d.squaredNorm() > pg.radius_sq) continue;
          const double e = 0.5 * d.dot(pg.inv2d * d);
          if (e > kMaxExponent) continue;
          const double weight = std::min(pg.alpha * std::exp(-e), kMaxWeight);
          const double wt = weight * trans;
          for (int ch = 0; ch < 3; ++ch) out.rgb.at(r, c, ch) += pg.color(ch) * wt;
          out.accumulation.at(r, c) += wt;
          double* seg = &out.segmentation[(size_t(r) * w + c) * classes];
          for (int k = 0; k < classes; ++k) seg[k] += pg.probs(k) * wt;
          contribs.push_back({idx, weight});
          trans *= (1.0 - weight);
          if (trans < kMinTransmittance) break;
        }
        rc.final_transmittance[size_t(r) * w + c] = trans;
      }
    }
  });
  return out;
}

bool GradientBuffer::all_finite() const {
  auto ok = [](double v) { return std::isfinite(v); };
  for (const auto& part : parts) {
    for (const auto& g : part) {
      for (int k = 0; k < 3; ++k) {
        if (!ok(g.mean(k)) || !ok(g.log_scale(k)) || !ok(g.color(k))) return false;
      }
      for (int k = 0; k < 4; ++k) {
        if (!ok(g.orientation(k))) return false;
      }
      if (!ok(g.opacity_logit)) return false;
      for (int k = 0; k < g.semantic.size(); ++k) {
        if (!ok(g.semantic(k))) return false;
      }
    }
  }
  for (const auto& p : poses) {
    for (int k = 0; k < 3; ++k) {
      if (!ok(p.translation(k))) return false;
    }
    if (!p.rotation.allFinite()) return false;
  }
  return true;
}

double total_loss(const RenderOutput& out, const RenderContext& ctx,
                  const Image3& gt_rgb, const Image1& gt_acc,
                  const LabelImage& gt_labels, const LossWeights& lw,
                  GradientBuffer* grads) {
  const int h = out.rgb.height, w = out.rgb.width;
  const int classes = ctx.num_parts + 1;
  if (gt_rgb.height != h || gt_rgb.width != w || gt_labels.height != h ||
      gt_labels.width != w || gt_acc.height != h || gt_acc.width != w) {
    throw std::invalid_argument("total_loss: shape mismatch");
  }

  const size_t npix = size_t(h) * w;
  Image3 g_rgb(h, w);
  Image1 g_acc(h, w);
  std::vector<double> g_seg;
  if (grads) g_seg.assign(npix * classes, 0.0);

  // RGB L1 over all pixels.
  double loss_l1 = 0.0;
  const double rgb_count = double(npix) * 3.0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        const double diff = out.rgb.at(r, c, ch) - gt_rgb.at(r, c, ch);
        loss_l1 += std::abs(diff);
        if (grads) {
          g_rgb.at(r, c, ch) = lw.l1 * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) / rgb_count;
        }
      }
    }
  }
  loss_l1 /= rgb_count;

  // Accumulation L1 over pixels with a label.
  size_t labeled = 0;
  for (auto v : gt_labels.data) {
    if (v != kUnlabeled) ++labeled;
  }
  double loss_acc = 0.0;
  if (labeled > 0) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (gt_labels.at(r, c) == kUnlabeled) continue;
        const double diff = out.accumulation.at(r, c) - gt_acc.at(r, c);
        loss_acc += std::abs(diff);
        if (grads) {
          g_acc.at(r, c) += lw.acc * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)) / double(labeled);
        }
      }
    }
    loss_acc /= double(labeled);
  }

  // 1 - SSIM.
  double loss_ssim = 0.0;
  if (lw.ssim > 0.0) {
    Image3 ssim_grad;
    const double s = ssim(out.rgb, gt_rgb, grads ? &ssim_grad : nullptr);
    loss_ssim = 1.0 - s;
    if (grads) {
      for (size_t i = 0; i < g_rgb.data.size(); ++i) {
        g_rgb.data[i] -= lw.ssim * ssim_grad.data[i];
      }
    }
  }

  // Cross entropy of the composited class distribution; the background
  // class absorbs the residual transmittance so the distribution is
  // proper.
  double loss_seg = 0.0;
  if (lw.seg > 0.0) {
    if (labeled == 0) {
      std::cerr << "warning: segmentation weight > 0 but no labeled pixels\n";
    } else {
      constexpr double kProbFloor = 1e-13;
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          const int lbl = gt_labels.at(r, c);
          if (lbl == kUnlabeled) continue;
          double q = out.segmentation[(size_t(r) * w + c) * classes + lbl];
          if (lbl == 0) q += 1.0 - out.accumulation.at(r, c);
          loss_seg += -std::log(std::max(q, kProbFloor));
          if (grads && q > kProbFloor) {
            const double gq = lw.seg * (-1.0 / q) / double(labeled);
            g_seg[(size_t(r) * w + c) * classes + lbl] += gq;
            if (lbl == 0) g_acc.at(r, c) += -gq;
          }
        }
      }
      loss_seg /= double(labeled);
    }
  }

  const double total = lw.acc * loss_acc + lw.l1 * loss_l1 +
                       lw.ssim * loss_ssim + lw.seg * loss_seg;
  if (!grads) return total;

  // Backward through compositing: per tile, back-to-front per pixel,
  // into per-tile partial buffers reduced in tile order.
  const size_t nproj = ctx.projected.size();
  constexpr int kFixed = 9;  // gu(2) gSinv(3 sym) galpha gcolor(3)
  const int tiles_x = (w + kTile - 1) / kTile;
  const int tiles_y = (h + kTile - 1) / kTile;
  const int ntiles = tiles_x * tiles_y;
  std::vector<std::vector<double>> tile_fixed(ntiles);
  std::vector<std::vector<double>> tile_prob(ntiles);

  parallel_for(ntiles, [&](int tile) {
    auto& fixed = tile_fixed[tile];
    auto& prob = tile_prob[tile];
    fixed.assign(nproj * kFixed, 0.0);
    prob.assign(nproj * classes, 0.0);
    const int tr = (tile / tiles_x) * kTile;
    const int tc = (tile % tiles_x) * kTile;
    VectorXd s_seg(classes);
    for (int r = tr; r < std::min(h, tr + kTile); ++r) {
      for (int c = tc; c < std::min(w, tc + kTile); ++c) {
        const size_t pix_idx = size_t(r) * w + c;
        const auto& contribs = ctx.contributions[pix_idx];
        if (contribs.empty()) continue;
        const Vector2d pix(c + 0.5, r + 0.5);
        const Vector3d grgb(g_rgb.at(r, c, 0), g_rgb.at(r, c, 1), g_rgb.at(r, c, 2));
        const double gacc = g_acc.at(r, c);
        const double* gseg = grads ? &g_seg[pix_idx * classes] : nullptr;
        bool any_seg = false;
        for (int k = 0; k < classes; ++k) any_seg = any_seg || gseg[k] != 0.0;

        double t_next = ctx.final_transmittance[pix_idx];
        Vector3d s_rgb = Vector3d::Zero();
        double s_acc = 0.0;
        s_seg.setZero();
        for (int i = static_cast<int>(contribs.size()) - 1; i >= 0; --i) {
          const double weight = contribs[i].weight;
          const int pj = contribs[i].proj;
          const auto& pg = ctx.projected[pj];
          const double om = 1.0 - weight;
          const double t_i = t_next / om;
          const double wt = weight * t_i;

          double dw = grgb.dot(pg.color * t_i - s_rgb / om) + gacc * (t_i - s_acc / om);
          if (any_seg) {
            for (int k = 0; k < classes; ++k) {
              dw += gseg[k] * (pg.probs(k) * t_i - s_seg(k) / om);
            }
          }

          double* fx = &fixed[size_t(pj) * kFixed];
          // color / prob gradients
          fx[6] += grgb(0) * wt;
          fx[7] += grgb(1) * wt;
          fx[8] += grgb(2) * wt;
          if (any_seg) {
            double* pr = &prob[size_t(pj) * classes];
            for (int k = 0; k < classes; ++k) pr[k] += gseg[k] * wt;
          }

          // weight -> (alpha, falloff) unless the clamp is active
          const double gfall = weight / pg.alpha;  // exp(-e)
          if (pg.alpha * gfall < kMaxWeight) {
            fx[5] += gfall * dw;                 // d/d alpha
            const double dg = pg.alpha * dw;     // d/d falloff
            const Vector2d d = pix - pg.pix_mean;
            const Vector2d sd = pg.inv2d * d;
            const double gscale = dg * weight / pg.alpha;  // dG * G
            fx[0] += gscale * sd(0);
            fx[1] += gscale * sd(1);
            fx[2] += -0.5 * gscale * d(0) * d(0);
            fx[3] += -0.5 * gscale * d(0) * d(1);
            fx[4] += -0.5 * gscale * d(1) * d(1);
          }

          s_rgb += pg.color * wt;
          s_acc += wt;
          if (any_seg) s_seg += pg.probs * wt;
          t_next = t_i;
        }
      }
    }
  });

  // Deterministic reduction in tile order.
  std::vector<double> acc_fixed(nproj * kFixed, 0.0);
  std::vector<double> acc_prob(nproj * classes, 0.0);
  for (int tile = 0; tile < ntiles; ++tile) {
    for (size_t i = 0; i < acc_fixed.size(); ++i) acc_fixed[i] += tile_fixed[tile][i];
    for (size_t i = 0; i < acc_prob.size(); ++i) acc_prob[i] += tile_prob[tile][i];
    tile_fixed[tile].clear();
    tile_prob[tile].clear();
  }

  // Allocate outputs.
  grads->parts.resize(ctx.parts.size());
  grads->poses.assign(ctx.parts.size(), TransformGrad{});
  for (size_t pi = 0; pi < ctx.parts.size(); ++pi) {
    grads->parts[pi].assign(ctx.parts[pi].gaussians->size(), GaussianGrad{});
    for (auto& g : grads->parts[pi]) g.semantic = VectorXd::Zero(classes);
  }

  // Chain from screen space back to local Gaussian parameters and the
  // part transforms.
  const RigidTransform w2c = ctx.camera.world_to_camera();
  const Matrix3d r_cw = w2c.rotation_matrix();
  for (size_t pj = 0; pj < nproj; ++pj) {
    const auto& pg = ctx.projected[pj];
    const double* fx = &acc_fixed[pj * kFixed];
    const double* pr = &acc_prob[pj * classes];
    const Gaussian& g = (*ctx.parts[pg.part].gaussians)[pg.local_index];
    GaussianGrad& gg = grads->parts[pg.part][pg.local_index];
    TransformGrad& tg = grads->poses[pg.part];

    const Vector2d gu(fx[0], fx[1]);
    Matrix2d g_sinv;
    g_sinv << fx[2], fx[3], fx[3], fx[4];
    const double galpha = fx[5];
    gg.color += Vector3d(fx[6], fx[7], fx[8]);

    // semantics: softmax backward
    Eigen::Map<const VectorXd> gprob(pr, classes);
    const double dot = gprob.dot(pg.probs);
    for (int k = 0; k < classes; ++k) {
      gg.semantic(k) += pg.probs(k) * (gprob(k) - dot);
    }

    // opacity logit
    gg.opacity_logit += galpha * pg.alpha * (1.0 - pg.alpha);

    // screen covariance -> camera covariance and camera mean
    const Matrix2d g_cov2d = -(pg.inv2d * g_sinv * pg.inv2d);
    const auto j = projection_jacobian(ctx.camera, pg.mean_cam);
    const Eigen::Matrix<double, 2, 3> gj = 2.0 * g_cov2d * j * pg.cov_cam;
    const Matrix3d g_cov_cam = j.transpose() * g_cov2d * j;

    Vector3d gmc = j.transpose() * gu;
    const double x = pg.mean_cam.x(), y = pg.mean_cam.y(), z = pg.mean_cam.z();
    const double fxn = ctx.camera.fx, fyn = ctx.camera.fy;
    gmc(0) += gj(0, 2) * (-fxn / (z * z));
    gmc(1) += gj(1, 2) * (-fyn / (z * z));
    gmc(2) += gj(0, 0) * (-fxn / (z * z)) + gj(0, 2) * (2.0 * fxn * x / (z * z * z)) +
              gj(1, 1) * (-fyn / (z * z)) + gj(1, 2) * (2.0 * fyn * y / (z * z * z));

    const Vector3d gmw = r_cw.transpose() * gmc;
    const Matrix3d g_cov_w = r_cw.transpose() * g_cov_cam * r_cw;

    // world -> part-local
    const Matrix3d r_pose = ctx.parts[pg.part].pose.rotation_matrix();
    gg.mean += r_pose.transpose() * gmw;
    const Matrix3d g_cov_l = r_pose.transpose() * g_cov_w * r_pose;

    const Quaterniond qn = g.orientation.normalized();
    const Matrix3d r_g = qn.toRotationMatrix();
    const Vector3d s = g.scale();
    const Vector3d s2 = s.cwiseProduct(s);
    const Matrix3d inner = r_g.transpose() * g_cov_l * r_g;
    for (int k = 0; k < 3; ++k) {
      gg.log_scale(k) += 2.0 * s2(k) * inner(k, k);
    }

    const Vector4d q(qn.w(), qn.x(), qn.y(), qn.z());
    const auto dr = quat_rotation_jacobian(q);
    Vector4d gq_hat;
    const Matrix3d d_rt = s2.asDiagonal() * r_g.transpose();
    for (int k = 0; k < 4; ++k) {
      gq_hat(k) = 2.0 * (g_cov_l.cwiseProduct(dr[k] * d_rt)).sum();
    }
    // normalization jacobian (stored quaternion is kept unit length)
    const Vector4d q_raw(g.orientation.w(), g.orientation.x(), g.orientation.y(),
                         g.orientation.z());
    const double qnorm = q_raw.norm();
    gg.orientation += (gq_hat - q * (q.dot(gq_hat))) / qnorm;

    // part transform
    tg.translation += gmw;
    tg.rotation += gmw * g.mean.transpose() + 2.0 * g_cov_w * r_pose * (r_g * s2.asDiagonal() * r_g.transpose());
  }

  return total;
}

void chain_pose_direct(const TransformGrad& g, const geom::EulerPose& pose,
                       Vector3d* g_translation, Vector3d* g_angles) {
  *g_translation += g.translation;
  const auto dr = geom::euler_rotation_jacobian(pose.angles);
  for (int k = 0; k < 3; ++k) {
    (*g_angles)(k) += g.rotation.cwiseProduct(dr[k]).sum();
  }
}

void chain_pose_transport(const TransformGrad& g, const geom::EulerPose& src,
                          const geom::EulerPose& dst, Vector3d* g_t_src,
                          Vector3d* g_a_src, Vector3d* g_t_dst, Vector3d* g_a_dst) {
  const Matrix3d r_src = geom::euler_rotation(src.angles);
  const Matrix3d r_dst = geom::euler_rotation(dst.angles);
  const Matrix3d r_c = r_dst * r_src.transpose();

  // t_c = t_dst - r_c * t_src folds a translation term into the
  // composed-rotation gradient.
  const Matrix3d g_rc = g.rotation - g.translation * src.translation.transpose();

  *g_t_dst += g.translation;
  *g_t_src += -(r_c.transpose() * g.translation);

  const Matrix3d g_rd = g_rc * r_src;
  const Matrix3d g_rs = g_rc.transpose() * r_dst;
  const auto dr_src = geom::euler_rotation_jacobian(src.angles);
  const auto dr_dst = geom::euler_rotation_jacobian(dst.angles);
  for (int k = 0; k < 3; ++k) {
    (*g_a_dst)(k) += g_rd.cwiseProduct(dr_dst[k]).sum();
    (*g_a_src)(k) += g_rs.cwiseProduct(dr_src[k]).sum();
  }
}

}  // namespace artsplat
