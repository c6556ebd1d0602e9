#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "artsplat/parallel.hpp"
#include "artsplat/render.hpp"
#include "gradient_check.hpp"

using namespace artsplat;
using geom::RigidTransform;

namespace {

Gaussian iso_gaussian(const Vector3d& mean, double sigma, double opacity_logit,
                      const Vector3d& color, int num_parts, int part) {
  Gaussian g;
  g.mean = mean;
  g.log_scale = Vector3d::Constant(std::log(sigma));
  g.opacity_logit = opacity_logit;
  g.color = color;
  g.semantic_logits = VectorXd::Zero(num_parts + 1);
  g.semantic_logits(part) = 20.0;
  return g;
}

Camera front_camera(int w, int h, double f) {
  // Identity orientation, 2 m behind the origin, looking down +z.
  return Camera{f, f, w / 2.0, h / 2.0, w, h,
                RigidTransform(Quaterniond::Identity(), Vector3d(0, 0, -2.0))};
}

}  // namespace

TEST_CASE("projection lands an on-axis gaussian at the principal point") {
  Camera cam{100.0, 100.0, 16.0, 12.0, 32, 24, RigidTransform::identity()};
  auto g = iso_gaussian(Vector3d(0, 0, 2), 0.1, 0.0, Vector3d::Zero(), 0, 0);
  const auto proj = project_gaussian(g, cam);
  REQUIRE(proj.has_value());
  CHECK(proj->pix_mean(0) == doctest::Approx(16.0).epsilon(1e-12));
  CHECK(proj->pix_mean(1) == doctest::Approx(12.0).epsilon(1e-12));
  CHECK(proj->depth == doctest::Approx(2.0));
  // Isotropic at the optical axis: (f * sigma / z)^2 plus the dilation.
  const double expected = 100.0 * 0.1 / 2.0;
  CHECK(proj->cov2d(0, 0) == doctest::Approx(expected * expected + 0.3).epsilon(1e-9));
  CHECK(proj->cov2d(1, 1) == doctest::Approx(expected * expected + 0.3).epsilon(1e-9));
  CHECK(std::abs(proj->cov2d(0, 1)) < 1e-9);

  g.mean = Vector3d(0.2, -0.1, 2.0);
  const auto off = project_gaussian(g, cam);
  REQUIRE(off.has_value());
  CHECK(off->pix_mean(0) == doctest::Approx(26.0).epsilon(1e-12));
  CHECK(off->pix_mean(1) == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("projection culls gaussians at or behind the near plane") {
  Camera cam{100.0, 100.0, 16.0, 12.0, 32, 24, RigidTransform::identity()};
  auto g = iso_gaussian(Vector3d(0, 0, -1.0), 0.1, 0.0, Vector3d::Zero(), 0, 0);
  CHECK(!project_gaussian(g, cam).has_value());
  g.mean.z() = 0.005;
  CHECK(!project_gaussian(g, cam).has_value());
  g.mean.z() = 0.02;
  CHECK(project_gaussian(g, cam).has_value());
}

TEST_CASE("rasterizing nothing gives a black transparent image") {
  const Camera cam = front_camera(16, 16, 20.0);
  std::vector<Gaussian> empty;
  std::vector<PartInput> parts{{&empty, RigidTransform::identity()}};
  RenderContext ctx;
  const auto out = rasterize(parts, cam, 1, &ctx);
  for (double v : out.rgb.data) CHECK(v == 0.0);
  for (double v : out.accumulation.data) CHECK(v == 0.0);
  for (double v : out.segmentation) CHECK(v == 0.0);
  CHECK(ctx.culled == 0);
}

TEST_CASE("one big opaque gaussian saturates the center pixel") {
  const Camera cam = front_camera(16, 16, 20.0);
  const Vector3d red(0.8, 0.1, 0.1);
  std::vector<Gaussian> gs{iso_gaussian(Vector3d::Zero(), 2.0, 12.0, red, 1, 1)};
  std::vector<PartInput> parts{{&gs, RigidTransform::identity()}};
  const auto out = rasterize(parts, cam, 1, nullptr);
  const double acc = out.accumulation.at(8, 8);
  // Single contribution, weight clamped at 0.999.
  CHECK(acc == doctest::Approx(0.999).epsilon(1e-12));
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(out.rgb.at(8, 8, ch) == doctest::Approx(red(ch) * acc).epsilon(1e-12));
  }
  CHECK(out.seg_at(8, 8, 1) == doctest::Approx(acc).epsilon(1e-4));
}

TEST_CASE("front-to-back compositing: occlusion and transmittance early stop") {
  const Camera cam = front_camera(16, 16, 20.0);
  std::vector<Gaussian> gs{
      iso_gaussian(Vector3d(0, 0, -0.5), 2.0, 12.0, Vector3d(1, 0, 0), 1, 1),
      iso_gaussian(Vector3d(0, 0, 0.5), 2.0, 12.0, Vector3d(0, 1, 0), 1, 1),
      iso_gaussian(Vector3d(0, 0, 1.0), 2.0, 12.0, Vector3d(0, 0, 1), 1, 1)};
  std::vector<PartInput> parts{{&gs, RigidTransform::identity()}};
  const auto out = rasterize(parts, cam, 1, nullptr);
  // Red in front dominates; green sees transmittance 1e-3; by the time the
  // blue one would composite the transmittance is ~1e-6, below the 1e-4
  // stop, so it contributes exactly nothing.
  CHECK(out.rgb.at(8, 8, 0) == doctest::Approx(0.999).epsilon(1e-10));
  CHECK(out.rgb.at(8, 8, 1) == doctest::Approx(0.001 * 0.999).epsilon(1e-3));
  CHECK(out.rgb.at(8, 8, 2) == 0.0);
}

TEST_CASE("adding a gaussian never lowers accumulation anywhere") {
  auto scene = gradcheck::make_scene(21, 18, 2);
  auto inputs = gradcheck::part_inputs(scene);
  const auto before = rasterize(inputs, scene.cam, 2, nullptr);
  scene.parts[0].push_back(
      iso_gaussian(Vector3d(0.1, -0.1, 0.0), 0.3, 1.0, Vector3d(0.5, 0.5, 0.5), 2, 1));
  inputs = gradcheck::part_inputs(scene);
  const auto after = rasterize(inputs, scene.cam, 2, nullptr);
  for (size_t i = 0; i < before.accumulation.data.size(); ++i) {
    CHECK(after.accumulation.data[i] >= before.accumulation.data[i] - 1e-12);
  }
}

TEST_CASE("per-pixel segmentation mass equals accumulation") {
  auto scene = gradcheck::make_scene(22, 24, 3);
  const auto inputs = gradcheck::part_inputs(scene);
  const auto out = rasterize(inputs, scene.cam, 3, nullptr);
  for (int r = 0; r < out.rgb.height; ++r) {
    for (int c = 0; c < out.rgb.width; ++c) {
      double mass = 0.0;
      for (int k = 0; k <= 3; ++k) mass += out.seg_at(r, c, k);
      CHECK(mass == doctest::Approx(out.accumulation.at(r, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("renders and gradients are bit-identical across thread counts") {
  auto scene = gradcheck::make_scene(23, 30, 2, 48);
  const auto inputs = gradcheck::part_inputs(scene);

  auto run = [&](int threads, RenderOutput* out, GradientBuffer* grads) {
    set_num_threads(threads);
    RenderContext ctx;
    *out = rasterize(inputs, scene.cam, 2, &ctx);
    total_loss(*out, ctx, scene.gt_rgb, scene.gt_acc, scene.gt_labels, scene.weights, grads);
  };
  RenderOutput a, b;
  GradientBuffer ga, gb;
  run(1, &a, &ga);
  run(5, &b, &gb);
  set_num_threads(4);

  CHECK(std::memcmp(a.rgb.data.data(), b.rgb.data.data(),
                    a.rgb.data.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.accumulation.data.data(), b.accumulation.data.data(),
                    a.accumulation.data.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.segmentation.data(), b.segmentation.data(),
                    a.segmentation.size() * sizeof(double)) == 0);
  REQUIRE(ga.parts.size() == gb.parts.size());
  for (size_t p = 0; p < ga.parts.size(); ++p) {
    for (size_t i = 0; i < ga.parts[p].size(); ++i) {
      CHECK(ga.parts[p][i].mean == gb.parts[p][i].mean);
      CHECK(ga.parts[p][i].log_scale == gb.parts[p][i].log_scale);
      CHECK(ga.parts[p][i].orientation == gb.parts[p][i].orientation);
      CHECK(ga.parts[p][i].opacity_logit == gb.parts[p][i].opacity_logit);
      CHECK(ga.parts[p][i].color == gb.parts[p][i].color);
      CHECK(ga.parts[p][i].semantic == gb.parts[p][i].semantic);
    }
    CHECK(ga.poses[p].translation == gb.poses[p].translation);
    CHECK(ga.poses[p].rotation == gb.poses[p].rotation);
  }
}

TEST_CASE("loss vanishes when the render matches its own ground truth") {
  auto scene = gradcheck::make_scene(24, 16, 2);
  const auto inputs = gradcheck::part_inputs(scene);
  RenderContext ctx;
  const auto out = rasterize(inputs, scene.cam, 2, &ctx);

  LabelImage unlabeled(16, 16, kUnlabeled);
  CHECK(total_loss(out, ctx, out.rgb, out.accumulation, unlabeled,
                   LossWeights{0.0, 1.0, 1.0, 0.0}) == doctest::Approx(0.0).epsilon(1e-12));

  // Accumulation off by a constant 0.1 on every labeled pixel.
  Image1 shifted = out.accumulation;
  for (auto& v : shifted.data) v += 0.1;
  LabelImage all_fg(16, 16, 1);
  CHECK(total_loss(out, ctx, out.rgb, shifted, all_fg,
                   LossWeights{1.0, 0.0, 0.0, 0.0}) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("cross entropy oracle on an empty render") {
  const Camera cam = front_camera(16, 16, 20.0);
  std::vector<Gaussian> empty;
  std::vector<PartInput> parts{{&empty, RigidTransform::identity()}};
  RenderContext ctx;
  const auto out = rasterize(parts, cam, 1, &ctx);
  const Image3 rgb(16, 16);
  const Image1 acc(16, 16);
  const LossWeights seg_only{0.0, 0.0, 0.0, 1.0};
  // Nothing rendered: background probability is exactly 1 at every pixel.
  LabelImage bg(16, 16, 0);
  CHECK(total_loss(out, ctx, rgb, acc, bg, seg_only) == doctest::Approx(0.0).epsilon(1e-12));
  // Foreground labels against zero mass hit the probability floor.
  LabelImage fg(16, 16, 1);
  CHECK(total_loss(out, ctx, rgb, acc, fg, seg_only) ==
        doctest::Approx(-std::log(1e-13)).epsilon(1e-9));
}

TEST_CASE("analytic gradients match finite differences on random scenes") {
  for (std::uint64_t seed : {101, 202, 303}) {
    auto scene = gradcheck::make_scene(seed, 20, 2);
    const auto result = gradcheck::check_gradients(scene);
    CAPTURE(seed);
    CHECK(result.checked > 300);
    CHECK(result.max_err < 1e-3);
  }
}

TEST_CASE("direct pose chain matches finite differences") {
  auto scene = gradcheck::make_scene(42, 16, 2);
  for (auto& p : scene.src) p = geom::EulerPose{};  // transform reduces to dst

  const auto inputs = gradcheck::part_inputs(scene);
  RenderContext ctx;
  const auto out = rasterize(inputs, scene.cam, 2, &ctx);
  GradientBuffer grads;
  total_loss(out, ctx, scene.gt_rgb, scene.gt_acc, scene.gt_labels, scene.weights, &grads);

  const double h = 1e-4;
  for (size_t p = 0; p < scene.parts.size(); ++p) {
    Vector3d gt = Vector3d::Zero(), ga = Vector3d::Zero();
    chain_pose_direct(grads.poses[p], scene.dst[p], &gt, &ga);
    for (int k = 0; k < 3; ++k) {
      for (double* param : {&scene.dst[p].translation(k), &scene.dst[p].angles(k)}) {
        const double analytic = (param == &scene.dst[p].translation(k)) ? gt(k) : ga(k);
        const double orig = *param;
        *param = orig + h;
        const double up = gradcheck::loss_of(scene);
        *param = orig - h;
        const double down = gradcheck::loss_of(scene);
        *param = orig;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max(std::abs(analytic), std::abs(fd));
        CHECK((denom >= 1e-8 ? std::abs(analytic - fd) / denom
                             : std::abs(analytic - fd)) < 1e-3);
      }
    }
  }
}
