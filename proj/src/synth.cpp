#include "artsplat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "artsplat/parallel.hpp"
#include "artsplat/render.hpp"

namespace artsplat::synth {

using artic::JointType;
using Eigen::Quaterniond;

namespace {

int joint_times(const ObjectSpec& spec) {
  return spec.joints.empty() ? 2 : int(spec.joints[0].joint.configs.size());
}

void validate_spec(const ObjectSpec& spec) {
  const int n = int(spec.parts.size());
  if (n < 1) throw std::invalid_argument("object spec: no parts");
  if (int(spec.joints.size()) != n - 1) {
    throw std::invalid_argument("object spec: joints must form a tree (need parts-1 joints)");
  }
  const int times = joint_times(spec);
  if (times < 2) throw std::invalid_argument("object spec: need at least two configurations");
  std::vector<bool> is_child(n, false);
  for (const auto& j : spec.joints) {
    if (j.parent < 0 || j.parent >= n || j.child < 0 || j.child >= n || j.parent == j.child) {
      throw std::invalid_argument("object spec: bad joint part ids");
    }
    if (is_child[j.child]) throw std::invalid_argument("object spec: part has two parents");
    is_child[j.child] = true;
    if (int(j.joint.configs.size()) != times) {
      throw std::invalid_argument("object spec: inconsistent configuration counts");
    }
    const double delta = std::abs(j.joint.configs[1] - j.joint.configs[0]);
    const double min_delta = j.joint.type == JointType::kRevolute ? 0.1 : 0.05;
    if (delta < min_delta) {
      throw std::invalid_argument("object spec: configurations too close to distinguish");
    }
  }
}

}  // namespace

GroundTruth generate_object(const ObjectSpec& spec) {
  validate_spec(spec);
  const int n = int(spec.parts.size());
  const int times = joint_times(spec);

  GroundTruth gt;
  gt.spec = spec;
  gt.num_parts = n;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  for (int p = 0; p < n; ++p) {
    const auto& ps = spec.parts[p];
    std::vector<Gaussian> part;
    const double density = 1.6 / std::cbrt(double(std::max(1, ps.gaussian_count)));
    for (int i = 0; i < ps.gaussian_count; ++i) {
      Gaussian g;
      // Last 15% of each part form a contrasting knob at one corner so no
      // part is symmetric under 180 degree flips (plain single-color boxes
      // admit flipped pose aliases that ICP and the photometric loss both
      // accept).
      const bool knob = 20 * i >= 17 * ps.gaussian_count;
      for (int k = 0; k < 3; ++k) {
        const double e = ps.extent(k);
        g.mean(k) = knob ? e * (0.85 + uni(-0.35, 0.35)) : uni(-e, e);
        const double base = std::max(e, 0.004) * density;
        g.log_scale(k) = std::log(base * uni(0.7, 1.3));
        const double c0 = knob ? 1.0 - ps.base_color(k) : ps.base_color(k);
        g.color(k) = std::clamp(c0 + uni(-0.08, 0.08), 0.0, 1.0);
      }
      g.orientation = Quaterniond(uni(-1, 1), uni(-1, 1), uni(-1, 1), uni(-1, 1)).normalized();
      g.opacity_logit = uni(1.5, 2.5);
      g.semantic_logits = VectorXd::Constant(n + 1, -20.0);
      g.semantic_logits(p + 1) = 20.0;
      part.push_back(g);
    }
    gt.parts.push_back(std::move(part));
  }

  // FK over the planted tree; the part that is never a child is the root.
  std::vector<bool> is_child(n, false);
  for (const auto& j : spec.joints) is_child[j.child] = true;
  int root = -1;
  for (int p = 0; p < n; ++p) {
    if (!is_child[p]) {
      if (root >= 0) throw std::invalid_argument("object spec: joint graph is disconnected");
      root = p;
    }
  }
  if (root < 0) throw std::invalid_argument("object spec: joint graph has a cycle");

  gt.poses.assign(times, std::vector<RigidTransform>(n, RigidTransform::identity()));
  for (int t = 0; t < times; ++t) {
    std::vector<bool> resolved(n, false);
    resolved[root] = true;
    for (int pass = 0, done = 1; pass < n && done < n; ++pass) {
      for (const auto& j : spec.joints) {
        if (!resolved[j.parent] || resolved[j.child]) continue;
        gt.poses[t][j.child] =
            geom::compose(gt.poses[t][j.parent], j.joint.transform(j.joint.configs[t]));
        resolved[j.child] = true;
        ++done;
      }
    }
    for (int p = 0; p < n; ++p) {
      if (!resolved[p]) throw std::invalid_argument("object spec: joint graph has a cycle");
    }
  }
  return gt;
}

LabelImage labels_from_render(const RenderOutput& out) {
  LabelImage labels(out.rgb.height, out.rgb.width, 0);
  for (int r = 0; r < out.rgb.height; ++r) {
    for (int c = 0; c < out.rgb.width; ++c) {
      if (out.accumulation.at(r, c) < 0.5) continue;
      int best = 1;
      for (int k = 2; k <= out.num_parts; ++k) {
        if (out.seg_at(r, c, k) > out.seg_at(r, c, best)) best = k;
      }
      labels.at(r, c) = std::uint8_t(best);
    }
  }
  return labels;
}

std::pair<SceneDataset, SceneDataset> render_dataset(const GroundTruth& gt, int views,
                                                     int resolution,
                                                     double label_fraction) {
  if (views < 1) throw std::invalid_argument("render_dataset: need at least one view");
  const int times = int(gt.poses.size());

  // Object bounds over all times, world frame.
  Vector3d center = Vector3d::Zero();
  size_t count = 0;
  for (int t = 0; t < times; ++t) {
    for (int p = 0; p < gt.num_parts; ++p) {
      for (const auto& g : gt.parts[p]) {
        center += gt.poses[t][p] * g.mean;
        ++count;
      }
    }
  }
  center /= double(count);
  double radius = 0.02;
  for (int t = 0; t < times; ++t) {
    for (int p = 0; p < gt.num_parts; ++p) {
      for (const auto& g : gt.parts[p]) {
        radius = std::max(radius, (gt.poses[t][p] * g.mean - center).norm() +
                                      3.0 * g.scale().maxCoeff());
      }
    }
  }
  const double dist = 2.5 * radius;
  const double focal = double(resolution);
  const int labeled = int(std::ceil(label_fraction * views - 1e-12));

  std::mt19937_64 rng(gt.spec.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  auto make_camera = [&]() {
    const double z = 2.0 * u01(rng) - 1.0;
    const double phi = 2.0 * M_PI * u01(rng);
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vector3d dir(s * std::cos(phi), s * std::sin(phi), z);
    const Vector3d pos = center + dist * dir;
    const Vector3d forward = -dir;
    const Vector3d up = std::abs(forward.z()) < 0.99 ? Vector3d::UnitZ() : Vector3d::UnitY();
    const Vector3d xc = up.cross(forward).normalized();
    const Vector3d yc = forward.cross(xc);
    Matrix3d r_cw;
    r_cw.col(0) = xc;
    r_cw.col(1) = yc;
    r_cw.col(2) = forward;
    return Camera{focal, focal, resolution / 2.0, resolution / 2.0, resolution, resolution,
                  RigidTransform(Quaterniond(r_cw), pos)};
  };

  std::pair<SceneDataset, SceneDataset> out;
  for (int t = 0; t < std::min(times, 2); ++t) {
    SceneDataset& ds = t == 0 ? out.first : out.second;
    ds.time = t;
    ds.num_parts = gt.num_parts;
    ds.observations.resize(views);
    for (int v = 0; v < views; ++v) ds.observations[v].camera = make_camera();

    std::vector<PartInput> inputs;
    for (int p = 0; p < gt.num_parts; ++p) inputs.push_back({&gt.parts[p], gt.poses[t][p]});

    parallel_for(views, [&](int v) {
      Observation& obs = ds.observations[v];
      const auto render = rasterize(inputs, obs.camera, gt.num_parts, nullptr);
      obs.rgb = render.rgb;
      for (auto& val : obs.rgb.data) val = std::clamp(val, 0.0, 1.0);
      obs.labels = v < labeled ? labels_from_render(render)
                               : LabelImage(resolution, resolution, kUnlabeled);
    });
  }
  return out;
}

ObjectSpec make_two_part_revolute(std::uint64_t seed) {
  ObjectSpec spec;
  spec.seed = seed;
  PartSpec base;
  base.gaussian_count = 700;
  base.extent = Vector3d(0.03125, 0.0225, 0.00625);
  base.base_color = Vector3d(0.75, 0.35, 0.25);
  PartSpec door;
  door.gaussian_count = 700;
  door.extent = Vector3d(0.025, 0.009, 0.0175);
  door.base_color = Vector3d(0.25, 0.45, 0.8);
  spec.parts = {base, door};

  JointEdge j;
  j.parent = 0;
  j.child = 1;
  j.joint.type = JointType::kRevolute;
  j.joint.revolute.center = Vector3d(0.0325, 0.0, 0.015);
  j.joint.revolute.axis = Vector3d(0.12, -0.08, 0.99).normalized();
  j.joint.revolute.fixed_offset =
      RigidTransform(Quaterniond::Identity(), Vector3d(0.04, 0.0, 0.035));
  j.joint.configs = {0.1, 0.1 + 70.0 * M_PI / 180.0};
  spec.joints = {j};
  return spec;
}

ObjectSpec make_two_part_prismatic(std::uint64_t seed) {
  ObjectSpec spec;
  spec.seed = seed;
  PartSpec body;
  body.gaussian_count = 700;
  body.extent = Vector3d(0.025, 0.025, 0.01875);
  body.base_color = Vector3d(0.3, 0.65, 0.35);
  PartSpec drawer;
  drawer.gaussian_count = 700;
  drawer.extent = Vector3d(0.01875, 0.015, 0.00625);
  drawer.base_color = Vector3d(0.85, 0.75, 0.3);
  spec.parts = {body, drawer};

  JointEdge j;
  j.parent = 0;
  j.child = 1;
  j.joint.type = JointType::kPrismatic;
  j.joint.prismatic.axis = Vector3d(0.94, 0.1, 0.2).normalized();
  j.joint.prismatic.fixed_offset =
      RigidTransform(Quaterniond::Identity(), Vector3d(0.0125, 0.0, 0.035));
  j.joint.configs = {0.0, 0.06};
  spec.joints = {j};
  return spec;
}

ObjectSpec make_serial_chain(int num_parts, std::uint64_t seed) {
  if (num_parts < 2) throw std::invalid_argument("make_serial_chain: need >= 2 parts");
  ObjectSpec spec;
  spec.seed = seed;
  for (int p = 0; p < num_parts; ++p) {
    PartSpec ps;
    ps.gaussian_count = 350;
    ps.extent = Vector3d(0.05, 0.0225, 0.0225);
    ps.base_color = Vector3d(0.25 + 0.5 * ((p * 3) % 7) / 6.0,
                             0.25 + 0.5 * ((p * 5 + 2) % 7) / 6.0,
                             0.25 + 0.5 * ((p * 2 + 4) % 7) / 6.0);
    spec.parts.push_back(ps);
  }
  for (int i = 1; i < num_parts; ++i) {
    JointEdge j;
    j.parent = i - 1;
    j.child = i;
    j.joint.type = JointType::kRevolute;
    j.joint.revolute.center = Vector3d(0.055, 0.0, 0.0);
    // Nearly common axis with alternating-sign swings: the world-frame
    // motion of distal links partially cancels, staying inside the ICP
    // seeding basin even for long chains.
    j.joint.revolute.axis =
        Vector3d(0.1, (i % 2 ? 0.06 : -0.06), 1.0).normalized();
    j.joint.revolute.fixed_offset =
        RigidTransform(Quaterniond::Identity(), Vector3d(0.11, 0.0, 0.0));
    const double delta = (i % 2 ? 1.0 : -1.0) * (10.0 + 1.5 * i) * M_PI / 180.0;
    j.joint.configs = {0.05 * (i % 3), 0.05 * (i % 3) + delta};
    spec.joints.push_back(j);
  }
  return spec;
}

void save_spec(const std::string& path, const ObjectSpec& spec) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "object-spec v1\nseed " << spec.seed << "\nparts " << spec.parts.size() << '\n';
  char buf[256];
  for (const auto& p : spec.parts) {
    std::snprintf(buf, sizeof buf, "part %d %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  p.gaussian_count, p.extent.x(), p.extent.y(), p.extent.z(),
                  p.base_color.x(), p.base_color.y(), p.base_color.z());
    os << buf;
  }
  os << "joints " << spec.joints.size() << '\n';
  for (const auto& j : spec.joints) artic::write_joint_edge(os, j);
}

ObjectSpec load_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(is, line);
  if (line != "object-spec v1") throw std::runtime_error("not an object spec: " + path);
  ObjectSpec spec;
  size_t joints = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "seed") ls >> spec.seed;
    else if (tag == "parts") continue;
    else if (tag == "part") {
      PartSpec p;
      ls >> p.gaussian_count >> p.extent.x() >> p.extent.y() >> p.extent.z() >>
          p.base_color.x() >> p.base_color.y() >> p.base_color.z();
      if (!ls) throw std::runtime_error("object spec: bad part line");
      spec.parts.push_back(p);
    } else if (tag == "joints") ls >> joints;
    else if (tag == "edge") spec.joints.push_back(artic::read_joint_edge(is, line));
  }
  if (spec.joints.size() != joints) throw std::runtime_error("object spec: joint count mismatch");
  return spec;
}

}  // namespace artsplat::synth
