#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "artsplat/artic.hpp"
#include "artsplat/splat.hpp"

namespace artsplat::synth {

using artic::JointEdge;
using geom::RigidTransform;

struct PartSpec {
  int gaussian_count = 200;
  Vector3d extent = Vector3d(0.15, 0.1, 0.1);  // half extents, meters
  Vector3d base_color = Vector3d(0.7, 0.7, 0.7);
};

// Planted object: parts plus a tree of joints. Each joint's configs
// carry the planted per-time values (v0, v1).
struct ObjectSpec {
  std::vector<PartSpec> parts;
  std::vector<JointEdge> joints;
  std::uint64_t seed = 0;
};

struct GroundTruth {
  ObjectSpec spec;
  int num_parts = 0;
  // Part-local Gaussians with planted one-hot semantics (class part+1).
  std::vector<std::vector<Gaussian>> parts;
  // poses[time][part], from FK over the planted joints.
  std::vector<std::vector<RigidTransform>> poses;
};

// Deterministic for a fixed seed. Rejects joint sets that do not form a
// tree over the parts and per-joint config deltas below 0.1 rad / 0.05 m
// (the two configurations must be distinguishable).
GroundTruth generate_object(const ObjectSpec& spec);

// Renders `views` spherical cameras per time against the planted object.
// The first ceil(label_fraction * views) observations carry label
// images (background where accumulation < 0.5, else the part whose
// Gaussians contributed the most); the rest are all-255.
std::pair<SceneDataset, SceneDataset> render_dataset(const GroundTruth& gt, int views,
                                                     int resolution,
                                                     double label_fraction);

// Label image from a render of the planted splats, per the rule above.
LabelImage labels_from_render(const RenderOutput& out);

// Canned specs used by tests and the acceptance runs.
ObjectSpec make_two_part_revolute(std::uint64_t seed);
ObjectSpec make_two_part_prismatic(std::uint64_t seed);
ObjectSpec make_serial_chain(int num_parts, std::uint64_t seed);

void save_spec(const std::string& path, const ObjectSpec& spec);
ObjectSpec load_spec(const std::string& path);

}  // namespace artsplat::synth
