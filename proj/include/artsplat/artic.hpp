#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "artsplat/geom.hpp"
#include "artsplat/render.hpp"
#include "artsplat/splat.hpp"

namespace artsplat::artic {

using geom::RigidTransform;
using Eigen::Vector3d;

enum class JointType { kRevolute, kPrismatic };

// Single rotational DOF: rotation by `angle` about the line
// {center + t*axis}, composed with a fixed offset. 12 DOF total.
struct RevoluteJoint {
  Vector3d center = Vector3d::Zero();
  Vector3d axis = Vector3d::UnitZ();
  RigidTransform fixed_offset;
};

// Single translational DOF along a unit axis, after a fixed offset.
struct PrismaticJoint {
  RigidTransform fixed_offset;
  Vector3d axis = Vector3d::UnitX();
};

// Trans(center) o Rot(axis, angle) o Trans(-center) o fixed_offset, so
// every point on the axis line is fixed when fixed_offset is identity.
RigidTransform revolute_transform(const RevoluteJoint& j, double angle);
// Trans(axis * displacement) o fixed_offset.
RigidTransform prismatic_transform(const PrismaticJoint& j, double displacement);

// The closed-form seed inside fit_joint_pair is already exact for
// noise-free poses; the polish only needs small corrections, and the
// offset/config coupling makes the ADD valley flat, so a small step
// size keeps the polish from trading config accuracy for score.
struct JointFitConfig {
  int iterations = 600;
  double lr = 3e-4;
  double fd_step = 1e-6;   // central differences on the ADD score
  int max_points = 120;    // deterministic stride subsample of the means
};

// One fitted joint hypothesis: the joint maps the child part's local
// frame into the parent part's frame, with one configuration scalar per
// observation time. score is the ADD in meters (+inf when the fit blew
// up).
struct JointCandidate {
  JointType type = JointType::kRevolute;
  RevoluteJoint revolute;
  PrismaticJoint prismatic;
  std::vector<double> configs;
  double score = 0.0;

  RigidTransform transform(double v) const {
    return type == JointType::kRevolute ? revolute_transform(revolute, v)
                                        : prismatic_transform(prismatic, v);
  }
};

struct PairFit {
  JointCandidate revolute;
  JointCandidate prismatic;
};

// Fits both joint hypotheses for child part poses {child_poses[t]}
// relative to parent poses {parent_poses[t]}; child_means are the
// child's Gaussian means in its local frame. The ADD score at time t is
// the mean distance between the means mapped through the candidate
// joint at config v_t and through the estimated relative pose.
PairFit fit_joint_pair(const std::vector<Vector3d>& child_means,
                       const std::vector<RigidTransform>& child_poses,
                       const std::vector<RigidTransform>& parent_poses,
                       const JointFitConfig& cfg = {});

struct JointEdge {
  int parent = 0;
  int child = 0;
  JointCandidate joint;
  bool fixed = false;  // degenerate: no measurable motion between times
};

struct PairResult {
  int child = 0;
  int parent = 0;
  PairFit fit;
};

struct JointGraph {
  int num_parts = 0;
  std::vector<JointEdge> edges;  // at most one per unordered pair
};

// Same physical joint seen from the other part: the transform becomes
// its inverse at every configuration value.
JointEdge reverse_edge(const JointEdge& e);

// Keeps, per unordered pair, the best-scoring direction and type among
// the candidates with score <= eps. Near-zero motion in both accepted
// candidates flags the edge as fixed.
JointGraph build_joint_graph(int num_parts, const std::vector<PairResult>& pairs,
                             double eps);

struct KinematicTree {
  int root = 0;
  int num_parts = 0;
  std::vector<JointEdge> edges;  // DFS order, oriented parent -> child
  std::vector<int> unreachable;
};

// DFS spanning tree rooted at `root`; neighbors visited in (score, id)
// order, redundant edges dropped, edges traversed child-to-parent are
// re-expressed in parent -> child form. Warns about unreachable parts.
KinematicTree build_tree(const JointGraph& g, int root);

int tree_depth(const KinematicTree& tree);

// Root gets `base`; each child pose = parent pose o joint transform at
// its edge's config scalar. config is indexed by tree edge order.
std::vector<RigidTransform> forward_kinematics(const KinematicTree& tree,
                                               const std::vector<double>& config,
                                               const RigidTransform& base);

// FK poses applied to per-part canonical splats, then rasterized.
RenderOutput render_configuration(const std::vector<std::vector<Gaussian>>& part_splats,
                                  const KinematicTree& tree,
                                  const std::vector<double>& config,
                                  const RigidTransform& base, const Camera& cam);

// Single-edge text IO, shared by the graph/tree files and the synth
// object-spec format.
void write_joint_edge(std::ostream& os, const JointEdge& e);
JointEdge read_joint_edge(std::istream& is, const std::string& header);

void save_tree(const std::string& path, const KinematicTree& tree);
KinematicTree load_tree(const std::string& path);
void save_graph(const std::string& path, const JointGraph& g);
JointGraph load_graph(const std::string& path);

}  // namespace artsplat::artic
