#include "artsplat/artic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include "artsplat/adam.hpp"

namespace artsplat::artic {

using Eigen::Matrix3d;
using Eigen::Quaterniond;
using Eigen::VectorXd;
using geom::EulerPose;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector3d safe_unit(const Vector3d& v, const Vector3d& fallback) {
  const double n = v.norm();
  return n > 1e-12 ? Vector3d(v / n) : fallback;
}

}  // namespace

RigidTransform revolute_transform(const RevoluteJoint& j, double angle) {
  const Matrix3d r = geom::axis_angle_rotation(j.axis, angle);
  const RigidTransform pivot(Quaterniond(r), j.center - r * j.center);
  return geom::compose(pivot, j.fixed_offset);
}

RigidTransform prismatic_transform(const PrismaticJoint& j, double displacement) {
  RigidTransform out = j.fixed_offset;
  out.translation += safe_unit(j.axis, Vector3d::UnitX()) * displacement;
  return out;
}

namespace {

// Flat parameter layouts for finite-difference fitting.
// revolute:  c(3) a(3) r_t(3) r_euler(3) v(T)   -> 12 + T
// prismatic: a(3) c_t(3) c_euler(3) v(T)        ->  9 + T

VectorXd pack_revolute(const RevoluteJoint& j, const std::vector<double>& v) {
  VectorXd p(12 + v.size());
  p.segment<3>(0) = j.center;
  p.segment<3>(3) = j.axis;
  p.segment<3>(6) = j.fixed_offset.translation;
  p.segment<3>(9) = geom::euler_angles(j.fixed_offset.rotation_matrix());
  for (size_t t = 0; t < v.size(); ++t) p(12 + t) = v[t];
  return p;
}

JointCandidate unpack_revolute(const VectorXd& p, int times) {
  JointCandidate c;
  c.type = JointType::kRevolute;
  c.revolute.center = p.segment<3>(0);
  c.revolute.axis = safe_unit(p.segment<3>(3), Vector3d::UnitZ());
  EulerPose ep;
  ep.translation = p.segment<3>(6);
  ep.angles = p.segment<3>(9);
  c.revolute.fixed_offset = geom::euler_to_transform(ep);
  for (int t = 0; t < times; ++t) c.configs.push_back(p(12 + t));
  return c;
}

VectorXd pack_prismatic(const PrismaticJoint& j, const std::vector<double>& v) {
  VectorXd p(9 + v.size());
  p.segment<3>(0) = j.axis;
  p.segment<3>(3) = j.fixed_offset.translation;
  p.segment<3>(6) = geom::euler_angles(j.fixed_offset.rotation_matrix());
  for (size_t t = 0; t < v.size(); ++t) p(9 + t) = v[t];
  return p;
}

JointCandidate unpack_prismatic(const VectorXd& p, int times) {
  JointCandidate c;
  c.type = JointType::kPrismatic;
  c.prismatic.axis = safe_unit(p.segment<3>(0), Vector3d::UnitX());
  EulerPose ep;
  ep.translation = p.segment<3>(3);
  ep.angles = p.segment<3>(6);
  c.prismatic.fixed_offset = geom::euler_to_transform(ep);
  for (int t = 0; t < times; ++t) c.configs.push_back(p(9 + t));
  return c;
}

double add_score(const JointCandidate& c, const std::vector<Vector3d>& points,
                 const std::vector<RigidTransform>& rel) {
  double total = 0.0;
  for (size_t t = 0; t < rel.size(); ++t) {
    const RigidTransform x = c.transform(c.configs[t]);
    double sum = 0.0;
    for (const auto& p : points) sum += (x * p - rel[t] * p).norm();
    total += sum / double(points.size());
  }
  return total / double(rel.size());
}

JointCandidate fit_candidate(JointType type, VectorXd params, int times,
                             const std::vector<Vector3d>& points,
                             const std::vector<RigidTransform>& rel,
                             const JointFitConfig& cfg) {
  auto unpack = [&](const VectorXd& p) {
    return type == JointType::kRevolute ? unpack_revolute(p, times)
                                        : unpack_prismatic(p, times);
  };
  auto eval = [&](const VectorXd& p) { return add_score(unpack(p), points, rel); };

  VectorXd best = params;
  double best_score = eval(params);
  if (!std::isfinite(best_score)) {
    JointCandidate c = unpack(params);
    c.score = kInf;
    return c;
  }
  if (best_score > 1e-9) {
    Adam opt(int(params.size()), cfg.lr);
    VectorXd grad(params.size());
    for (int it = 0; it < cfg.iterations; ++it) {
      for (int k = 0; k < params.size(); ++k) {
        const double orig = params(k);
        params(k) = orig + cfg.fd_step;
        const double up = eval(params);
        params(k) = orig - cfg.fd_step;
        const double down = eval(params);
        params(k) = orig;
        grad(k) = (up - down) / (2.0 * cfg.fd_step);
      }
      if (!grad.allFinite()) break;
      opt.step(params, grad);
      const double score = eval(params);
      if (std::isfinite(score) && score < best_score) {
        best_score = score;
        best = params;
      }
    }
  }
  JointCandidate c = unpack(best);
  c.score = std::isfinite(best_score) ? best_score : kInf;
  return c;
}

}  // namespace

PairFit fit_joint_pair(const std::vector<Vector3d>& child_means,
                       const std::vector<RigidTransform>& child_poses,
                       const std::vector<RigidTransform>& parent_poses,
                       const JointFitConfig& cfg) {
  if (child_means.empty()) throw std::invalid_argument("fit_joint_pair: no means");
  if (child_poses.size() != parent_poses.size() || child_poses.empty()) {
    throw std::invalid_argument("fit_joint_pair: pose count mismatch");
  }
  const int times = int(child_poses.size());

  // Child pose expressed in the parent frame, per time.
  std::vector<RigidTransform> rel;
  for (int t = 0; t < times; ++t) {
    rel.push_back(geom::compose(geom::inverse(parent_poses[t]), child_poses[t]));
  }

  // Deterministic stride subsample of the means.
  std::vector<Vector3d> points;
  const size_t stride = std::max<size_t>(1, child_means.size() / size_t(cfg.max_points));
  for (size_t i = 0; i < child_means.size() && points.size() < size_t(cfg.max_points);
       i += stride) {
    points.push_back(child_means[i]);
  }

  // Closed-form seeds from the t=0 -> t relative motion. With v_0 = 0
  // the fixed offset must equal rel[0] for both joint types.
  const Matrix3d r0 = rel[0].rotation_matrix();
  const Vector3d t0 = rel[0].translation;

  RevoluteJoint rev;
  rev.fixed_offset = rel[0];
  std::vector<double> rev_v(times, 0.0);
  PrismaticJoint pri;
  pri.fixed_offset = rel[0];
  std::vector<double> pri_v(times, 0.0);

  Vector3d axis = Vector3d::UnitZ();
  for (int t = 1; t < times; ++t) {
    const Matrix3d r_rel = rel[t].rotation_matrix() * r0.transpose();
    const Eigen::AngleAxisd aa(r_rel);
    if (std::abs(aa.angle()) > 1e-8 && t == 1) axis = aa.axis();
    rev_v[t] = aa.axis().dot(axis) >= 0.0 ? aa.angle() : -aa.angle();
  }
  rev.axis = axis;
  {
    // Center from (I - R_rel) c = t_rel - R_rel t_0, stacked over times;
    // minimum-norm solution pins the free component along the axis.
    Eigen::MatrixXd lhs(3 * (times - 1), 3);
    VectorXd rhs(3 * (times - 1));
    for (int t = 1; t < times; ++t) {
      const Matrix3d r_rel = rel[t].rotation_matrix() * r0.transpose();
      lhs.middleRows<3>(3 * (t - 1)) = Matrix3d::Identity() - r_rel;
      rhs.segment<3>(3 * (t - 1)) = rel[t].translation - r_rel * t0;
    }
    if (times > 1) {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(lhs, Eigen::ComputeThinU | Eigen::ComputeThinV);
      svd.setThreshold(1e-8);
      rev.center = svd.solve(rhs);
    }
  }

  const Vector3d slide = times > 1 ? Vector3d(rel[1].translation - t0) : Vector3d::Zero();
  pri.axis = safe_unit(slide, Vector3d::UnitX());
  for (int t = 1; t < times; ++t) pri_v[t] = (rel[t].translation - t0).dot(pri.axis);

  PairFit out;
  out.revolute = fit_candidate(JointType::kRevolute, pack_revolute(rev, rev_v), times,
                               points, rel, cfg);
  out.prismatic = fit_candidate(JointType::kPrismatic, pack_prismatic(pri, pri_v), times,
                                points, rel, cfg);
  return out;
}

namespace {

double config_span(const JointCandidate& c) {
  double span = 0.0;
  for (double v : c.configs) span = std::max(span, std::abs(v - c.configs[0]));
  return span;
}

}  // namespace

JointGraph build_joint_graph(int num_parts, const std::vector<PairResult>& pairs,
                             double eps) {
  JointGraph g;
  g.num_parts = num_parts;
  std::map<std::pair<int, int>, JointEdge> best;
  std::map<std::pair<int, int>, bool> both_static;

  for (const auto& pr : pairs) {
    const auto key = std::minmax(pr.parent, pr.child);
    for (const JointCandidate* cand : {&pr.fit.revolute, &pr.fit.prismatic}) {
      if (!(cand->score <= eps)) continue;
      auto it = best.find(key);
      if (it == best.end() || cand->score < it->second.joint.score) {
        JointEdge e;
        e.parent = pr.parent;
        e.child = pr.child;
        e.joint = *cand;
        best[key] = e;
      }
    }
    // Degenerate motion: both hypotheses fit and neither sees the
    // configuration move between times.
    const bool rev_ok = pr.fit.revolute.score <= eps;
    const bool pri_ok = pr.fit.prismatic.score <= eps;
    if (rev_ok && pri_ok && config_span(pr.fit.revolute) < 0.5 * M_PI / 180.0 &&
        config_span(pr.fit.prismatic) < 1e-3) {
      both_static[key] = true;
    }
  }

  for (auto& [key, edge] : best) {
    edge.fixed = both_static.count(key) > 0;
    g.edges.push_back(edge);
  }
  return g;
}

JointEdge reverse_edge(const JointEdge& e) {
  JointEdge out = e;
  std::swap(out.parent, out.child);
  if (e.joint.type == JointType::kRevolute) {
    const RigidTransform inv_r = geom::inverse(e.joint.revolute.fixed_offset);
    out.joint.revolute.center = inv_r * e.joint.revolute.center;
    out.joint.revolute.axis = inv_r.rotation_matrix() * e.joint.revolute.axis;
    out.joint.revolute.fixed_offset = inv_r;
    for (auto& v : out.joint.configs) v = -v;
  } else {
    const RigidTransform inv_c = geom::inverse(e.joint.prismatic.fixed_offset);
    out.joint.prismatic.axis = -(inv_c.rotation_matrix() * e.joint.prismatic.axis);
    out.joint.prismatic.fixed_offset = inv_c;
  }
  return out;
}

KinematicTree build_tree(const JointGraph& g, int root) {
  if (root < 0 || root >= g.num_parts) {
    throw std::invalid_argument("build_tree: root part id out of range");
  }
  KinematicTree tree;
  tree.root = root;
  tree.num_parts = g.num_parts;

  struct Neighbor {
    int other;
    size_t edge;
    double score;
  };
  std::vector<std::vector<Neighbor>> adj(g.num_parts);
  for (size_t i = 0; i < g.edges.size(); ++i) {
    const auto& e = g.edges[i];
    adj[e.parent].push_back({e.child, i, e.joint.score});
    adj[e.child].push_back({e.parent, i, e.joint.score});
  }
  for (auto& nb : adj) {
    std::sort(nb.begin(), nb.end(), [](const Neighbor& a, const Neighbor& b) {
      if (a.score != b.score) return a.score < b.score;
      return a.other < b.other;
    });
  }

  std::vector<bool> visited(g.num_parts, false);
  visited[root] = true;
  auto dfs = [&](auto&& self, int node) -> void {
    for (const auto& nb : adj[node]) {
      if (visited[nb.other]) continue;  // loop prevention: drop the edge
      visited[nb.other] = true;
      const auto& e = g.edges[nb.edge];
      tree.edges.push_back(e.parent == node ? e : reverse_edge(e));
      self(self, nb.other);
    }
  };
  dfs(dfs, root);
  for (int p = 0; p < g.num_parts; ++p) {
    if (!visited[p]) tree.unreachable.push_back(p);
  }
  if (!tree.unreachable.empty()) {
    std::cerr << "warning: parts unreachable from root " << root << ":";
    for (int p : tree.unreachable) std::cerr << ' ' << p;
    std::cerr << '\n';
  }
  return tree;
}

int tree_depth(const KinematicTree& tree) {
  std::vector<int> depth(tree.num_parts, 0);
  depth[tree.root] = 1;
  int max_depth = 1;
  for (const auto& e : tree.edges) {
    depth[e.child] = depth[e.parent] + 1;
    max_depth = std::max(max_depth, depth[e.child]);
  }
  return max_depth;
}

std::vector<RigidTransform> forward_kinematics(const KinematicTree& tree,
                                               const std::vector<double>& config,
                                               const RigidTransform& base) {
  if (config.size() != tree.edges.size()) {
    throw std::invalid_argument("forward_kinematics: config length != edge count");
  }
  std::vector<RigidTransform> poses(tree.num_parts, RigidTransform::identity());
  poses[tree.root] = base;
  // Edges are in DFS order, so a parent's pose is final before any of
  // its children are visited.
  for (size_t i = 0; i < tree.edges.size(); ++i) {
    const auto& e = tree.edges[i];
    poses[e.child] = geom::compose(poses[e.parent], e.joint.transform(config[i]));
  }
  return poses;
}

RenderOutput render_configuration(const std::vector<std::vector<Gaussian>>& part_splats,
                                  const KinematicTree& tree,
                                  const std::vector<double>& config,
                                  const RigidTransform& base, const Camera& cam) {
  if (int(part_splats.size()) != tree.num_parts) {
    throw std::invalid_argument("render_configuration: splat count != part count");
  }
  const auto poses = forward_kinematics(tree, config, base);
  std::vector<PartInput> inputs;
  for (int p = 0; p < tree.num_parts; ++p) inputs.push_back({&part_splats[p], poses[p]});
  return rasterize(inputs, cam, tree.num_parts, nullptr);
}

void write_joint_edge(std::ostream& os, const JointEdge& e) {
  char buf[512];
  os << "edge " << e.parent << ' ' << e.child << ' '
     << (e.joint.type == JointType::kRevolute ? "revolute" : "prismatic") << ' '
     << (e.fixed ? 1 : 0);
  std::snprintf(buf, sizeof buf, " %.17g\n", e.joint.score);
  os << buf;
  auto vec = [&](const char* tag, const Vector3d& v) {
    std::snprintf(buf, sizeof buf, "%s %.17g %.17g %.17g\n", tag, v.x(), v.y(), v.z());
    os << buf;
  };
  const RigidTransform& off = e.joint.type == JointType::kRevolute
                                  ? e.joint.revolute.fixed_offset
                                  : e.joint.prismatic.fixed_offset;
  if (e.joint.type == JointType::kRevolute) {
    vec("center", e.joint.revolute.center);
    vec("axis", e.joint.revolute.axis);
  } else {
    vec("axis", e.joint.prismatic.axis);
  }
  std::snprintf(buf, sizeof buf, "offset %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                off.translation.x(), off.translation.y(), off.translation.z(),
                off.rotation.w(), off.rotation.x(), off.rotation.y(), off.rotation.z());
  os << buf;
  os << "configs";
  for (double v : e.joint.configs) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    os << buf;
  }
  os << '\n';
}

JointEdge read_joint_edge(std::istream& is, const std::string& header) {
  JointEdge e;
  std::istringstream hs(header);
  std::string tag, type;
  int fixed = 0;
  if (!(hs >> tag >> e.parent >> e.child >> type >> fixed >> e.joint.score) ||
      tag != "edge" || (type != "revolute" && type != "prismatic")) {
    throw std::runtime_error("joint file: bad edge header: " + header);
  }
  e.fixed = fixed != 0;
  e.joint.type = type == "revolute" ? JointType::kRevolute : JointType::kPrismatic;

  auto expect = [&](const std::string& want) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("joint file: truncated");
    std::istringstream ls(line);
    std::string got;
    ls >> got;
    if (got != want) throw std::runtime_error("joint file: expected " + want);
    return ls;
  };
  if (e.joint.type == JointType::kRevolute) {
    {
      auto ls = expect("center");
      ls >> e.joint.revolute.center.x() >> e.joint.revolute.center.y() >>
          e.joint.revolute.center.z();
    }
    auto ls = expect("axis");
    ls >> e.joint.revolute.axis.x() >> e.joint.revolute.axis.y() >> e.joint.revolute.axis.z();
  } else {
    auto ls = expect("axis");
    ls >> e.joint.prismatic.axis.x() >> e.joint.prismatic.axis.y() >>
        e.joint.prismatic.axis.z();
  }
  {
    auto ls = expect("offset");
    Vector3d t;
    double w, x, y, z;
    ls >> t.x() >> t.y() >> t.z() >> w >> x >> y >> z;
    if (!ls) throw std::runtime_error("joint file: bad offset line");
    const RigidTransform off(Quaterniond(w, x, y, z), t);
    if (e.joint.type == JointType::kRevolute) {
      e.joint.revolute.fixed_offset = off;
    } else {
      e.joint.prismatic.fixed_offset = off;
    }
  }
  {
    auto ls = expect("configs");
    double v;
    while (ls >> v) e.joint.configs.push_back(v);
  }
  return e;
}

void save_graph(const std::string& path, const JointGraph& g) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "artic-graph v1\nparts " << g.num_parts << "\nedges " << g.edges.size() << '\n';
  for (const auto& e : g.edges) write_joint_edge(os, e);
}

JointGraph load_graph(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(is, line);
  if (line != "artic-graph v1") throw std::runtime_error("not a joint graph file: " + path);
  JointGraph g;
  size_t edges = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "parts") ls >> g.num_parts;
    else if (tag == "edges") ls >> edges;
    else if (tag == "edge") g.edges.push_back(read_joint_edge(is, line));
  }
  if (g.edges.size() != edges) throw std::runtime_error("joint graph: edge count mismatch");
  return g;
}

void save_tree(const std::string& path, const KinematicTree& tree) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "artic-tree v1\nparts " << tree.num_parts << "\nroot " << tree.root << '\n';
  os << "unreachable";
  for (int p : tree.unreachable) os << ' ' << p;
  os << '\n';
  os << "edges " << tree.edges.size() << '\n';
  for (const auto& e : tree.edges) write_joint_edge(os, e);
}

KinematicTree load_tree(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(is, line);
  if (line != "artic-tree v1") throw std::runtime_error("not a tree file: " + path);
  KinematicTree tree;
  size_t edges = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "parts") ls >> tree.num_parts;
    else if (tag == "root") ls >> tree.root;
    else if (tag == "unreachable") {
      int p;
      while (ls >> p) tree.unreachable.push_back(p);
    } else if (tag == "edges") ls >> edges;
    else if (tag == "edge") tree.edges.push_back(read_joint_edge(is, line));
  }
  if (tree.edges.size() != edges) throw std::runtime_error("tree: edge count mismatch");
  return tree;
}

}  // namespace artsplat::artic
