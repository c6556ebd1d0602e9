#include "artsplat/splat.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "artsplat/png_io.hpp"

namespace artsplat {

namespace fs = std::filesystem;

Matrix3d covariance(const Gaussian& g) {
  const Matrix3d r = g.orientation.normalized().toRotationMatrix();
  const Vector3d s = g.scale();
  return r * s.cwiseProduct(s).asDiagonal() * r.transpose();
}

std::vector<int> part_assignment(const SemanticSplat& splat) {
  std::vector<int> out(splat.gaussians.size(), 0);
  std::vector<int> counts(splat.num_parts + 1, 0);
  for (size_t i = 0; i < splat.gaussians.size(); ++i) {
    const VectorXd& s = splat.gaussians[i].semantic_logits;
    int best = 0;
    for (int k = 1; k < s.size(); ++k) {
      if (s(k) > s(best)) best = k;
    }
    out[i] = best;
    if (best <= splat.num_parts) ++counts[best];
  }
  for (int p = 1; p <= splat.num_parts; ++p) {
    if (counts[p] == 0) {
      std::cerr << "warning: part " << p << " has no assigned gaussians\n";
    }
  }
  return out;
}

std::vector<Gaussian> extract_part(const SemanticSplat& splat, int part) {
  const auto assign = part_assignment(splat);
  std::vector<Gaussian> out;
  for (size_t i = 0; i < splat.gaussians.size(); ++i) {
    if (assign[i] == part) out.push_back(splat.gaussians[i]);
  }
  return out;
}

bool Observation::has_labels() const {
  for (auto v : labels.data) {
    if (v != kUnlabeled) return true;
  }
  return false;
}

namespace {

constexpr char kMagic[16] = {'A', 'R', 'T', 'S', 'P', 'L', 'A', 'T',
                             'v', '1', 0,   0,   0,   0,   0,   0};

void put_f32(std::ostream& os, double v) {
  const float f = static_cast<float>(v);
  char buf[4];
  std::memcpy(buf, &f, 4);  // little-endian host assumed
  os.write(buf, 4);
}

float get_f32(std::istream& is) {
  char buf[4];
  is.read(buf, 4);
  float f;
  std::memcpy(&f, buf, 4);
  return f;
}

}  // namespace

void save_splat(const std::string& path, const SemanticSplat& splat) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  os << "gaussians " << splat.gaussians.size() << "\n"
     << "parts " << splat.num_parts << "\n"
     << "fields mean log_scale quat_wxyz opacity_logit color semantics\n\n";
  for (const auto& g : splat.gaussians) {
    if (g.semantic_logits.size() != splat.num_parts + 1) {
      throw std::runtime_error("save_splat: semantic vector length mismatch");
    }
    for (int k = 0; k < 3; ++k) put_f32(os, g.mean(k));
    for (int k = 0; k < 3; ++k) put_f32(os, g.log_scale(k));
    put_f32(os, g.orientation.w());
    put_f32(os, g.orientation.x());
    put_f32(os, g.orientation.y());
    put_f32(os, g.orientation.z());
    put_f32(os, g.opacity_logit);
    for (int k = 0; k < 3; ++k) put_f32(os, g.color(k));
    for (int k = 0; k < g.semantic_logits.size(); ++k) put_f32(os, g.semantic_logits(k));
  }
  if (!os) throw std::runtime_error("write failure: " + path);
}

SemanticSplat load_splat(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  char magic[16];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("bad splat magic: " + path);
  }
  // Header is text lines up to a blank line.
  size_t num_gaussians = 0;
  int num_parts = -1;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "gaussians") ls >> num_gaussians;
    else if (key == "parts") ls >> num_parts;
    // unknown keys (e.g. fields) are informational
  }
  if (num_parts < 0) throw std::runtime_error("splat header missing parts: " + path);
  SemanticSplat splat;
  splat.num_parts = num_parts;
  splat.gaussians.resize(num_gaussians);
  const int sem_len = num_parts + 1;
  for (auto& g : splat.gaussians) {
    for (int k = 0; k < 3; ++k) g.mean(k) = get_f32(is);
    for (int k = 0; k < 3; ++k) g.log_scale(k) = get_f32(is);
    const double w = get_f32(is), x = get_f32(is), y = get_f32(is), z = get_f32(is);
    g.orientation = Quaterniond(w, x, y, z);
    g.opacity_logit = get_f32(is);
    for (int k = 0; k < 3; ++k) g.color(k) = get_f32(is);
    g.semantic_logits.resize(sem_len);
    for (int k = 0; k < sem_len; ++k) g.semantic_logits(k) = get_f32(is);
    if (!is) throw std::runtime_error("truncated splat file: " + path);
  }
  return splat;
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_dataset(const std::string& dir, const std::string& manifest_name,
                  const SceneDataset& dataset) {
  fs::create_directories(dir);
  std::ofstream os(fs::path(dir) / manifest_name);
  if (!os) throw std::runtime_error("cannot write manifest in " + dir);
  os << "scene " << dataset.time << "\n";
  os << "parts " << dataset.num_parts << "\n";
  for (size_t i = 0; i < dataset.observations.size(); ++i) {
    const auto& obs = dataset.observations[i];
    char rgb_name[64], label_name[64];
    std::snprintf(rgb_name, sizeof(rgb_name), "rgb_t%d_%04zu.png", dataset.time, i);
    std::snprintf(label_name, sizeof(label_name), "label_t%d_%04zu.png", dataset.time, i);
    os << "view " << fmt_double(obs.camera.fx) << " " << fmt_double(obs.camera.fy)
       << " " << fmt_double(obs.camera.cx) << " " << fmt_double(obs.camera.cy)
       << " " << obs.camera.width << " " << obs.camera.height << "\n";
    os << "pose";
    const auto m = obs.camera.pose.matrix();
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) os << " " << fmt_double(m(r, c));
    }
    os << "\n";
    write_png_rgb((fs::path(dir) / rgb_name).string(), obs.rgb);
    os << "rgb " << rgb_name << "\n";
    if (obs.has_labels()) {
      write_png_gray((fs::path(dir) / label_name).string(), obs.labels);
      os << "labels " << label_name << "\n";
    } else {
      os << "labels null\n";
    }
  }
}

SceneDataset load_dataset(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("missing manifest: " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  SceneDataset ds;
  ds.num_parts = -1;
  std::string line;
  Observation obs;
  bool in_view = false;
  auto flush_view = [&]() {
    if (!in_view) return;
    ds.observations.push_back(std::move(obs));
    obs = Observation{};
    in_view = false;
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "scene") {
      ls >> ds.time;
    } else if (key == "parts") {
      ls >> ds.num_parts;
    } else if (key == "view") {
      flush_view();
      in_view = true;
      ls >> obs.camera.fx >> obs.camera.fy >> obs.camera.cx >> obs.camera.cy >>
          obs.camera.width >> obs.camera.height;
      if (!ls) throw std::runtime_error("malformed view line in " + manifest_path);
    } else if (key == "pose") {
      Eigen::Matrix4d m;
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) ls >> m(r, c);
      }
      if (!ls) throw std::runtime_error("malformed pose line in " + manifest_path);
      obs.camera.pose = geom::from_matrix(m);
    } else if (key == "rgb") {
      std::string name;
      ls >> name;
      const fs::path p = base / name;
      if (!fs::exists(p)) throw std::runtime_error("missing rgb file: " + p.string());
      obs.rgb = read_png_rgb(p.string());
    } else if (key == "labels") {
      std::string name;
      ls >> name;
      if (name == "null") {
        obs.labels = LabelImage(obs.rgb.height, obs.rgb.width, kUnlabeled);
      } else {
        const fs::path p = base / name;
        if (!fs::exists(p)) throw std::runtime_error("missing label file: " + p.string());
        obs.labels = read_png_gray(p.string());
      }
    }
  }
  flush_view();
  if (ds.num_parts < 0) throw std::runtime_error("manifest missing parts line: " + manifest_path);

  // Validation: shared dimensions, labels in range.
  for (const auto& o : ds.observations) {
    if (o.rgb.height != ds.observations[0].rgb.height ||
        o.rgb.width != ds.observations[0].rgb.width) {
      throw std::runtime_error("image dimension mismatch in " + manifest_path);
    }
    if (o.labels.height != o.rgb.height || o.labels.width != o.rgb.width) {
      throw std::runtime_error("label dimension mismatch in " + manifest_path);
    }
    if (o.rgb.height != o.camera.height || o.rgb.width != o.camera.width) {
      throw std::runtime_error("camera/image dimension mismatch in " + manifest_path);
    }
    for (auto v : o.labels.data) {
      if (v != kUnlabeled && v > ds.num_parts) {
        throw std::runtime_error("label value out of range in " + manifest_path);
      }
    }
  }
  return ds;
}

}  // namespace artsplat
