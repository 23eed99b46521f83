#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>

#include "hyperfield/image.hpp"
#include "hyperfield/render.hpp"

namespace hyperfield {

using Vec3d = Vec3<double>;

struct FieldSample {
  double sigma = 0.0;
  Vec3d rgb = Vec3d::Zero();
};

struct TopologyEvent {
  double time = 0.0;
  int components = 1;  // of the sigma > 0.5 set
};

// Closed-form time-varying density/color field; the desk-scale stand-in for
// captured footage.
struct AnalyticScene {
  std::string name;
  std::function<FieldSample(const Vec3d&, double)> field;
  Vec3d bounds_min = Vec3d::Constant(-1.0);
  Vec3d bounds_max = Vec3d::Constant(1.0);
  std::vector<TopologyEvent> events;
};

namespace detail {

// density ramps from 0 at the surface to 1 over a 0.02-unit interior shell
inline double shell_density(double signed_dist_outside) {
  return clamp01(-signed_dist_outside / 0.02);
}

inline Vec3d band_color(const Vec3d& base, const Vec3d& p) {
  double m = 0.7 + 0.3 * std::sin(7.0 * p.x()) * std::sin(7.0 * p.y()) * std::sin(7.0 * p.z());
  return (base * m).cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace detail

inline std::vector<std::string> builtin_scene_names() {
  return {"sphere-split", "torus-open", "static-sphere"};
}

inline AnalyticScene builtin_scene(const std::string& name) {
  AnalyticScene s;
  s.name = name;
  if (name == "sphere-split") {
    // two spheres whose centers separate from coincident to distance 1.2;
    // connectivity changes once the separation exceeds the diameter
    constexpr double kRadius = 0.35;
    s.field = [](const Vec3d& p, double t) {
      double half = 0.6 * t;
      Vec3d c1(-half, 0, 0), c2(half, 0, 0);
      double d1 = (p - c1).norm() - kRadius;
      double d2 = (p - c2).norm() - kRadius;
      FieldSample out;
      double s1 = detail::shell_density(d1), s2 = detail::shell_density(d2);
      out.sigma = std::max(s1, s2);
      Vec3d base = d1 <= d2 ? Vec3d(0.90, 0.35, 0.25) : Vec3d(0.25, 0.45, 0.90);
      out.rgb = detail::band_color(base, p);
      return out;
    };
    s.bounds_min = Vec3d(-1.0, -0.4, -0.4);
    s.bounds_max = Vec3d(1.0, 0.4, 0.4);
    s.events = {{0.0, 1}, {1.0, 2}};
  } else if (name == "torus-open") {
    // ring in the xy-plane; an angular gap at the +x seam grows to 90 degrees
    constexpr double kMajor = 0.55, kMinor = 0.18;
    s.field = [](const Vec3d& p, double t) {
      double ring = std::sqrt(p.x() * p.x() + p.y() * p.y()) - kMajor;
      double sd = std::sqrt(ring * ring + p.z() * p.z()) - kMinor;
      double gap_half = 0.5 * (3.14159265358979323846 / 2.0) * t;
      double phi = std::atan2(p.y(), p.x());
      double gate = gap_half <= 0.0 ? 1.0 : clamp01((std::abs(phi) - gap_half) / 0.08);
      FieldSample out;
      out.sigma = detail::shell_density(sd) * gate;
      out.rgb = Vec3d(0.5 + 0.45 * std::cos(phi), 0.5 + 0.45 * std::cos(phi + 2.1),
                      0.5 + 0.45 * std::cos(phi + 4.2));
      return out;
    };
    s.bounds_min = Vec3d(-0.8, -0.8, -0.25);
    s.bounds_max = Vec3d(0.8, 0.8, 0.25);
    s.events = {{0.0, 1}, {1.0, 1}};
  } else if (name == "static-sphere") {
    s.field = [](const Vec3d& p, double) {
      FieldSample out;
      out.sigma = detail::shell_density(p.norm() - 0.5);
      out.rgb = (Vec3d::Constant(0.5) + 0.5 * p).cwiseMax(0.0).cwiseMin(1.0);
      return out;
    };
    s.bounds_min = Vec3d::Constant(-0.55);
    s.bounds_max = Vec3d::Constant(0.55);
    s.events = {{0.0, 1}, {1.0, 1}};
  } else {
    std::string known;
    for (const auto& n : builtin_scene_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown scene '" + name + "'; builtins: " + known);
  }
  return s;
}

// ---- cameras ----------------------------------------------------------------

// Cameras on a circular arc looking at the origin; z is up. The arc stays
// narrow enough that separating objects never line up along the view axis.
struct OrbitConfig {
  double radius = 3.0;
  double height = 0.5;
  double azimuth_start_deg = -40.0;
  double azimuth_end_deg = 40.0;
  double focal_factor = 1.4;  // focal = factor * width
};

inline Camera<double> orbit_camera(const OrbitConfig& orbit, double frac, int width,
                                   int height) {
  double az = (orbit.azimuth_start_deg +
               (orbit.azimuth_end_deg - orbit.azimuth_start_deg) * frac) *
              3.14159265358979323846 / 180.0;
  Camera<double> cam;
  cam.position = Vec3d(orbit.radius * std::sin(az), -orbit.radius * std::cos(az), orbit.height);
  Vec3d forward = (-cam.position).normalized();
  Vec3d right = forward.cross(Vec3d::UnitZ()).normalized();
  Vec3d down = forward.cross(right);
  cam.rotation.col(0) = right;
  cam.rotation.col(1) = down;
  cam.rotation.col(2) = forward;
  cam.focal = orbit.focal_factor * width;
  cam.principal = Vec2<double>(width / 2.0, height / 2.0);
  cam.width = width;
  cam.height = height;
  return cam;
}

// ---- ground-truth rendering ---------------------------------------------------

struct AnalyticRender {
  Image rgb;
  Image acc;  // single channel
};

// Midpoint quadrature along each ray; deterministic, converges cleanly on the
// smooth-shell fields above.
inline AnalyticRender render_analytic(const AnalyticScene& scene, const Camera<double>& cam,
                                      double t, int n_samples, double near, double far,
                                      const Vec3d& background, int threads = 0) {
  AnalyticRender out;
  out.rgb = Image::zeros(cam.width, cam.height, 3);
  out.acc = Image::zeros(cam.width, cam.height, 1);
  int64_t n_px = int64_t(cam.width) * cam.height;
  constexpr int64_t kChunk = 512;
  int64_t n_chunks = (n_px + kChunk - 1) / kChunk;
  parallel_chunks(int(n_chunks), threads, [&](int chunk) {
    Mat<double> colors(n_samples, 3);
    Vec<double> sigmas(n_samples);
    RaySamples<double> s = midpoint_samples(near, far, n_samples);
    int64_t begin = chunk * kChunk, end = std::min(n_px, begin + kChunk);
    for (int64_t p = begin; p < end; ++p) {
      Ray<double> ray =
          generate_ray<double>(cam, double(p % cam.width), double(p / cam.width), near, far);
      for (int k = 0; k < n_samples; ++k) {
        FieldSample fs = scene.field(ray.origin + s.ts(k) * ray.dir, t);
        sigmas(k) = fs.sigma;
        colors.row(k) = fs.rgb.transpose();
      }
      RenderOutput<double> ro = composite(colors, sigmas, s.deltas, s.ts, background);
      for (int c = 0; c < 3; ++c) out.rgb.data[size_t(p * 3 + c)] = float(ro.rgb(c));
      out.acc.data[size_t(p)] = float(ro.acc);
    }
  });
  return out;
}

// Connected components of {sigma > threshold} on a voxel grid (6-connected);
// used to verify the declared topology events.
inline int scene_components(const AnalyticScene& scene, double t, int res,
                            double threshold = 0.5) {
  std::vector<char> occ(size_t(res) * res * res, 0);
  Vec3d span = scene.bounds_max - scene.bounds_min;
  auto idx = [&](int x, int y, int z) { return (size_t(z) * res + y) * res + x; };
  for (int z = 0; z < res; ++z)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        Vec3d p = scene.bounds_min +
                  span.cwiseProduct(Vec3d((x + 0.5) / res, (y + 0.5) / res, (z + 0.5) / res));
        occ[idx(x, y, z)] = scene.field(p, t).sigma > threshold ? 1 : 0;
      }
  std::vector<char> seen(occ.size(), 0);
  std::vector<std::array<int, 3>> stack;
  int comps = 0;
  for (int z = 0; z < res; ++z)
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        if (!occ[idx(x, y, z)] || seen[idx(x, y, z)]) continue;
        ++comps;
        seen[idx(x, y, z)] = 1;
        stack.push_back({x, y, z});
        while (!stack.empty()) {
          auto [cx, cy, cz] = stack.back();
          stack.pop_back();
          const int dx[6] = {1, -1, 0, 0, 0, 0};
          const int dy[6] = {0, 0, 1, -1, 0, 0};
          const int dz[6] = {0, 0, 0, 0, 1, -1};
          for (int k = 0; k < 6; ++k) {
            int nx = cx + dx[k], ny = cy + dy[k], nz = cz + dz[k];
            if (nx < 0 || ny < 0 || nz < 0 || nx >= res || ny >= res || nz >= res) continue;
            if (occ[idx(nx, ny, nz)] && !seen[idx(nx, ny, nz)]) {
              seen[idx(nx, ny, nz)] = 1;
              stack.push_back({nx, ny, nz});
            }
          }
        }
      }
  return comps;
}

// ---- dataset on disk ---------------------------------------------------------

struct DatasetFrame {
  int index = 0;
  double time = 0.0;
  std::string split;  // "train" | "val"
  std::string image;  // relative path
  Camera<double> camera;
};

struct DatasetManifest {
  int version = 1;
  std::string scene;
  int width = 0, height = 0;
  double near = 0.0, far = 0.0;
  Vec3d bounds_min, bounds_max;
  std::vector<DatasetFrame> frames;
};

inline void to_json(nlohmann::json& j, const DatasetFrame& f) {
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[size_t(r * 3 + c)] = f.camera.rotation(r, c);
  j = nlohmann::json{
      {"index", f.index},
      {"time", f.time},
      {"split", f.split},
      {"image", f.image},
      {"camera",
       {{"rotation", rot},
        {"position", {f.camera.position.x(), f.camera.position.y(), f.camera.position.z()}},
        {"focal", f.camera.focal},
        {"principal", {f.camera.principal.x(), f.camera.principal.y()}},
        {"width", f.camera.width},
        {"height", f.camera.height}}}};
}

inline void from_json(const nlohmann::json& j, DatasetFrame& f) {
  f.index = j.at("index");
  f.time = j.at("time");
  f.split = j.at("split");
  f.image = j.at("image");
  const auto& cj = j.at("camera");
  std::vector<double> rot = cj.at("rotation");
  if (rot.size() != 9) throw IoError("manifest: camera rotation must have 9 entries");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) f.camera.rotation(r, c) = rot[size_t(r * 3 + c)];
  std::vector<double> pos = cj.at("position");
  f.camera.position = Vec3d(pos.at(0), pos.at(1), pos.at(2));
  f.camera.focal = cj.at("focal");
  std::vector<double> pp = cj.at("principal");
  f.camera.principal = Vec2<double>(pp.at(0), pp.at(1));
  f.camera.width = cj.at("width");
  f.camera.height = cj.at("height");
}

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{
      {"version", m.version},
      {"scene", m.scene},
      {"width", m.width},
      {"height", m.height},
      {"near", m.near},
      {"far", m.far},
      {"bounds",
       {{"min", {m.bounds_min.x(), m.bounds_min.y(), m.bounds_min.z()}},
        {"max", {m.bounds_max.x(), m.bounds_max.y(), m.bounds_max.z()}}}},
      {"frames", m.frames}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.version = j.at("version");
  m.scene = j.at("scene");
  m.width = j.at("width");
  m.height = j.at("height");
  m.near = j.at("near");
  m.far = j.at("far");
  std::vector<double> mn = j.at("bounds").at("min"), mx = j.at("bounds").at("max");
  m.bounds_min = Vec3d(mn.at(0), mn.at(1), mn.at(2));
  m.bounds_max = Vec3d(mx.at(0), mx.at(1), mx.at(2));
  m.frames = j.at("frames").get<std::vector<DatasetFrame>>();
}

struct GenerateOptions {
  int n_frames = 40;
  int width = 64, height = 64;
  int samples = 1024;
  OrbitConfig orbit;
  int holdout_stride = 8;  // every 8th frame held out ...
  int holdout_offset = 4;  // ... starting here, so every val frame has train neighbors
  Vec3d background = Vec3d::Ones();
  int threads = 0;
};

// Renders ground truth and writes images plus dataset.json under out_dir.
inline DatasetManifest generate_dataset(const AnalyticScene& scene, const GenerateOptions& opt,
                                        const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (opt.n_frames <= 0 || opt.width <= 0 || opt.height <= 0)
    throw ConfigError("generate_dataset: counts must be positive");
  fs::create_directories(fs::path(out_dir) / "rgb");

  DatasetManifest m;
  m.scene = scene.name;
  m.width = opt.width;
  m.height = opt.height;
  double reach = std::max(scene.bounds_max.norm(), scene.bounds_min.norm());
  m.near = opt.orbit.radius - reach - 0.25;
  m.far = opt.orbit.radius + reach + 0.25;
  m.bounds_min = scene.bounds_min;
  m.bounds_max = scene.bounds_max;

  for (int i = 0; i < opt.n_frames; ++i) {
    DatasetFrame f;
    f.index = i;
    f.time = opt.n_frames > 1 ? double(i) / double(opt.n_frames - 1) : 0.0;
    f.split = (opt.holdout_stride > 0 && i % opt.holdout_stride == opt.holdout_offset)
                  ? "val"
                  : "train";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "rgb/%05d.png", i);
    f.image = buf;
    f.camera = orbit_camera(opt.orbit, opt.n_frames > 1 ? double(i) / (opt.n_frames - 1) : 0.0,
                            opt.width, opt.height);
    AnalyticRender r = render_analytic(scene, f.camera, f.time, opt.samples, m.near, m.far,
                                       opt.background, opt.threads);
    write_png_rgb8((fs::path(out_dir) / f.image).string(), r.rgb);
    m.frames.push_back(std::move(f));
  }
  nlohmann::json j = m;
  std::ofstream os(fs::path(out_dir) / "dataset.json");
  if (!os) throw IoError("cannot write manifest in " + out_dir);
  os << j.dump(2) << "\n";
  return m;
}

struct Dataset {
  DatasetManifest manifest;
  std::vector<Image> images;       // indexed like frames
  std::vector<int> train_frames;   // frame indices
  std::vector<int> val_frames;
  std::vector<int> code_index;     // frame -> row in the code tables, -1 for val
  bool time_warnings = false;

  const DatasetFrame& frame(int i) const { return manifest.frames[size_t(i)]; }
  int n_frames() const { return int(manifest.frames.size()); }

  // For a held-out frame: bracketing train code rows and the relative time.
  struct CodeInterp {
    int code_i = 0, code_j = 0;
    double t = 0.0;
  };
  CodeInterp val_code_interp(int frame_idx) const {
    const double time = manifest.frames[size_t(frame_idx)].time;
    int before = -1, after = -1;
    for (int f : train_frames) {
      if (manifest.frames[size_t(f)].time <= time) before = f;
      if (manifest.frames[size_t(f)].time >= time && after < 0) after = f;
    }
    if (before < 0) before = after;
    if (after < 0) after = before;
    CodeInterp ci;
    ci.code_i = code_index[size_t(before)];
    ci.code_j = code_index[size_t(after)];
    double t0 = manifest.frames[size_t(before)].time, t1 = manifest.frames[size_t(after)].time;
    ci.t = t1 > t0 ? (time - t0) / (t1 - t0) : 0.0;
    return ci;
  }
};

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path manifest_path = fs::path(dir) / "dataset.json";
  std::ifstream is(manifest_path);
  if (!is) throw IoError("no dataset manifest at " + manifest_path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  ds.manifest = j.get<DatasetManifest>();
  if (ds.manifest.version != 1)
    throw IoError("unsupported dataset version " + std::to_string(ds.manifest.version));

  ds.code_index.assign(ds.manifest.frames.size(), -1);
  for (size_t i = 0; i < ds.manifest.frames.size(); ++i) {
    const auto& f = ds.manifest.frames[i];
    fs::path img_path = fs::path(dir) / f.image;
    if (!fs::exists(img_path)) throw IoError("dataset image missing: " + img_path.string());
    Image im = read_image(img_path.string());
    if (im.width != ds.manifest.width || im.height != ds.manifest.height)
      throw IoError("dataset image resolution mismatch: " + img_path.string());
    validate_camera(f.camera);
    if (f.time < 0.0 || f.time > 1.0) {
      std::cerr << "warning: frame " << f.index << " time " << f.time << " outside [0,1]\n";
      ds.time_warnings = true;
    }
    ds.images.push_back(std::move(im));
    if (f.split == "val") {
      ds.val_frames.push_back(int(i));
    } else {
      ds.code_index[i] = int(ds.train_frames.size());
      ds.train_frames.push_back(int(i));
    }
  }
  if (ds.train_frames.empty()) throw IoError("dataset has no training frames");
  return ds;
}

}  // namespace hyperfield
