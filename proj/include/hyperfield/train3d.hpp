#pragma once

#include <filesystem>
#include <fstream>
#include <set>

#include "hyperfield/adam.hpp"
#include "hyperfield/grad_check.hpp"
#include "hyperfield/metrics.hpp"
#include "hyperfield/scene.hpp"

namespace hyperfield {

struct TrainConfig {
  int64_t iterations = 20000;
  int batch_rays = 1024;       // paper used 6144; desk default
  int samples_per_ray = 128;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  WindowSchedule beta_schedule{1000, 10000, 1.0};
  WindowSchedule alpha_schedule{0, 1, 0.0};  // resolved against the model if max_value == 0
  bool elastic = false;
  double elastic_weight = 1e-3;
  uint64_t seed = 0;
  int threads = 0;       // 0 = auto
  int chunk_rays = 32;   // fixed work unit; thread count never changes results
  int64_t log_every = 100;
  int64_t checkpoint_every = 5000;
  int64_t val_every = 0;  // 0 = off
  int eval_samples = 0;   // 0 = samples_per_ray
  Vec3<double> background = Vec3<double>::Ones();
};

// Nerfies-style easing for the deformation field: 0.4% delay, 32% ramp of the
// run length, opening all warp encoding bands.
inline WindowSchedule default_alpha_schedule(int64_t iterations, int warp_bands) {
  WindowSchedule s;
  s.delay_steps = std::max<int64_t>(1, iterations / 250);
  s.ramp_steps = std::max<int64_t>(1, (iterations * 32) / 100);
  s.max_value = double(warp_bands);
  return s;
}

inline void to_json(nlohmann::json& j, const WindowSchedule& s) {
  j = nlohmann::json{{"delay", s.delay_steps}, {"ramp", s.ramp_steps}, {"max", s.max_value}};
}
inline void from_json(const nlohmann::json& j, WindowSchedule& s) {
  s.delay_steps = j.value("delay", s.delay_steps);
  s.ramp_steps = j.value("ramp", s.ramp_steps);
  s.max_value = j.value("max", s.max_value);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"iterations", c.iterations},
                     {"batch_rays", c.batch_rays},
                     {"samples_per_ray", c.samples_per_ray},
                     {"lr_start", c.lr_start},
                     {"lr_end", c.lr_end},
                     {"beta_schedule", c.beta_schedule},
                     {"alpha_schedule", c.alpha_schedule},
                     {"elastic", c.elastic},
                     {"elastic_weight", c.elastic_weight},
                     {"seed", c.seed},
                     {"threads", c.threads},
                     {"chunk_rays", c.chunk_rays},
                     {"log_every", c.log_every},
                     {"checkpoint_every", c.checkpoint_every},
                     {"val_every", c.val_every},
                     {"eval_samples", c.eval_samples},
                     {"background", {c.background.x(), c.background.y(), c.background.z()}}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.iterations = j.value("iterations", c.iterations);
  c.batch_rays = j.value("batch_rays", c.batch_rays);
  c.samples_per_ray = j.value("samples_per_ray", c.samples_per_ray);
  c.lr_start = j.value("lr_start", c.lr_start);
  c.lr_end = j.value("lr_end", c.lr_end);
  if (j.count("beta_schedule")) c.beta_schedule = j.at("beta_schedule");
  if (j.count("alpha_schedule")) c.alpha_schedule = j.at("alpha_schedule");
  c.elastic = j.value("elastic", c.elastic);
  c.elastic_weight = j.value("elastic_weight", c.elastic_weight);
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  c.chunk_rays = j.value("chunk_rays", c.chunk_rays);
  c.log_every = j.value("log_every", c.log_every);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.val_every = j.value("val_every", c.val_every);
  c.eval_samples = j.value("eval_samples", c.eval_samples);
  if (j.count("background")) {
    std::vector<double> bg = j.at("background");
    c.background = Vec3<double>(bg.at(0), bg.at(1), bg.at(2));
  }
}

// Mean squared error over all channels.
template <typename T>
T photometric_loss(const Mat<T>& predicted, const Mat<T>& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
    throw ContractError("photometric_loss: shape mismatch");
  return (predicted - target).array().square().mean();
}

template <typename T>
class Trainer3d {
 public:
  Trainer3d(const Dataset& dataset, ModelConfig model, TrainConfig train,
            std::string run_dir = "")
      : ds_(dataset), mc_(std::move(model)), tc_(std::move(train)), run_dir_(std::move(run_dir)) {
    mc_.n_frames = int(ds_.train_frames.size());
    if (tc_.alpha_schedule.max_value == 0.0)
      tc_.alpha_schedule = default_alpha_schedule(tc_.iterations, mc_.warp_cfg().enc.n_bands());
    init_field_params<T>(store_, mc_, tc_.seed);
    if (!run_dir_.empty()) {
      namespace fs = std::filesystem;
      fs::create_directories(fs::path(run_dir_) / "checkpoints");
      if (tc_.val_every > 0) fs::create_directories(fs::path(run_dir_) / "val");
    }
  }

  ParamStore<T>& store() { return store_; }
  const ModelConfig& model_config() const { return mc_; }
  const TrainConfig& train_config() const { return tc_; }
  int64_t step() const { return step_; }
  const std::vector<double>& loss_trace() const { return trace_; }

  double alpha_at(int64_t s) const { return schedule_value(s, tc_.alpha_schedule); }
  double beta_at(int64_t s) const { return schedule_value(s, tc_.beta_schedule); }

  // One optimization step; returns the batch loss.
  double train_step() {
    const int S = tc_.samples_per_ray;
    const int B = tc_.batch_rays;
    const T alpha = T(alpha_at(step_)), beta = T(beta_at(step_));
    const T lr = T(lr_schedule<double>(step_, tc_.iterations, tc_.lr_start, tc_.lr_end));

    // batch of (frame, pixel) rays, uniform over training pixels
    Rng batch_rng = Rng::stream(tc_.seed, {Rng::hash_str("batch"), uint64_t(step_)});
    struct RaySpec {
      int frame;
      int px;
    };
    std::vector<RaySpec> rays(size_t(B));
    for (int k = 0; k < B; ++k) {
      int frame = ds_.train_frames[batch_rng.uniform_index(uint32_t(ds_.train_frames.size()))];
      int px = int(batch_rng.uniform_index(uint32_t(ds_.manifest.width * ds_.manifest.height)));
      rays[size_t(k)] = {frame, px};
    }

    const int n_chunks = (B + tc_.chunk_rays - 1) / tc_.chunk_rays;
    std::vector<std::unique_ptr<Tape<T>>> tapes(size_t(n_chunks));
    std::vector<T> chunk_losses(size_t(n_chunks), T(0));
    const uint64_t sample_tag = Rng::hash_str("samples");
    const T near = T(ds_.manifest.near), far = T(ds_.manifest.far);
    const Vec3<T> bg = tc_.background.template cast<T>();

    parallel_chunks(n_chunks, tc_.threads, [&](int chunk) {
      int k0 = chunk * tc_.chunk_rays;
      int k1 = std::min(B, k0 + tc_.chunk_rays);
      int nr = k1 - k0;
      int64_t pts = int64_t(nr) * S;
      Mat<T> X(pts, 3), D(pts, 3), target(nr, 3);
      Vec<T> deltas(pts);
      std::vector<int> code_idx(size_t(pts));
      for (int k = k0; k < k1; ++k) {
        const RaySpec& rs = rays[size_t(k)];
        const Camera<double>& cam = ds_.frame(rs.frame).camera;
        double u = double(rs.px % ds_.manifest.width), v = double(rs.px / ds_.manifest.width);
        Ray<double> ray = generate_ray<double>(cam, u, v, ds_.manifest.near, ds_.manifest.far);
        Rng srng = Rng::stream(tc_.seed, {sample_tag, uint64_t(step_), uint64_t(k)});
        RaySamples<double> smp = stratified_samples(ds_.manifest.near, ds_.manifest.far, S, srng);
        int rr = k - k0;
        for (int s = 0; s < S; ++s) {
          int64_t i = int64_t(rr) * S + s;
          X.row(i) = (ray.origin + smp.ts(s) * ray.dir).template cast<T>().transpose();
          D.row(i) = ray.dir.template cast<T>().transpose();
          deltas(i) = T(smp.deltas(s));
          code_idx[size_t(i)] = ds_.code_index[size_t(rs.frame)];
        }
        const Image& im = ds_.images[size_t(rs.frame)];
        for (int c = 0; c < 3; ++c)
          target(rr, c) = T(im.data[size_t(rs.px) * 3 + size_t(c)]);
      }

      auto tape = std::make_unique<Tape<T>>();
      auto rad = radiance_nodes(*tape, store_, mc_, X, D, code_idx, alpha, beta);
      auto comp = composite_nodes(*tape, rad.sigma, rad.rgb, deltas, S, bg);
      Value<T> diff = sub(comp.rgb, tape->constant(target));
      Value<T> loss = scale(sum_all(mul(diff, diff)), T(1) / T(3 * B));
      if (tc_.elastic && mc_.use_deform) {
        Value<T> omega =
            gather_rows(tape->param(store_.at("codes.omega")), code_idx);
        WarpWithJacobian<T> wj =
            deform_with_jacobian_node(*tape, store_, mc_.warp_cfg(), X, omega, alpha);
        Value<T> el = geman_mcclure_node(elastic_energy_node(*tape, wj.jacobian9), T(0.03));
        loss = add(loss, scale(sum_all(el), T(tc_.elastic_weight) / T(int64_t(B) * S)));
      }
      chunk_losses[size_t(chunk)] = loss.val()(0, 0);
      tape->backward(loss);
      tapes[size_t(chunk)] = std::move(tape);
    });

    T loss_total = T(0);
    for (int c = 0; c < n_chunks; ++c) loss_total += chunk_losses[size_t(c)];
    if (!std::isfinite(double(loss_total))) {
      std::set<int> frames;
      for (const auto& rs : rays) frames.insert(rs.frame);
      std::string list;
      for (int f : frames) list += (list.empty() ? "" : ",") + std::to_string(f);
      throw ContractError("non-finite loss at step " + std::to_string(step_) +
                          " (frames " + list + ")");
    }
    for (int c = 0; c < n_chunks; ++c) tapes[size_t(c)]->merge_param_grads();
    adam_step(store_, adam_, lr);

    trace_.push_back(double(loss_total));
    if (!run_dir_.empty() && tc_.log_every > 0 && step_ % tc_.log_every == 0)
      log_line(double(loss_total), double(lr), double(alpha), double(beta));
    ++step_;
    return double(loss_total);
  }

  void run() {
    while (step_ < tc_.iterations) {
      train_step();
      if (!run_dir_.empty() && tc_.checkpoint_every > 0 && step_ % tc_.checkpoint_every == 0 &&
          step_ < tc_.iterations)
        save(checkpoint_path(step_));
      if (!run_dir_.empty() && tc_.val_every > 0 && step_ % tc_.val_every == 0)
        write_val_strip();
    }
    if (!run_dir_.empty()) save(checkpoint_path(step_));
  }

  std::string checkpoint_path(int64_t s) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step-%07lld.hypf", (long long)s);
    return (std::filesystem::path(run_dir_) / "checkpoints" / buf).string();
  }

  void save(const std::string& path) const {
    CheckpointExtras<T> ex;
    for (const auto& [name, mo] : adam_.moments) {
      ex.moments[name + ".m"] = mo.m;
      ex.moments[name + ".v"] = mo.v;
    }
    ex.adam_step = uint64_t(adam_.step);
    ex.train_step = uint64_t(step_);
    save_checkpoint(path, store_, &ex);
  }

  void resume(const std::string& path) {
    CheckpointExtras<T> ex = load_checkpoint(path, store_);
    adam_.moments.clear();
    for (size_t i = 0; i < store_.size(); ++i) {
      const auto& name = store_[i].name;
      auto m = ex.moments.find(name + ".m");
      auto v = ex.moments.find(name + ".v");
      if (m != ex.moments.end() && v != ex.moments.end())
        adam_.moments[name] = {m->second, v->second};
    }
    adam_.step = int64_t(ex.adam_step);
    step_ = int64_t(ex.train_step);
  }

  // Renders a frame with its own (or interpolated) codes.
  ImagePlanes<T> render_frame(int frame_idx, int n_samples = 0, uint64_t seed = 0) {
    FixedCodes<T> codes;
    if (ds_.code_index[size_t(frame_idx)] >= 0) {
      codes = codes_of_frame(store_, mc_, ds_.code_index[size_t(frame_idx)]);
    } else {
      auto ci = ds_.val_code_interp(frame_idx);
      codes = interpolate_codes(store_, mc_, ci.code_i, ci.code_j, T(ci.t)).codes;
    }
    int ns = n_samples > 0 ? n_samples
                           : (tc_.eval_samples > 0 ? tc_.eval_samples : tc_.samples_per_ray);
    return render_image(store_, mc_, ds_.frame(frame_idx).camera.template cast<T>(), codes,
                        T(alpha_at(step_)), T(beta_at(step_)), ns, T(ds_.manifest.near),
                        T(ds_.manifest.far), tc_.background.template cast<T>(), seed,
                        tc_.threads);
  }

 private:
  void log_line(double loss, double lr, double alpha, double beta) {
    std::ofstream os(std::filesystem::path(run_dir_) / "train_log.tsv", std::ios::app);
    os << step_ << "\t" << loss << "\t" << lr << "\t" << alpha << "\t" << beta << "\n";
  }

  void write_val_strip() {
    if (ds_.val_frames.empty()) return;
    int frame = ds_.val_frames[ds_.val_frames.size() / 2];
    ImagePlanes<T> planes = render_frame(frame, std::min(64, tc_.samples_per_ray));
    Image im = Image::zeros(planes.width, planes.height, 3);
    for (int64_t p = 0; p < planes.rgb.rows(); ++p)
      for (int c = 0; c < 3; ++c) im.data[size_t(p * 3 + c)] = float(planes.rgb(p, c));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step-%07lld.png", (long long)step_);
    write_png_rgb8((std::filesystem::path(run_dir_) / "val" / buf).string(), im);
  }

  const Dataset& ds_;
  ModelConfig mc_;
  TrainConfig tc_;
  std::string run_dir_;
  ParamStore<T> store_;
  AdamState<T> adam_;
  int64_t step_ = 0;
  std::vector<double> trace_;
};

template <typename T>
Image planes_to_image(const ImagePlanes<T>& planes) {
  Image im = Image::zeros(planes.width, planes.height, 3);
  for (int64_t p = 0; p < planes.rgb.rows(); ++p)
    for (int c = 0; c < 3; ++c) im.data[size_t(p * 3 + c)] = float(planes.rgb(p, c));
  return im;
}

struct PsnrReport {
  std::vector<std::pair<int, double>> per_view;  // (frame index, dB)
  double mean = 0.0;
};

// Held-out view quality. Codes for val frames are time-interpolated from the
// bracketing training frames, as the capture protocol implies.
template <typename T>
PsnrReport evaluate_psnr(Trainer3d<T>& trainer, const Dataset& ds, int n_samples = 0,
                         uint64_t seed = 0) {
  if (ds.val_frames.empty()) throw ContractError("evaluate_psnr: dataset has no held-out views");
  PsnrReport rep;
  for (int f : ds.val_frames) {
    ImagePlanes<T> planes = trainer.render_frame(f, n_samples, seed);
    double db = psnr(planes_to_image(planes), ds.images[size_t(f)]);
    rep.per_view.emplace_back(f, db);
    rep.mean += db;
  }
  rep.mean /= double(rep.per_view.size());
  return rep;
}

}  // namespace hyperfield
