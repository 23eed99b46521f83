#pragma once

#include <nlohmann/json.hpp>

#include "hyperfield/warp.hpp"

namespace hyperfield {

// How an observation picks its slice of the hyper-space template:
//   DS    - deformable slicing surface w = H(x, omega_i)
//   AP    - axis-aligned plane, w_i optimized directly per frame
//   None  - no ambient coordinates (w = 0), the deformation-only ablation
enum class SlicingMode { DS, AP, None };

inline std::string to_string(SlicingMode m) {
  switch (m) {
    case SlicingMode::DS: return "ds";
    case SlicingMode::AP: return "ap";
    default: return "none";
  }
}

inline SlicingMode slicing_mode_from_string(const std::string& s) {
  if (s == "ds") return SlicingMode::DS;
  if (s == "ap") return SlicingMode::AP;
  if (s == "none") return SlicingMode::None;
  throw ConfigError("unknown slicing mode: " + s + " (expected ds|ap|none)");
}

struct ModelConfig {
  SlicingMode mode = SlicingMode::DS;
  bool use_deform = true;
  int ambient_dim = 2;  // W
  int code_dim = 8;
  int n_frames = 0;

  // hyper-space template F
  int template_m = 8;
  bool template_identity = true;
  int template_depth = 8;
  int template_width = 256;
  int template_skip = 4;
  int color_width = 128;
  int dir_m = 4;
  int ambient_m = 1;  // bands for w; no identity, beta-windowed

  // deformation field T
  int warp_m = 6;
  int warp_depth = 6;
  int warp_width = 128;
  int warp_skip = 4;
  double warp_head_init = 1e-4;

  // slicing surface H
  int slice_m = 6;
  int slice_depth = 6;
  int slice_width = 64;
  int slice_skip = 5;
  double slice_head_init = 1e-5;

  double code_init_sigma = 0.01;

  bool needs_omega() const { return use_deform || mode == SlicingMode::DS; }

  EncodingConfig template_enc() const { return {3, 0, template_m, template_identity}; }
  EncodingConfig dir_enc() const { return {3, 0, dir_m, true}; }
  EncodingConfig ambient_enc() const { return {ambient_dim, 0, ambient_m, false}; }
  EncodingConfig slice_enc() const { return {3, 0, slice_m, true}; }

  WarpConfig warp_cfg() const {
    WarpConfig c = WarpConfig::make(warp_m, warp_depth, warp_width, warp_skip, code_dim);
    c.head_init = warp_head_init;
    return c;
  }
  MLPSpec slice_trunk() const {
    return MLPSpec{slice_enc().output_dim() + code_dim, slice_depth, slice_width,
                   {slice_skip}, slice_width};
  }
  MLPSpec template_trunk() const {
    return MLPSpec{template_enc().output_dim() + ambient_enc().output_dim(), template_depth,
                   template_width, {template_skip}, template_width};
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"mode", to_string(c.mode)},
                     {"use_deform", c.use_deform},
                     {"ambient_dim", c.ambient_dim},
                     {"code_dim", c.code_dim},
                     {"n_frames", c.n_frames},
                     {"template_m", c.template_m},
                     {"template_identity", c.template_identity},
                     {"template_depth", c.template_depth},
                     {"template_width", c.template_width},
                     {"template_skip", c.template_skip},
                     {"color_width", c.color_width},
                     {"dir_m", c.dir_m},
                     {"ambient_m", c.ambient_m},
                     {"warp_m", c.warp_m},
                     {"warp_depth", c.warp_depth},
                     {"warp_width", c.warp_width},
                     {"warp_skip", c.warp_skip},
                     {"warp_head_init", c.warp_head_init},
                     {"slice_m", c.slice_m},
                     {"slice_depth", c.slice_depth},
                     {"slice_width", c.slice_width},
                     {"slice_skip", c.slice_skip},
                     {"slice_head_init", c.slice_head_init},
                     {"code_init_sigma", c.code_init_sigma}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.mode = slicing_mode_from_string(j.value("mode", to_string(c.mode)));
  c.use_deform = j.value("use_deform", c.use_deform);
  c.ambient_dim = j.value("ambient_dim", c.ambient_dim);
  c.code_dim = j.value("code_dim", c.code_dim);
  c.n_frames = j.value("n_frames", c.n_frames);
  c.template_m = j.value("template_m", c.template_m);
  c.template_identity = j.value("template_identity", c.template_identity);
  c.template_depth = j.value("template_depth", c.template_depth);
  c.template_width = j.value("template_width", c.template_width);
  c.template_skip = j.value("template_skip", c.template_skip);
  c.color_width = j.value("color_width", c.color_width);
  c.dir_m = j.value("dir_m", c.dir_m);
  c.ambient_m = j.value("ambient_m", c.ambient_m);
  c.warp_m = j.value("warp_m", c.warp_m);
  c.warp_depth = j.value("warp_depth", c.warp_depth);
  c.warp_width = j.value("warp_width", c.warp_width);
  c.warp_skip = j.value("warp_skip", c.warp_skip);
  c.warp_head_init = j.value("warp_head_init", c.warp_head_init);
  c.slice_m = j.value("slice_m", c.slice_m);
  c.slice_depth = j.value("slice_depth", c.slice_depth);
  c.slice_width = j.value("slice_width", c.slice_width);
  c.slice_skip = j.value("slice_skip", c.slice_skip);
  c.slice_head_init = j.value("slice_head_init", c.slice_head_init);
  c.code_init_sigma = j.value("code_init_sigma", c.code_init_sigma);
}

template <typename T>
void init_field_params(ParamStore<T>& store, const ModelConfig& cfg, uint64_t seed) {
  if (cfg.n_frames <= 0) throw ConfigError("ModelConfig.n_frames must be positive");
  if (cfg.ambient_dim <= 0) throw ConfigError("ModelConfig.ambient_dim must be positive");

  MLPSpec ttrunk = cfg.template_trunk();
  init_mlp_params<T>(store, "template.trunk", ttrunk, seed);
  init_affine<T>(store, "template.sigma", 1, cfg.template_width, seed);
  init_affine<T>(store, "template.color.h", cfg.color_width,
                 cfg.template_width + cfg.dir_enc().output_dim() + cfg.code_dim, seed);
  init_affine<T>(store, "template.color.out", 3, cfg.color_width, seed);

  if (cfg.use_deform) {
    WarpConfig wc = cfg.warp_cfg();
    init_warp_params<T>(store, wc, seed);
  }
  if (cfg.mode == SlicingMode::DS) {
    MLPSpec strunk = cfg.slice_trunk();
    init_mlp_params<T>(store, "slice.trunk", strunk, seed);
    init_affine<T>(store, "slice.out", cfg.ambient_dim, cfg.slice_width, seed,
                   cfg.slice_head_init);
  }
  if (cfg.mode == SlicingMode::AP) {
    store.add("codes.w_ap", {uint64_t(cfg.n_frames), uint64_t(cfg.ambient_dim)});  // zeros
  }
  if (cfg.needs_omega()) {
    auto& om = store.add("codes.omega", {uint64_t(cfg.n_frames), uint64_t(cfg.code_dim)});
    Rng r = Rng::stream(seed, {Rng::hash_str("codes.omega")});
    detail::fill_normal(om.values, cfg.code_init_sigma, r);
  }
  auto& psi = store.add("codes.psi", {uint64_t(cfg.n_frames), uint64_t(cfg.code_dim)});
  Rng r = Rng::stream(seed, {Rng::hash_str("codes.psi")});
  detail::fill_normal(psi.values, cfg.code_init_sigma, r);
}

template <typename T>
struct RadianceNodes {
  Value<T> rgb;     // [n,3] in (0,1)
  Value<T> sigma;   // [n,1], >= 0
  Value<T> w;       // [n,W] ambient coordinates (constant zeros in None mode)
  Mat<T> x_prime;   // warped points, for probes
};

namespace detail {

// Shared composition: omega / psi / w_ap are already nodes (or invalid where
// the config does not use them).
template <typename T>
RadianceNodes<T> radiance_core(Tape<T>& tape, ParamStore<T>& store, const ModelConfig& cfg,
                               const Mat<T>& x, const Mat<T>& d, Value<T> omega,
                               Value<T> psi, Value<T> w_ap, T alpha, T beta) {
  int64_t n = x.rows();
  if (d.rows() != n) throw ContractError("radiance: point/direction count mismatch");

  // Eq. 5: x' = T(x, omega)
  Value<T> x_prime_node;
  Value<T> spatial_enc;
  if (cfg.use_deform) {
    x_prime_node = deform_node(tape, store, cfg.warp_cfg(), x, omega, alpha);
    spatial_enc = posenc_node(tape, x_prime_node, cfg.template_enc());
  } else {
    x_prime_node = tape.constant(x);
    spatial_enc = tape.constant(posenc_mat<T>(x, cfg.template_enc()));
  }

  // Eq. 6: w per slicing mode
  Value<T> w;
  switch (cfg.mode) {
    case SlicingMode::DS: {
      Value<T> enc = tape.constant(posenc_mat<T>(x, cfg.slice_enc()));
      Value<T> h = mlp_trunk(tape, store, "slice.trunk", cfg.slice_trunk(),
                             concat_cols<T>({enc, omega}));
      w = affine(tape, store, "slice.out", h);
      break;
    }
    case SlicingMode::AP:
      w = w_ap;
      break;
    case SlicingMode::None:
      w = tape.constant(Mat<T>::Zero(n, cfg.ambient_dim));
      break;
  }
  Value<T> ambient_enc = posenc_node(tape, w, cfg.ambient_enc(), beta);

  // Eq. 7: (c, sigma) = F(x', w, d, psi)
  Value<T> trunk = mlp_trunk(tape, store, "template.trunk", cfg.template_trunk(),
                             concat_cols<T>({spatial_enc, ambient_enc}));
  Value<T> sigma = relu(affine(tape, store, "template.sigma", trunk));
  Value<T> dir_enc = tape.constant(posenc_mat<T>(d, cfg.dir_enc()));
  Value<T> ch = relu(affine(tape, store, "template.color.h",
                            concat_cols<T>({trunk, dir_enc, psi})));
  Value<T> rgb = sigmoid(affine(tape, store, "template.color.out", ch));
  return {rgb, sigma, w, x_prime_node.val()};
}

}  // namespace detail

// Evaluates F(T(x), H(x), d, psi) for a batch of points. x and d are
// constants; codes are gathered per point from the trainable tables.
template <typename T>
RadianceNodes<T> radiance_nodes(Tape<T>& tape, ParamStore<T>& store, const ModelConfig& cfg,
                                const Mat<T>& x, const Mat<T>& d,
                                const std::vector<int>& frame_idx, T alpha, T beta) {
  if (int64_t(frame_idx.size()) != x.rows())
    throw ContractError("radiance_nodes: batch size mismatch");
  Value<T> omega, w_ap;
  if (cfg.needs_omega())
    omega = gather_rows(tape.param(store.at("codes.omega")), frame_idx);
  if (cfg.mode == SlicingMode::AP)
    w_ap = gather_rows(tape.param(store.at("codes.w_ap")), frame_idx);
  Value<T> psi = gather_rows(tape.param(store.at("codes.psi")), frame_idx);
  return detail::radiance_core(tape, store, cfg, x, d, omega, psi, w_ap, alpha, beta);
}

// Same composition with one explicit code vector shared by all points, e.g.
// a CodeBlend for a held-out or interpolated moment. Codes enter as
// constants; no gradients flow into the tables.
template <typename T>
struct FixedCodes {
  Vec<T> omega, psi, w_ap;
};

template <typename T>
RadianceNodes<T> radiance_nodes_fixed(Tape<T>& tape, ParamStore<T>& store,
                                      const ModelConfig& cfg, const Mat<T>& x,
                                      const Mat<T>& d, const FixedCodes<T>& codes, T alpha,
                                      T beta) {
  int64_t n = x.rows();
  auto broadcast = [&](const Vec<T>& row) {
    Mat<T> m(n, row.size());
    m.rowwise() = row.transpose();
    return tape.constant(std::move(m));
  };
  Value<T> omega, w_ap;
  if (cfg.needs_omega()) omega = broadcast(codes.omega);
  if (cfg.mode == SlicingMode::AP) w_ap = broadcast(codes.w_ap);
  Value<T> psi = broadcast(codes.psi);
  return detail::radiance_core(tape, store, cfg, x, d, omega, psi, w_ap, alpha, beta);
}

template <typename T>
FixedCodes<T> codes_of_frame(const ParamStore<T>& store, const ModelConfig& cfg, int frame) {
  if (frame < 0 || frame >= cfg.n_frames)
    throw ContractError("codes_of_frame: frame index out of range");
  FixedCodes<T> out;
  if (cfg.needs_omega()) out.omega = store.at("codes.omega").values.row(frame).transpose();
  out.psi = store.at("codes.psi").values.row(frame).transpose();
  if (cfg.mode == SlicingMode::AP)
    out.w_ap = store.at("codes.w_ap").values.row(frame).transpose();
  return out;
}

// ---- single-point conveniences -------------------------------------------

template <typename T>
struct RadianceSample {
  Vec3<T> rgb;
  T sigma;
};

// F queried directly at a hyper-space point (bypasses T and H).
template <typename T>
RadianceSample<T> template_query(ParamStore<T>& store, const ModelConfig& cfg,
                                 const Vec3<T>& x_prime, const Vec<T>& w, const Vec3<T>& d,
                                 const Vec<T>& psi, T beta) {
  Tape<T> tape;
  Value<T> spatial = tape.constant(posenc_mat<T>(x_prime.transpose(), cfg.template_enc()));
  Value<T> ambient =
      posenc_node(tape, tape.constant(Mat<T>(w.transpose())), cfg.ambient_enc(), beta);
  Value<T> trunk = mlp_trunk(tape, store, "template.trunk", cfg.template_trunk(),
                             concat_cols<T>({spatial, ambient}));
  Value<T> sigma = relu(affine(tape, store, "template.sigma", trunk));
  Value<T> dir_enc = tape.constant(posenc_mat<T>(d.transpose(), cfg.dir_enc()));
  Value<T> psi_node = tape.constant(Mat<T>(psi.transpose()));
  Value<T> ch = relu(affine(tape, store, "template.color.h",
                            concat_cols<T>({trunk, dir_enc, psi_node})));
  Value<T> rgb = sigmoid(affine(tape, store, "template.color.out", ch));
  return {rgb.val().row(0).transpose(), sigma.val()(0, 0)};
}

// H queried at one point for one frame (DS mode).
template <typename T>
Vec<T> slice_surface(ParamStore<T>& store, const ModelConfig& cfg, const Vec3<T>& x,
                     int frame) {
  if (cfg.mode != SlicingMode::DS)
    throw ContractError("slice_surface: model is not in DS mode");
  Tape<T> tape;
  Value<T> enc = tape.constant(posenc_mat<T>(x.transpose(), cfg.slice_enc()));
  Value<T> omega = gather_rows(tape.param(store.at("codes.omega")), {frame});
  Value<T> h = mlp_trunk(tape, store, "slice.trunk", cfg.slice_trunk(),
                         concat_cols<T>({enc, omega}));
  Value<T> w = affine(tape, store, "slice.out", h);
  return w.val().row(0).transpose();
}

// Full observation-space radiance at one point.
template <typename T>
RadianceSample<T> radiance_at(ParamStore<T>& store, const ModelConfig& cfg, const Vec3<T>& x,
                              const Vec3<T>& d, int frame, T alpha, T beta) {
  if (frame < 0 || frame >= cfg.n_frames)
    throw ContractError("radiance_at: frame index out of range");
  Tape<T> tape;
  auto out = radiance_nodes(tape, store, cfg, Mat<T>(x.transpose()), Mat<T>(d.transpose()),
                            {frame}, alpha, beta);
  return {out.rgb.val().row(0).transpose(), out.sigma.val()(0, 0)};
}

// ---- code interpolation ----------------------------------------------------

template <typename T>
struct CodeBlend {
  FixedCodes<T> codes;
  bool extrapolated = false;
};

template <typename T>
CodeBlend<T> interpolate_codes(const ParamStore<T>& store, const ModelConfig& cfg, int i,
                               int j, T t) {
  if (i < 0 || i >= cfg.n_frames || j < 0 || j >= cfg.n_frames)
    throw ContractError("interpolate_codes: frame index out of range");
  CodeBlend<T> out;
  out.extrapolated = t < T(0) || t > T(1);
  auto lerp_row = [&](const std::string& name) -> Vec<T> {
    const Mat<T>& m = store.at(name).values;
    return ((T(1) - t) * m.row(i) + t * m.row(j)).transpose();
  };
  if (cfg.needs_omega()) out.codes.omega = lerp_row("codes.omega");
  out.codes.psi = lerp_row("codes.psi");
  if (cfg.mode == SlicingMode::AP) out.codes.w_ap = lerp_row("codes.w_ap");
  return out;
}

}  // namespace hyperfield
