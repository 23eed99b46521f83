#pragma once

#include "hyperfield/adam.hpp"
#include "hyperfield/encoding.hpp"
#include "hyperfield/grad_check.hpp"
#include "hyperfield/image.hpp"
#include "hyperfield/mlp.hpp"

namespace hyperfield {

// ---- shapes -----------------------------------------------------------------
// Sign convention throughout this lab: s > 0 inside, s < 0 outside. Unions of
// primitives therefore take the max of member SDFs (most SDF literature uses
// the opposite sign, where unions take the min).

struct Circle2D {
  Vec2<double> center = Vec2<double>::Zero();
  double radius = 0.3;
};

struct CrossShape2D {
  Vec2<double> center = Vec2<double>::Zero();
  double arm_half_length = 0.38;
  double arm_half_width = 0.092;
};

struct Primitive2D {
  enum class Kind { Circle, Cross } kind = Kind::Circle;
  Circle2D circle;
  CrossShape2D cross;

  static Primitive2D make_circle(Vec2<double> c, double r) {
    Primitive2D p;
    p.kind = Kind::Circle;
    p.circle = {c, r};
    return p;
  }
  static Primitive2D make_cross(Vec2<double> c, double l, double w) {
    Primitive2D p;
    p.kind = Kind::Cross;
    p.cross = {c, l, w};
    return p;
  }
};

struct Shape2D {
  std::vector<Primitive2D> parts;  // union
};

namespace detail {

// inside-positive box SDF, half extents h
inline double box_sdf_inside(const Vec2<double>& p, const Vec2<double>& c,
                             const Vec2<double>& h) {
  Vec2<double> q = (p - c).cwiseAbs() - h;
  double outside = q.cwiseMax(0.0).norm();
  double inside = std::min(std::max(q.x(), q.y()), 0.0);
  return -(outside + inside);
}

inline double primitive_sdf(const Primitive2D& prim, const Vec2<double>& p) {
  if (prim.kind == Primitive2D::Kind::Circle)
    return prim.circle.radius - (p - prim.circle.center).norm();
  const auto& cr = prim.cross;
  double horiz = box_sdf_inside(p, cr.center, {cr.arm_half_length, cr.arm_half_width});
  double vert = box_sdf_inside(p, cr.center, {cr.arm_half_width, cr.arm_half_length});
  return std::max(horiz, vert);
}

}  // namespace detail

inline double analytic_sdf(const Shape2D& shape, const Vec2<double>& p) {
  if (shape.parts.empty()) throw ContractError("analytic_sdf: empty shape");
  double s = -std::numeric_limits<double>::infinity();
  for (const auto& prim : shape.parts) s = std::max(s, detail::primitive_sdf(prim, p));
  return s;
}

constexpr double kSdfTruncation = 0.05;

inline double truncate_sdf(double s) {
  return s < -kSdfTruncation ? -kSdfTruncation : (s > kSdfTruncation ? kSdfTruncation : s);
}

// The four circle/cross permutations at two sites; sub-shape areas are matched
// so interpolation comparisons are not dominated by raw size differences.
inline std::vector<Shape2D> fig3_family() {
  const Vec2<double> left(-0.5, 0.0), right(0.5, 0.0);
  auto C = [](Vec2<double> at) { return Primitive2D::make_circle(at, 0.28); };
  auto X = [](Vec2<double> at) { return Primitive2D::make_cross(at, 0.38, 0.092); };
  return {
      Shape2D{{C(left), C(right)}},
      Shape2D{{C(left), X(right)}},
      Shape2D{{X(left), C(right)}},
      Shape2D{{X(left), X(right)}},
  };
}

inline std::vector<Shape2D> single_circle_family() {
  return {Shape2D{{Primitive2D::make_circle({0.0, 0.0}, 0.4)}}};
}

// ---- losses -------------------------------------------------------------------

template <typename T>
T pseudo_huber(T s, T s_star, T delta = T(0.005)) {
  T u = (s - s_star) / delta;
  return delta * delta * (std::sqrt(T(1) + u * u) - T(1));
}

template <typename T>
Value<T> pseudo_huber_node(Value<T> diff, T delta) {
  Value<T> u = scale(diff, T(1) / delta);
  Value<T> root = sqrt(add_scalar(mul(u, u), T(1)));
  return scale(add_scalar(root, T(-1)), delta * delta);
}

// ---- the lab -------------------------------------------------------------------

enum class SlicingMode2D { AP, DS };

inline std::string to_string(SlicingMode2D m) { return m == SlicingMode2D::AP ? "ap" : "ds"; }

struct SdfLabConfig {
  SlicingMode2D mode = SlicingMode2D::DS;
  int code_dim = 8;
  int64_t iterations = 2000;
  int batch = 512;
  double lr = 1e-3;  // fixed, not scheduled
  double delta = 0.005;
  uint64_t seed = 0;

  int template_m_min = -2, template_m_max = 3;
  int slice_m_min = -2, slice_m_max = 2;
  int template_depth = 6, template_width = 64, template_skip = 4;
  int slice_depth = 4, slice_width = 32;
  double slice_head_init = 1e-5;
  double code_init = 0.1;

  EncodingConfig template_xy_enc() const { return {2, template_m_min, template_m_max, false}; }
  EncodingConfig template_w_enc() const { return {1, template_m_min, template_m_max, false}; }
  EncodingConfig slice_xy_enc() const { return {2, slice_m_min, slice_m_max, false}; }
  MLPSpec template_trunk() const {
    return MLPSpec{template_xy_enc().output_dim() + template_w_enc().output_dim(),
                   template_depth, template_width, {template_skip}, template_width};
  }
  MLPSpec slice_trunk() const {
    return MLPSpec{slice_xy_enc().output_dim() + code_dim, slice_depth, slice_width, {},
                   slice_width};
  }
};

struct GridMetrics {
  double sign_agreement = 0.0;  // fraction in [0,1]
  double iou = 0.0;
  double max_abs_err = 0.0;     // vs truncated analytic SDF
};

// Template F(x, y, w) -> s plus an optional slicing surface H(x, y, omega) -> w,
// trained on truncated analytic SDF targets with the Pseudo-Huber loss.
template <typename T>
class SdfLab {
 public:
  SdfLab(std::vector<Shape2D> family, SdfLabConfig cfg)
      : family_(std::move(family)), cfg_(std::move(cfg)) {
    if (family_.empty()) throw ConfigError("SdfLab: empty shape family");
    init_mlp_params<T>(store_, "sdf.template.trunk", cfg_.template_trunk(), cfg_.seed);
    init_affine<T>(store_, "sdf.template.out", 1, cfg_.template_width, cfg_.seed);
    uint64_t n = family_.size();
    if (cfg_.mode == SlicingMode2D::DS) {
      init_mlp_params<T>(store_, "sdf.slice.trunk", cfg_.slice_trunk(), cfg_.seed);
      init_affine<T>(store_, "sdf.slice.out", 1, cfg_.slice_width, cfg_.seed,
                     cfg_.slice_head_init);
      auto& om = store_.add("codes2d.omega", {n, uint64_t(cfg_.code_dim)});
      Rng r = Rng::stream(cfg_.seed, {Rng::hash_str("codes2d.omega")});
      detail::fill_normal(om.values, cfg_.code_init, r);
    } else {
      auto& w = store_.add("codes2d.w", {n, 1});
      Rng r = Rng::stream(cfg_.seed, {Rng::hash_str("codes2d.w")});
      detail::fill_normal(w.values, cfg_.code_init, r);
    }
  }

  ParamStore<T>& store() { return store_; }
  const SdfLabConfig& config() const { return cfg_; }
  const std::vector<Shape2D>& family() const { return family_; }
  int64_t step() const { return step_; }
  const std::vector<double>& loss_trace() const { return trace_; }

  // s network over explicit per-point code rows (gathered or broadcast)
  Value<T> predict_nodes(Tape<T>& tape, const Mat<T>& pts, Value<T> code_rows) {
    Value<T> w;
    if (cfg_.mode == SlicingMode2D::DS) {
      Value<T> enc = tape.constant(posenc_mat<T>(pts, cfg_.slice_xy_enc()));
      Value<T> h = mlp_trunk(tape, store_, "sdf.slice.trunk", cfg_.slice_trunk(),
                             concat_cols<T>({enc, code_rows}));
      w = affine(tape, store_, "sdf.slice.out", h);
    } else {
      w = code_rows;  // [n,1] plane coordinates
    }
    Value<T> enc_xy = tape.constant(posenc_mat<T>(pts, cfg_.template_xy_enc()));
    Value<T> enc_w = posenc_node(tape, w, cfg_.template_w_enc());
    Value<T> h = mlp_trunk(tape, store_, "sdf.template.trunk", cfg_.template_trunk(),
                           concat_cols<T>({enc_xy, enc_w}));
    return affine(tape, store_, "sdf.template.out", h);
  }

  Value<T> predict_nodes(Tape<T>& tape, const Mat<T>& pts, const std::vector<int>& shape_ids) {
    return predict_nodes(tape, pts, gather_rows(tape.param(store_.at(code_table_name())), shape_ids));
  }

  Value<T> loss_nodes(Tape<T>& tape, const Mat<T>& pts, const std::vector<int>& shape_ids,
                      const Vec<T>& targets) {
    Value<T> s = predict_nodes(tape, pts, shape_ids);
    Value<T> diff = sub(s, tape.constant(Mat<T>(targets)));
    return mean_all(pseudo_huber_node(diff, T(cfg_.delta)));
  }

  LossBuilder<T> loss_builder(Mat<T> pts, std::vector<int> shape_ids) {
    Vec<T> targets = targets_for(pts, shape_ids);
    return [this, pts = std::move(pts), shape_ids = std::move(shape_ids),
            targets = std::move(targets)](Tape<T>& tape) {
      return loss_nodes(tape, pts, shape_ids, targets);
    };
  }

  Vec<T> targets_for(const Mat<T>& pts, const std::vector<int>& shape_ids) const {
    Vec<T> t(pts.rows());
    for (int64_t i = 0; i < pts.rows(); ++i)
      t(i) = T(truncate_sdf(analytic_sdf(family_[size_t(shape_ids[size_t(i)])],
                                         pts.row(i).template cast<double>().transpose())));
    return t;
  }

  double train_step() {
    Rng rng = Rng::stream(cfg_.seed, {Rng::hash_str("batch2d"), uint64_t(step_)});
    Mat<T> pts(cfg_.batch, 2);
    std::vector<int> ids(size_t(cfg_.batch));
    for (int i = 0; i < cfg_.batch; ++i) {
      pts(i, 0) = T(rng.uniform(-1.0, 1.0));
      pts(i, 1) = T(rng.uniform(-1.0, 1.0));
      ids[size_t(i)] = int(rng.uniform_index(uint32_t(family_.size())));
    }
    Vec<T> targets = targets_for(pts, ids);
    Tape<T> tape;
    Value<T> loss = loss_nodes(tape, pts, ids, targets);
    double lv = double(loss.val()(0, 0));
    if (!std::isfinite(lv))
      throw ContractError("sdf2d training diverged at step " + std::to_string(step_) +
                          " (mode " + to_string(cfg_.mode) + ", lr " + std::to_string(cfg_.lr) +
                          ", batch " + std::to_string(cfg_.batch) + ")");
    tape.backward(loss);
    tape.merge_param_grads();
    adam_step(store_, adam_, T(cfg_.lr));
    trace_.push_back(lv);
    ++step_;
    return lv;
  }

  void train() {
    while (step_ < cfg_.iterations) train_step();
  }

  std::string code_table_name() const {
    return cfg_.mode == SlicingMode2D::DS ? "codes2d.omega" : "codes2d.w";
  }

  Vec<T> code_row(int idx) const {
    return store_.at(code_table_name()).values.row(idx).transpose();
  }

  Vec<T> blend_codes(int i, int j, T t) const {
    return (T(1) - t) * code_row(i) + t * code_row(j);
  }

  // grid point at pixel center; row r is y, col c is x
  static Vec2<double> grid_point(int c, int r, int res) {
    return {-1.0 + 2.0 * (c + 0.5) / res, -1.0 + 2.0 * (r + 0.5) / res};
  }

  Mat<T> predict_grid_codes(const Vec<T>& code, int res) {
    Mat<T> out(res, res);
    Mat<T> pts(int64_t(res) * res, 2);
    for (int r = 0; r < res; ++r)
      for (int c = 0; c < res; ++c) {
        Vec2<double> p = grid_point(c, r, res);
        pts(int64_t(r) * res + c, 0) = T(p.x());
        pts(int64_t(r) * res + c, 1) = T(p.y());
      }
    Tape<T> tape;
    Mat<T> rows(pts.rows(), code.size());
    rows.rowwise() = code.transpose();
    Value<T> s = predict_nodes(tape, pts, tape.constant(std::move(rows)));
    for (int r = 0; r < res; ++r)
      for (int c = 0; c < res; ++c) out(r, c) = s.val()(int64_t(r) * res + c, 0);
    return out;
  }

  Mat<T> predict_grid(int code_idx, int res) { return predict_grid_codes(code_row(code_idx), res); }

  // ambient coordinate over the grid (DS: H output; AP: the constant plane)
  Mat<T> slice_w_grid(const Vec<T>& code, int res) {
    Mat<T> out(res, res);
    if (cfg_.mode == SlicingMode2D::AP) {
      out.setConstant(code(0));
      return out;
    }
    Mat<T> pts(int64_t(res) * res, 2);
    for (int r = 0; r < res; ++r)
      for (int c = 0; c < res; ++c) {
        Vec2<double> p = grid_point(c, r, res);
        pts(int64_t(r) * res + c, 0) = T(p.x());
        pts(int64_t(r) * res + c, 1) = T(p.y());
      }
    Tape<T> tape;
    Mat<T> rows(pts.rows(), code.size());
    rows.rowwise() = code.transpose();
    Value<T> enc = tape.constant(posenc_mat<T>(pts, cfg_.slice_xy_enc()));
    Value<T> h = mlp_trunk(tape, store_, "sdf.slice.trunk", cfg_.slice_trunk(),
                           concat_cols<T>({enc, tape.constant(std::move(rows))}));
    Value<T> w = affine(tape, store_, "sdf.slice.out", h);
    for (int r = 0; r < res; ++r)
      for (int c = 0; c < res; ++c) out(r, c) = w.val()(int64_t(r) * res + c, 0);
    return out;
  }

  GridMetrics eval_grid(int shape_idx, const Mat<T>& predicted) const {
    int res = int(predicted.rows());
    GridMetrics m;
    int64_t agree = 0, inter = 0, uni = 0;
    for (int r = 0; r < res; ++r)
      for (int c = 0; c < res; ++c) {
        double truth = analytic_sdf(family_[size_t(shape_idx)], grid_point(c, r, res));
        double pred = double(predicted(r, c));
        bool ti = truth > 0.0, pi = pred > 0.0;
        agree += (ti == pi);
        inter += (ti && pi);
        uni += (ti || pi);
        m.max_abs_err = std::max(m.max_abs_err, std::abs(pred - truncate_sdf(truth)));
      }
    m.sign_agreement = double(agree) / double(int64_t(res) * res);
    m.iou = uni == 0 ? 1.0 : double(inter) / double(uni);
    return m;
  }

  GridMetrics eval_shape(int shape_idx, int res = 128) {
    return eval_grid(shape_idx, predict_grid(shape_idx, res));
  }

 private:
  std::vector<Shape2D> family_;
  SdfLabConfig cfg_;
  ParamStore<T> store_;
  AdamState<T> adam_;
  int64_t step_ = 0;
  std::vector<double> trace_;
};

// positive-sign area (in scene units) of the left (x<0) and right (x>=0) halves
template <typename T>
std::pair<double, double> areas_by_half(const Mat<T>& grid) {
  int res = int(grid.rows());
  double px_area = 4.0 / double(int64_t(res) * res);
  double left = 0, right = 0;
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c) {
      if (!(grid(r, c) > T(0))) continue;
      if (c < res / 2)
        left += px_area;
      else
        right += px_area;
    }
  return {left, right};
}

template <typename T>
Image raster_to_image(const Mat<T>& grid) {
  int res = int(grid.rows());
  Image im = Image::zeros(res, res, 3);
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c) {
      float v = grid(r, c) > T(0) ? 1.f : 0.f;
      for (int ch = 0; ch < 3; ++ch) im.at(c, res - 1 - r, ch) = v;  // y up in the image
    }
  return im;
}

}  // namespace hyperfield
