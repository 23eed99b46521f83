#pragma once

#include <Eigen/SVD>
#include <memory>

#include "hyperfield/encoding.hpp"
#include "hyperfield/mlp.hpp"
#include "hyperfield/se3.hpp"

namespace hyperfield {

// Spatial deformation field T(x, omega): an MLP over the alpha-windowed
// encoding of x and the per-frame code emits an se(3) twist which is applied
// to x as a screw motion about the scene origin.
struct WarpConfig {
  EncodingConfig enc{3, 0, 6, true};
  int code_dim = 8;
  MLPSpec trunk;          // input_dim derived in init
  double head_init = 1e-4;
  std::string prefix = "warp";

  static WarpConfig make(int enc_m, int depth, int width, int skip, int code_dim = 8) {
    WarpConfig c;
    c.enc = EncodingConfig{3, 0, enc_m, true};
    c.code_dim = code_dim;
    c.trunk = MLPSpec{0, depth, width, {skip}, width};
    return c;
  }
};

template <typename T>
void init_warp_params(ParamStore<T>& store, WarpConfig& cfg, uint64_t seed) {
  cfg.trunk.input_dim = cfg.enc.output_dim() + cfg.code_dim;
  validate(cfg.trunk, cfg.prefix + ".trunk");
  init_mlp_params<T>(store, cfg.prefix + ".trunk", cfg.trunk, seed);
  init_affine<T>(store, cfg.prefix + ".r", 3, cfg.trunk.width, seed, cfg.head_init);
  init_affine<T>(store, cfg.prefix + ".v", 3, cfg.trunk.width, seed, cfg.head_init);
}

// x: [n,3] observation points (constants), omega: [n,code_dim] node.
template <typename T>
Value<T> deform_node(Tape<T>& tape, ParamStore<T>& store, const WarpConfig& cfg,
                     const Mat<T>& x, Value<T> omega, T alpha) {
  Value<T> enc = tape.constant(posenc_mat<T>(x, cfg.enc, alpha));
  Value<T> h = mlp_trunk(tape, store, cfg.prefix + ".trunk", cfg.trunk,
                         concat_cols<T>({enc, omega}));
  Value<T> r = affine(tape, store, cfg.prefix + ".r", h);
  Value<T> v = affine(tape, store, cfg.prefix + ".v", h);
  return se3_apply_node(tape, r, v, tape.constant(x));
}

// ---- forward-mode duals ------------------------------------------------
// Carried alongside the warp evaluation to obtain the spatial Jacobian
// dT/dx as tape nodes, so the elastic loss differentiates exactly w.r.t.
// the parameters. d[k] holds the tangent in input direction x_k.

namespace detail {

template <typename T>
struct DualMat {
  Value<T> v;
  std::array<Value<T>, 3> d;
};

template <typename T>
DualMat<T> dual_linear(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix,
                       const DualMat<T>& x) {
  Value<T> w = tape.param(store.at(prefix + ".w"));
  Value<T> b = tape.param(store.at(prefix + ".b"));
  return {linear(x.v, w, b),
          {linear_nt(x.d[0], w), linear_nt(x.d[1], w), linear_nt(x.d[2], w)}};
}

template <typename T>
DualMat<T> dual_relu(Tape<T>& tape, const DualMat<T>& x) {
  // the 0/1 mask is piecewise constant in the parameters, so it is detached
  Value<T> mask = tape.constant((x.v.val().array() > T(0)).template cast<T>().matrix());
  return {relu(x.v), {x.d[0] * mask, x.d[1] * mask, x.d[2] * mask}};
}

template <typename T>
DualMat<T> dual_concat(const DualMat<T>& a, const DualMat<T>& b) {
  return {concat_cols<T>({a.v, b.v}),
          {concat_cols<T>({a.d[0], b.d[0]}), concat_cols<T>({a.d[1], b.d[1]}),
           concat_cols<T>({a.d[2], b.d[2]})}};
}

template <typename T>
DualMat<T> dual_mul(const DualMat<T>& a, const DualMat<T>& b) {
  return {a.v * b.v,
          {a.d[0] * b.v + a.v * b.d[0], a.d[1] * b.v + a.v * b.d[1],
           a.d[2] * b.v + a.v * b.d[2]}};
}

template <typename T>
DualMat<T> dual_add(const DualMat<T>& a, const DualMat<T>& b) {
  return {a.v + b.v, {a.d[0] + b.d[0], a.d[1] + b.d[1], a.d[2] + b.d[2]}};
}

template <typename T>
DualMat<T> dual_sub(const DualMat<T>& a, const DualMat<T>& b) {
  return {a.v - b.v, {a.d[0] - b.d[0], a.d[1] - b.d[1], a.d[2] - b.d[2]}};
}

template <typename T>
DualMat<T> dual_smooth(Tape<T>& tape, const DualMat<T>& s, T (*f)(T), T (*f1)(T), T (*f2)(T)) {
  Value<T> fv = smooth_fn(s.v, f, f1);
  Value<T> f1v = smooth_fn(s.v, f1, f2);
  return {fv, {s.d[0] * f1v, s.d[1] * f1v, s.d[2] * f1v}};
}

template <typename T>
std::array<DualMat<T>, 3> dual_cross(const std::array<DualMat<T>, 3>& a,
                                     const std::array<DualMat<T>, 3>& b) {
  return {dual_sub(dual_mul(a[1], b[2]), dual_mul(a[2], b[1])),
          dual_sub(dual_mul(a[2], b[0]), dual_mul(a[0], b[2])),
          dual_sub(dual_mul(a[0], b[1]), dual_mul(a[1], b[0]))};
}

// encoding of constant points together with its exact x-derivatives
template <typename T>
DualMat<T> dual_encoding(Tape<T>& tape, const Mat<T>& x, const EncodingConfig& cfg, T alpha) {
  int64_t n = x.rows();
  Mat<T> val(n, cfg.output_dim());
  std::array<Mat<T>, 3> tan;
  for (auto& t : tan) t = Mat<T>::Zero(n, cfg.output_dim());
  int64_t off = 0;
  if (cfg.include_identity) {
    val.middleCols(0, cfg.input_dim) = x;
    for (int c = 0; c < cfg.input_dim; ++c) tan[size_t(c)].col(c).setOnes();
    off += cfg.input_dim;
  }
  for (int j = cfg.m_min; j < cfg.m_max; ++j) {
    T sc = T(std::exp2(double(j)));
    T w = window_weight(j - cfg.m_min, alpha);
    for (int c = 0; c < cfg.input_dim; ++c) {
      val.col(off + c) = w * (sc * x.col(c).array()).sin();
      tan[size_t(c)].col(off + c) = w * sc * (sc * x.col(c).array()).cos();
      val.col(off + cfg.input_dim + c) = w * (sc * x.col(c).array()).cos();
      tan[size_t(c)].col(off + cfg.input_dim + c) = -w * sc * (sc * x.col(c).array()).sin();
    }
    off += 2 * cfg.input_dim;
  }
  return {tape.constant(std::move(val)),
          {tape.constant(std::move(tan[0])), tape.constant(std::move(tan[1])),
           tape.constant(std::move(tan[2]))}};
}

}  // namespace detail

template <typename T>
struct WarpWithJacobian {
  Value<T> x_prime;    // [n,3]
  Value<T> jacobian9;  // [n,9], row-major d x'_j / d x_k
};

template <typename T>
WarpWithJacobian<T> deform_with_jacobian_node(Tape<T>& tape, ParamStore<T>& store,
                                              const WarpConfig& cfg, const Mat<T>& x,
                                              Value<T> omega, T alpha) {
  using detail::DualMat;
  int64_t n = x.rows();
  DualMat<T> enc = detail::dual_encoding(tape, x, cfg.enc, alpha);
  Mat<T> zeros = Mat<T>::Zero(n, omega.cols());
  DualMat<T> om{omega,
                {tape.constant(zeros), tape.constant(zeros), tape.constant(zeros)}};
  DualMat<T> input = detail::dual_concat(enc, om);

  DualMat<T> h = input;
  const MLPSpec& spec = cfg.trunk;
  for (int l = 0; l < spec.depth; ++l) {
    if (l > 0 && detail::has_skip(spec, l)) h = detail::dual_concat(h, input);
    h = detail::dual_linear(tape, store, cfg.prefix + ".trunk.l" + std::to_string(l), h);
    h = detail::dual_relu(tape, h);
  }
  DualMat<T> r = detail::dual_linear(tape, store, cfg.prefix + ".r", h);
  DualMat<T> v = detail::dual_linear(tape, store, cfg.prefix + ".v", h);

  auto split = [&](const DualMat<T>& m) {
    std::array<DualMat<T>, 3> out;
    for (int i = 0; i < 3; ++i)
      out[size_t(i)] = DualMat<T>{col(m.v, i), {col(m.d[0], i), col(m.d[1], i), col(m.d[2], i)}};
    return out;
  };
  auto rc = split(r), vc = split(v);

  // x with unit tangents
  Mat<T> zcol = Mat<T>::Zero(n, 1), ocol = Mat<T>::Ones(n, 1);
  std::array<DualMat<T>, 3> xc;
  for (int i = 0; i < 3; ++i) {
    std::array<Value<T>, 3> tans{tape.constant(zcol), tape.constant(zcol), tape.constant(zcol)};
    tans[size_t(i)] = tape.constant(ocol);
    xc[size_t(i)] = DualMat<T>{tape.constant(x.col(i)), tans};
  }

  DualMat<T> s = dual_add(dual_add(dual_mul(rc[0], rc[0]), dual_mul(rc[1], rc[1])),
                          dual_mul(rc[2], rc[2]));
  DualMat<T> a = detail::dual_smooth(tape, s, &se3c::coef_a<T>, &se3c::coef_a1<T>, &se3c::coef_a2<T>);
  DualMat<T> b = detail::dual_smooth(tape, s, &se3c::coef_b<T>, &se3c::coef_b1<T>, &se3c::coef_b2<T>);
  DualMat<T> c = detail::dual_smooth(tape, s, &se3c::coef_c<T>, &se3c::coef_c1<T>, &se3c::coef_c2<T>);

  auto rx = detail::dual_cross(rc, xc), rrx = detail::dual_cross(rc, rx);
  auto rv = detail::dual_cross(rc, vc), rrv = detail::dual_cross(rc, rv);

  std::array<DualMat<T>, 3> xp;
  for (int i = 0; i < 3; ++i)
    xp[size_t(i)] = dual_add(
        dual_add(dual_add(xc[size_t(i)], dual_mul(a, rx[size_t(i)])),
                 dual_mul(b, rrx[size_t(i)])),
        dual_add(vc[size_t(i)],
                 dual_add(dual_mul(b, rv[size_t(i)]), dual_mul(c, rrv[size_t(i)]))));

  std::vector<Value<T>> xp_cols, jac_cols;
  for (int j = 0; j < 3; ++j) xp_cols.push_back(xp[size_t(j)].v);
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) jac_cols.push_back(xp[size_t(j)].d[size_t(k)]);
  return {concat_cols(xp_cols), concat_cols(jac_cols)};
}

// ---- elastic regularizer -------------------------------------------------

constexpr double kSingularValueFloor = 1e-6;

// sum_k (log sigma_k)^2 of a 3x3 Jacobian, singular values floored
template <typename T>
T elastic_energy_from_jacobian(const Mat3<T>& j) {
  Eigen::JacobiSVD<Mat3<T>> svd(j);
  T e = T(0);
  for (int k = 0; k < 3; ++k) {
    T sv = std::max(svd.singularValues()(k), T(kSingularValueFloor));
    T l = std::log(sv);
    e += l * l;
  }
  return e;
}

// [n,9] row-major Jacobians -> [n,1] energies; backward distributes
// 2 log(sigma)/sigma u v^T per singular value.
template <typename T>
Value<T> elastic_energy_node(Tape<T>& tape, Value<T> jac9) {
  if (jac9.cols() != 9) throw ContractError("elastic_energy_node: expected [n,9]");
  const Mat<T>& jm = jac9.val();
  int64_t n = jm.rows();
  auto cache = std::make_shared<std::vector<Eigen::JacobiSVD<Mat3<T>>>>();
  cache->reserve(size_t(n));
  Mat<T> e(n, 1);
  for (int64_t i = 0; i < n; ++i) {
    Mat3<T> j;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) j(a, b) = jm(i, 3 * a + b);
    cache->emplace_back(j, Eigen::ComputeFullU | Eigen::ComputeFullV);
    T acc = T(0);
    for (int k = 0; k < 3; ++k) {
      T sv = std::max((*cache)[size_t(i)].singularValues()(k), T(kSingularValueFloor));
      T l = std::log(sv);
      acc += l * l;
    }
    e(i, 0) = acc;
  }
  int ji = jac9.id;
  return tape.make_node(std::move(e), tape.needs(ji), [ji, cache](Tape<T>& tp, int self) {
    const Mat<T>& g = tp.node(self).grad;
    Mat<T>& jg = tp.grad_buf(ji);
    for (int64_t i = 0; i < int64_t(cache->size()); ++i) {
      const auto& svd = (*cache)[size_t(i)];
      Mat3<T> de = Mat3<T>::Zero();
      for (int k = 0; k < 3; ++k) {
        T sv = svd.singularValues()(k);
        if (sv < T(kSingularValueFloor)) continue;  // clamped region
        de += (T(2) * std::log(sv) / sv) *
              (svd.matrixU().col(k) * svd.matrixV().col(k).transpose());
      }
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) jg(i, 3 * a + b) += g(i, 0) * de(a, b);
    }
  });
}

// Geman-McClure robustifier applied to the squared energy, scale c.
template <typename T>
Value<T> geman_mcclure_node(Value<T> e, T c) {
  Value<T> u = scale(e, T(1) / (c * c));
  return div(scale(u, T(2)), add_scalar(u, T(4)));
}

template <typename T>
T geman_mcclure(T e, T c) {
  T u = e / (c * c);
  return T(2) * u / (u + T(4));
}

// Robustified elastic loss averaged over the sample points of one batch.
template <typename T>
Value<T> elastic_loss_node(Tape<T>& tape, ParamStore<T>& store, const WarpConfig& cfg,
                           const Mat<T>& x, Value<T> omega, T alpha, T robust_scale) {
  WarpWithJacobian<T> wj = deform_with_jacobian_node(tape, store, cfg, x, omega, alpha);
  return mean_all(geman_mcclure_node(elastic_energy_node(tape, wj.jacobian9), robust_scale));
}

// Convenience single-point evaluations (tests, probes).
template <typename T>
Vec3<T> deform_point(ParamStore<T>& store, const WarpConfig& cfg, const Vec3<T>& x,
                     const Vec<T>& omega, T alpha) {
  Tape<T> tape;
  Value<T> om = tape.constant(omega.transpose());
  Value<T> xp = deform_node(tape, store, cfg, Mat<T>(x.transpose()), om, alpha);
  return xp.val().row(0).transpose();
}

template <typename T>
T elastic_loss_at(ParamStore<T>& store, const WarpConfig& cfg, const Vec3<T>& x,
                  const Vec<T>& omega, T alpha, T robust_scale = T(0.03)) {
  Tape<T> tape;
  Value<T> om = tape.constant(omega.transpose());
  return elastic_loss_node(tape, store, cfg, Mat<T>(x.transpose()), om, alpha, robust_scale)
      .val()(0, 0);
}

}  // namespace hyperfield
