#pragma once

#include <memory>

#include "hyperfield/field.hpp"
#include "hyperfield/rng.hpp"
#include "hyperfield/threading.hpp"

namespace hyperfield {

template <typename T>
struct Camera {
  Mat3<T> rotation = Mat3<T>::Identity();  // camera-to-world; col 2 is the view axis
  Vec3<T> position = Vec3<T>::Zero();
  T focal = T(1);                          // pixels
  Vec2<T> principal = Vec2<T>::Zero();     // pixels
  int width = 0, height = 0;

  template <typename U>
  Camera<U> cast() const {
    Camera<U> c;
    c.rotation = rotation.template cast<U>();
    c.position = position.template cast<U>();
    c.focal = U(focal);
    c.principal = principal.template cast<U>();
    c.width = width;
    c.height = height;
    return c;
  }
};

template <typename T>
void validate_camera(const Camera<T>& c) {
  T dev = (c.rotation.transpose() * c.rotation - Mat3<T>::Identity()).norm();
  T tol = sizeof(T) == 4 ? T(1e-4) : T(1e-9);
  if (dev > tol) throw ConfigError("camera rotation is not orthonormal");
  if (!(c.focal > T(0))) throw ConfigError("camera focal must be positive");
  if (c.width <= 0 || c.height <= 0) throw ConfigError("camera resolution must be positive");
}

template <typename T>
struct Ray {
  Vec3<T> origin = Vec3<T>::Zero();
  Vec3<T> dir = Vec3<T>::UnitZ();
  T near = T(0), far = T(1);
};

// Pinhole ray through the center of pixel (u, v); y points down the image,
// z is the viewing direction.
template <typename T>
Ray<T> generate_ray(const Camera<T>& cam, T u, T v, T near, T far) {
  if (u < T(0) || v < T(0) || u >= T(cam.width) || v >= T(cam.height))
    throw ContractError("generate_ray: pixel outside resolution");
  Vec3<T> dir_cam((u + T(0.5) - cam.principal.x()) / cam.focal,
                  (v + T(0.5) - cam.principal.y()) / cam.focal, T(1));
  Ray<T> r;
  r.origin = cam.position;
  r.dir = (cam.rotation * dir_cam).normalized();
  r.near = near;
  r.far = far;
  return r;
}

template <typename T>
struct RaySamples {
  Vec<T> ts;      // strictly increasing positions in (near, far)
  Vec<T> deltas;  // spacing; last entry is far - t_n
};

// One uniform draw per equal bin of [near, far].
template <typename T, typename RngT>
RaySamples<T> stratified_samples(T near, T far, int n, RngT&& rng) {
  if (n < 2) throw ContractError("stratified_samples: need at least 2 samples");
  RaySamples<T> out;
  out.ts.resize(n);
  out.deltas.resize(n);
  T bin = (far - near) / T(n);
  for (int k = 0; k < n; ++k) out.ts(k) = near + (T(k) + rng.template uniform01<T>()) * bin;
  for (int k = 0; k + 1 < n; ++k) out.deltas(k) = out.ts(k + 1) - out.ts(k);
  out.deltas(n - 1) = far - out.ts(n - 1);
  return out;
}

// Deterministic bin midpoints; used for ground-truth quadrature.
template <typename T>
RaySamples<T> midpoint_samples(T near, T far, int n) {
  RaySamples<T> out;
  out.ts.resize(n);
  out.deltas.resize(n);
  T bin = (far - near) / T(n);
  for (int k = 0; k < n; ++k) out.ts(k) = near + (T(k) + T(0.5)) * bin;
  for (int k = 0; k + 1 < n; ++k) out.deltas(k) = out.ts(k + 1) - out.ts(k);
  out.deltas(n - 1) = far - out.ts(n - 1);
  return out;
}

template <typename T>
struct RenderOutput {
  Vec3<T> rgb = Vec3<T>::Zero();
  T acc = T(0);    // accumulated opacity
  T depth = T(0);  // expected termination distance
  Vec<T> weights;
};

// alpha_k = 1 - exp(-sigma_k delta_k); T_k = prod_{j<k} (1 - alpha_j);
// weight_k = T_k alpha_k; rgb = sum w_k c_k + (1 - acc) * background.
template <typename T>
RenderOutput<T> composite(const Mat<T>& colors, const Vec<T>& sigmas, const Vec<T>& deltas,
                          const Vec<T>& ts, const Vec3<T>& background) {
  int64_t n = sigmas.size();
  if (colors.rows() != n || deltas.size() != n || ts.size() != n)
    throw ContractError("composite: length mismatch");
  RenderOutput<T> out;
  out.weights.resize(n);
  T trans = T(1);
  T depth_num = T(0);
  for (int64_t k = 0; k < n; ++k) {
    T a = T(1) - std::exp(-sigmas(k) * deltas(k));
    T w = trans * a;
    out.weights(k) = w;
    out.rgb += w * colors.row(k).transpose();
    depth_num += w * ts(k);
    out.acc += w;
    trans *= (T(1) - a);
  }
  out.rgb += (T(1) - out.acc) * background;
  out.depth = depth_num / std::max(out.acc, T(1e-10));
  return out;
}

// ---- differentiable compositing --------------------------------------------

template <typename T>
struct CompositeNodes {
  Value<T> rgb;  // [rays, 3]
  Value<T> acc;  // [rays, 1]
  std::shared_ptr<Mat<T>> weights;  // [rays, samples], not differentiated
};

// sigma, rgb: [rays*samples, {1,3}] with samples contiguous per ray.
template <typename T>
CompositeNodes<T> composite_nodes(Tape<T>& tape, Value<T> sigma, Value<T> rgb,
                                  const Vec<T>& deltas, int samples,
                                  const Vec3<T>& background) {
  int64_t n = sigma.rows();
  if (n % samples != 0 || rgb.rows() != n || deltas.size() != n)
    throw ContractError("composite_nodes: length mismatch");
  int64_t rays = n / samples;

  auto weights = std::make_shared<Mat<T>>(rays, samples);
  auto trans_next = std::make_shared<Mat<T>>(rays, samples);  // T_{k+1}
  Mat<T> pack(rays, 4);
  const Mat<T>& sv = sigma.val();
  const Mat<T>& cv = rgb.val();
  for (int64_t r = 0; r < rays; ++r) {
    T trans = T(1), acc = T(0);
    Vec3<T> col = Vec3<T>::Zero();
    for (int k = 0; k < samples; ++k) {
      int64_t i = r * samples + k;
      T a = T(1) - std::exp(-sv(i, 0) * deltas(i));
      T w = trans * a;
      (*weights)(r, k) = w;
      trans *= (T(1) - a);
      (*trans_next)(r, k) = trans;
      acc += w;
      col += w * cv.row(i).transpose();
    }
    col += (T(1) - acc) * background;
    pack(r, 0) = col(0);
    pack(r, 1) = col(1);
    pack(r, 2) = col(2);
    pack(r, 3) = acc;
  }

  int si = sigma.id, ci = rgb.id;
  bool rg = tape.needs(si) || tape.needs(ci);
  Vec<T> dl = deltas;
  Vec3<T> bg = background;
  Value<T> packed = tape.make_node(
      std::move(pack), rg,
      [si, ci, weights, trans_next, dl, bg, samples](Tape<T>& tp, int self) {
        const Mat<T>& g = tp.node(self).grad;
        const Mat<T>& cv = tp.val(ci);
        int64_t rays = g.rows();
        bool need_s = tp.needs(si), need_c = tp.needs(ci);
        Mat<T>* sg = need_s ? &tp.grad_buf(si) : nullptr;
        Mat<T>* cg = need_c ? &tp.grad_buf(ci) : nullptr;
        for (int64_t r = 0; r < rays; ++r) {
          Vec3<T> grgb(g(r, 0), g(r, 1), g(r, 2));
          T gacc = g(r, 3);
          // dL/dw_k, then a reverse scan for dL/dsigma
          T suffix = T(0);
          Vec<T> u(samples);
          for (int k = 0; k < samples; ++k) {
            int64_t i = r * samples + k;
            u(k) = (cv.row(i).transpose() - bg).dot(grgb) + gacc;
            if (need_c) cg->row(i) += (*weights)(r, k) * grgb.transpose();
          }
          if (need_s) {
            for (int k = samples - 1; k >= 0; --k) {
              int64_t i = r * samples + k;
              (*sg)(i, 0) += dl(i) * ((*trans_next)(r, k) * u(k) - suffix);
              suffix += (*weights)(r, k) * u(k);
            }
          }
        }
      });
  return {col_block(packed, 0, 3), col_block(packed, 3, 1), weights};
}

// ---- whole-image rendering --------------------------------------------------

template <typename T>
struct ImagePlanes {
  int width = 0, height = 0;
  Mat<T> rgb;    // [pixels, 3], row-major pixel order
  Vec<T> acc;
  Vec<T> depth;
};

// Renders one camera with fixed per-frame codes. Deterministic for a given
// seed regardless of thread count.
template <typename T>
ImagePlanes<T> render_image(ParamStore<T>& store, const ModelConfig& cfg,
                            const Camera<T>& cam, const FixedCodes<T>& codes, T alpha,
                            T beta, int n_samples, T near, T far, const Vec3<T>& background,
                            uint64_t seed, int threads = 0) {
  validate_camera(cam);
  int64_t n_px = int64_t(cam.width) * cam.height;
  ImagePlanes<T> out;
  out.width = cam.width;
  out.height = cam.height;
  out.rgb.resize(n_px, 3);
  out.acc.resize(n_px);
  out.depth.resize(n_px);

  constexpr int64_t kChunk = 256;
  int64_t n_chunks = (n_px + kChunk - 1) / kChunk;
  uint64_t render_tag = Rng::hash_str("render");

  parallel_chunks(int(n_chunks), threads, [&](int chunk) {
    int64_t begin = chunk * kChunk, end = std::min(n_px, begin + kChunk);
    int64_t rays = end - begin;
    int64_t pts = rays * n_samples;
    Mat<T> X(pts, 3), D(pts, 3);
    Vec<T> deltas(pts), ts(pts);
    for (int64_t p = begin; p < end; ++p) {
      int64_t rr = p - begin;
      T u = T(p % cam.width), v = T(p / cam.width);
      Ray<T> ray = generate_ray(cam, u, v, near, far);
      Rng rng = Rng::stream(seed, {render_tag, uint64_t(p)});
      RaySamples<T> s = stratified_samples(near, far, n_samples, rng);
      for (int k = 0; k < n_samples; ++k) {
        int64_t i = rr * n_samples + k;
        X.row(i) = (ray.origin + s.ts(k) * ray.dir).transpose();
        D.row(i) = ray.dir.transpose();
        deltas(i) = s.deltas(k);
        ts(i) = s.ts(k);
      }
    }
    Tape<T> tape;
    auto rad = radiance_nodes_fixed(tape, store, cfg, X, D, codes, alpha, beta);
    const Mat<T>& sig = rad.sigma.val();
    const Mat<T>& col = rad.rgb.val();
    if (!all_finite(sig) || !all_finite(col)) {
      for (int64_t rr = 0; rr < rays; ++rr)
        for (int k = 0; k < n_samples; ++k) {
          int64_t i = rr * n_samples + k;
          if (!std::isfinite(sig(i, 0)) || !col.row(i).allFinite()) {
            int64_t p = begin + rr;
            throw ContractError("render_image: non-finite radiance at pixel (" +
                                std::to_string(p % cam.width) + ", " +
                                std::to_string(p / cam.width) + ")");
          }
        }
    }
    for (int64_t rr = 0; rr < rays; ++rr) {
      RenderOutput<T> ro =
          composite<T>(col.middleRows(rr * n_samples, n_samples),
                       sig.col(0).segment(rr * n_samples, n_samples),
                       deltas.segment(rr * n_samples, n_samples),
                       ts.segment(rr * n_samples, n_samples), background);
      out.rgb.row(begin + rr) = ro.rgb.transpose();
      out.acc(begin + rr) = ro.acc;
      out.depth(begin + rr) = ro.depth;
    }
  });
  return out;
}

}  // namespace hyperfield
