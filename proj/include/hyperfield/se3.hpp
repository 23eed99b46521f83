#pragma once

#include <array>

#include "hyperfield/tape.hpp"

namespace hyperfield {

// exp([r,v]) x = x + A(s) (r x x) + B(s) (r x (r x x)) + V(r) v,
// V(r) v     = v + B(s) (r x v) + C(s) (r x (r x v)),
// where s = |r|^2 and, with t = sqrt(s),
//   A = sin t / t,  B = (1 - cos t)/t^2,  C = (t - sin t)/t^3.
// A, B, C are analytic in s, so each (and its s-derivatives, which the
// elastic Jacobian graph needs) is computed from a power series in s below a
// switch point and from the closed form above it. Both branches agree to
// machine precision at the seam.

namespace se3c {

constexpr int kTerms = 8;
constexpr double kSeriesCutoff = 1.0;  // on s = theta^2

constexpr double factorial(int n) {
  double f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// coefficient of s^k in A, B, C
constexpr double ca(int k) { return (k % 2 ? -1.0 : 1.0) / factorial(2 * k + 1); }
constexpr double cb(int k) { return (k % 2 ? -1.0 : 1.0) / factorial(2 * k + 2); }
constexpr double cc(int k) { return (k % 2 ? -1.0 : 1.0) / factorial(2 * k + 3); }

template <typename T, typename CoefFn>
T series(T s, CoefFn coef, int dorder) {
  // d^dorder/ds^dorder of sum coef(k) s^k, via shifted coefficients
  T acc = T(0);
  for (int k = kTerms - 1; k >= 0; --k) {
    double c = coef(k + dorder);
    for (int j = 1; j <= dorder; ++j) c *= double(k + j);
    acc = acc * s + T(c);
  }
  return acc;
}

template <typename T>
T coef_a(T s) {
  if (s < T(kSeriesCutoff)) return series(s, ca, 0);
  T t = std::sqrt(s);
  return std::sin(t) / t;
}
template <typename T>
T coef_b(T s) {
  if (s < T(kSeriesCutoff)) return series(s, cb, 0);
  T t = std::sqrt(s);
  return (T(1) - std::cos(t)) / s;
}
template <typename T>
T coef_c(T s) {
  if (s < T(kSeriesCutoff)) return series(s, cc, 0);
  T t = std::sqrt(s);
  return (t - std::sin(t)) / (s * t);
}

template <typename T>
T coef_a1(T s) {
  if (s < T(kSeriesCutoff)) return series(s, ca, 1);
  T t = std::sqrt(s);
  return (t * std::cos(t) - std::sin(t)) / (T(2) * s * t);
}
template <typename T>
T coef_b1(T s) {
  if (s < T(kSeriesCutoff)) return series(s, cb, 1);
  T t = std::sqrt(s);
  return (t * std::sin(t) - T(2) * (T(1) - std::cos(t))) / (T(2) * s * s);
}
template <typename T>
T coef_c1(T s) {
  if (s < T(kSeriesCutoff)) return series(s, cc, 1);
  T t = std::sqrt(s);
  return (t * (T(1) - std::cos(t)) - T(3) * (t - std::sin(t))) / (T(2) * s * s * t);
}

template <typename T>
T coef_a2(T s) {
  if (s < T(kSeriesCutoff)) return series(s, ca, 2);
  T t = std::sqrt(s);
  return (T(6) * std::sin(t) - T(6) * t * std::cos(t) - T(2) * s * std::sin(t)) /
         (T(8) * s * s * t);
}
template <typename T>
T coef_b2(T s) {
  if (s < T(kSeriesCutoff)) return series(s, cb, 2);
  T t = std::sqrt(s);
  return (t * std::cos(t) - std::sin(t)) / (T(4) * t * s * s) -
         (t * std::sin(t) - T(2) * (T(1) - std::cos(t))) / (s * s * s);
}
template <typename T>
T coef_c2(T s) {
  if (s < T(kSeriesCutoff)) return series(s, cc, 2);
  T t = std::sqrt(s);
  return (t * std::sin(t) - T(2) * (T(1) - std::cos(t))) / (T(4) * s * s * s) -
         T(5) * (t * (T(1) - std::cos(t)) - T(3) * (t - std::sin(t))) /
             (T(4) * s * s * s * t);
}

}  // namespace se3c

template <typename T>
struct Twist {
  Vec3<T> r = Vec3<T>::Zero();  // axis-angle rotation generator
  Vec3<T> v = Vec3<T>::Zero();  // translation generator
};

template <typename T>
Vec3<T> so3_rotate(const Vec3<T>& r, const Vec3<T>& x) {
  T s = r.squaredNorm();
  Vec3<T> rx = r.cross(x);
  return x + se3c::coef_a(s) * rx + se3c::coef_b(s) * r.cross(rx);
}

template <typename T>
Vec3<T> se3_apply(const Twist<T>& t, const Vec3<T>& x) {
  T s = t.r.squaredNorm();
  T a = se3c::coef_a(s), b = se3c::coef_b(s), c = se3c::coef_c(s);
  Vec3<T> rx = t.r.cross(x);
  Vec3<T> rv = t.r.cross(t.v);
  return x + a * rx + b * t.r.cross(rx) + t.v + b * rv + c * t.r.cross(rv);
}

// ---- batched tape version ----------------------------------------------

template <typename T>
using ColTriple = std::array<Value<T>, 3>;

template <typename T>
ColTriple<T> cross_cols(const ColTriple<T>& a, const ColTriple<T>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

template <typename T>
ColTriple<T> split_cols3(Value<T> m) {
  if (m.cols() != 3) throw ContractError("split_cols3: expected 3 columns");
  return {col(m, 0), col(m, 1), col(m, 2)};
}

// One screw motion per row: r, v, x are [n,3]; returns [n,3].
template <typename T>
Value<T> se3_apply_node(Tape<T>& tape, Value<T> r, Value<T> v, Value<T> x) {
  ColTriple<T> rc = split_cols3(r), vc = split_cols3(v), xc = split_cols3(x);
  Value<T> s = rc[0] * rc[0] + rc[1] * rc[1] + rc[2] * rc[2];
  Value<T> a = smooth_fn(s, &se3c::coef_a<T>, &se3c::coef_a1<T>);
  Value<T> b = smooth_fn(s, &se3c::coef_b<T>, &se3c::coef_b1<T>);
  Value<T> c = smooth_fn(s, &se3c::coef_c<T>, &se3c::coef_c1<T>);
  ColTriple<T> rx = cross_cols(rc, xc), rrx = cross_cols(rc, rx);
  ColTriple<T> rv = cross_cols(rc, vc), rrv = cross_cols(rc, rv);
  std::vector<Value<T>> out;
  for (int i = 0; i < 3; ++i)
    out.push_back(xc[i] + a * rx[i] + b * rrx[i] + vc[i] + b * rv[i] + c * rrv[i]);
  return concat_cols(out);
}

}  // namespace hyperfield
