#pragma once

#include <optional>

#include "hyperfield/tape.hpp"

namespace hyperfield {

// Sinusoidal bands 2^j for j in [m_min, m_max), ordered by ascending degree,
// each band contributing [sin(2^j x), cos(2^j x)] per input dimension.
// Negative minimum degrees are allowed (sub-unit frequencies).
struct EncodingConfig {
  int input_dim = 0;
  int m_min = 0;
  int m_max = 0;
  bool include_identity = false;

  int n_bands() const { return m_max - m_min; }
  int output_dim() const {
    return input_dim * 2 * n_bands() + (include_identity ? input_dim : 0);
  }
};

inline void validate(const EncodingConfig& c, const std::string& what) {
  if (c.input_dim <= 0) throw ConfigError(what + ": encoding input_dim must be positive");
  if (c.m_min > c.m_max) throw ConfigError(what + ": encoding m_min > m_max");
}

// Truncated Hann window over band j (relative to m_min), opened by alpha.
template <typename T>
T window_weight(int j, T alpha) {
  T x = alpha - T(j);
  x = x < T(0) ? T(0) : (x > T(1) ? T(1) : x);
  return (T(1) - std::cos(T(3.14159265358979323846) * x)) / T(2);
}

// Batched encoding of constant inputs; one row per point. Pass alpha to get
// the windowed variant (identity columns are never windowed).
template <typename T>
Mat<T> posenc_mat(const Mat<T>& x, const EncodingConfig& cfg, std::optional<T> alpha = {}) {
  if (x.cols() != cfg.input_dim) throw ContractError("posenc: input dim mismatch");
  Mat<T> out(x.rows(), cfg.output_dim());
  int64_t off = 0;
  if (cfg.include_identity) {
    out.middleCols(0, cfg.input_dim) = x;
    off += cfg.input_dim;
  }
  for (int j = cfg.m_min; j < cfg.m_max; ++j) {
    T s = T(std::exp2(double(j)));
    T w = alpha ? window_weight(j - cfg.m_min, *alpha) : T(1);
    out.middleCols(off, cfg.input_dim) = w * (s * x.array()).sin().matrix();
    off += cfg.input_dim;
    out.middleCols(off, cfg.input_dim) = w * (s * x.array()).cos().matrix();
    off += cfg.input_dim;
  }
  return out;
}

template <typename T>
Vec<T> posenc(const Vec<T>& x, const EncodingConfig& cfg) {
  Mat<T> row = posenc_mat<T>(x.transpose(), cfg);
  return row.transpose();
}

template <typename T>
Vec<T> windowed_posenc(const Vec<T>& x, T alpha, const EncodingConfig& cfg) {
  Mat<T> row = posenc_mat<T>(x.transpose(), cfg, alpha);
  return row.transpose();
}

// Differentiable encoding of a tape node (used where the encoded quantity is
// itself a network output: warped points, ambient coordinates).
template <typename T>
Value<T> posenc_node(Tape<T>& tape, Value<T> x, const EncodingConfig& cfg,
                     std::optional<T> alpha = {}) {
  if (x.cols() != cfg.input_dim) throw ContractError("posenc_node: input dim mismatch");
  std::vector<Value<T>> parts;
  if (cfg.include_identity) parts.push_back(x);
  for (int j = cfg.m_min; j < cfg.m_max; ++j) {
    T s = T(std::exp2(double(j)));
    T w = alpha ? window_weight(j - cfg.m_min, *alpha) : T(1);
    Value<T> sx = scale(x, s);
    if (w == T(1)) {
      parts.push_back(sin(sx));
      parts.push_back(cos(sx));
    } else {
      parts.push_back(scale(sin(sx), w));
      parts.push_back(scale(cos(sx), w));
    }
  }
  if (parts.size() == 1) return parts[0];
  return concat_cols(parts);
}

// 0 during [0, delay_steps], linear ramp to max_value over ramp_steps, then
// constant.
struct WindowSchedule {
  int64_t delay_steps = 0;
  int64_t ramp_steps = 1;
  double max_value = 1.0;
};

inline double schedule_value(int64_t step, const WindowSchedule& s) {
  if (step < 0) throw ContractError("schedule_value: negative step");
  if (step <= s.delay_steps) return 0.0;
  if (s.ramp_steps <= 0 || step >= s.delay_steps + s.ramp_steps) return s.max_value;
  return s.max_value * double(step - s.delay_steps) / double(s.ramp_steps);
}

}  // namespace hyperfield
