#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hyperfield/rng.hpp"
#include "hyperfield/tape.hpp"

namespace hyperfield {

enum class Activation { Relu, None };

// Fixed-architecture MLP: `depth` hidden layers of `width` units, layers in
// skip_layers re-concatenate the (encoded) input before their affine map,
// then one affine output head with no activation.
struct MLPSpec {
  int input_dim = 0;
  int depth = 1;
  int width = 64;
  std::vector<int> skip_layers;
  int output_dim = 1;
  std::vector<Activation> activations;       // per hidden layer; empty = all Relu
  std::optional<double> final_init_scale;    // N(0, s) head init; unset = fan-in uniform
};

inline void validate(const MLPSpec& s, const std::string& what) {
  if (s.input_dim <= 0 || s.depth < 1 || s.width <= 0 || s.output_dim <= 0)
    throw ConfigError(what + ": non-positive MLP dimension");
  for (int l : s.skip_layers)
    if (l < 1 || l >= s.depth)
      throw ConfigError(what + ": skip layer " + std::to_string(l) + " outside [1, depth)");
  if (!s.activations.empty() && int(s.activations.size()) != s.depth)
    throw ConfigError(what + ": activation list length != depth");
  if (s.final_init_scale && *s.final_init_scale <= 0)
    throw ConfigError(what + ": final_init_scale must be > 0");
}

namespace detail {

inline bool has_skip(const MLPSpec& s, int layer) {
  for (int l : s.skip_layers)
    if (l == layer) return true;
  return false;
}

inline int layer_fan_in(const MLPSpec& s, int layer) {
  if (layer == 0) return s.input_dim;
  return s.width + (has_skip(s, layer) ? s.input_dim : 0);
}

template <typename T>
void fill_he_uniform(Mat<T>& m, Rng& rng) {
  double limit = std::sqrt(6.0 / double(m.cols()));
  for (int64_t r = 0; r < m.rows(); ++r)
    for (int64_t c = 0; c < m.cols(); ++c) m(r, c) = T(rng.uniform(-limit, limit));
}

template <typename T>
void fill_normal(Mat<T>& m, double stddev, Rng& rng) {
  for (int64_t r = 0; r < m.rows(); ++r)
    for (int64_t c = 0; c < m.cols(); ++c) m(r, c) = T(stddev * rng.normal());
}

}  // namespace detail

// Single affine layer "<prefix>.w" / "<prefix>.b". Weight init is fan-in
// uniform unless normal_init_scale is given.
template <typename T>
void init_affine(ParamStore<T>& store, const std::string& prefix, int out_dim, int in_dim,
                 uint64_t seed, std::optional<double> normal_init_scale = std::nullopt) {
  auto& w = store.add(prefix + ".w", {uint64_t(out_dim), uint64_t(in_dim)});
  Rng rng = Rng::stream(seed, {Rng::hash_str(prefix + ".w")});
  if (normal_init_scale)
    detail::fill_normal(w.values, *normal_init_scale, rng);
  else
    detail::fill_he_uniform(w.values, rng);
  store.add(prefix + ".b", {uint64_t(out_dim)});  // zero biases
}

template <typename T>
Value<T> affine(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, Value<T> x) {
  return linear(x, tape.param(store.at(prefix + ".w")), tape.param(store.at(prefix + ".b")));
}

template <typename T>
void init_mlp_params(ParamStore<T>& store, const std::string& prefix, const MLPSpec& spec,
                     uint64_t seed) {
  validate(spec, prefix);
  for (int l = 0; l < spec.depth; ++l)
    init_affine<T>(store, prefix + ".l" + std::to_string(l), spec.width,
                   detail::layer_fan_in(spec, l), seed);
  init_affine<T>(store, prefix + ".out", spec.output_dim, spec.width, seed,
                 spec.final_init_scale);
}

// Hidden stack only; returns the last hidden activation (callers attach heads).
template <typename T>
Value<T> mlp_trunk(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix,
                   const MLPSpec& spec, Value<T> input) {
  if (input.cols() != spec.input_dim)
    throw ConfigError(prefix + " layer 0: input dim " + std::to_string(input.cols()) +
                      " != spec input_dim " + std::to_string(spec.input_dim));
  Value<T> h = input;
  for (int l = 0; l < spec.depth; ++l) {
    if (l > 0 && detail::has_skip(spec, l)) h = concat_cols<T>({h, input});
    h = affine(tape, store, prefix + ".l" + std::to_string(l), h);
    Activation act = spec.activations.empty() ? Activation::Relu : spec.activations[size_t(l)];
    if (act == Activation::Relu) h = relu(h);
  }
  return h;
}

template <typename T>
Value<T> mlp_forward(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix,
                     const MLPSpec& spec, Value<T> input) {
  return affine(tape, store, prefix + ".out", mlp_trunk(tape, store, prefix, spec, input));
}

}  // namespace hyperfield
