#pragma once

#include <unordered_map>

#include "hyperfield/param_store.hpp"

namespace hyperfield {

template <typename T>
struct AdamState {
  int64_t step = 0;  // t, number of applied updates
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  struct Moments {
    Mat<T> m, v;
  };
  std::unordered_map<std::string, Moments> moments;

  Moments& for_tensor(const ParamTensor<T>& p) {
    auto it = moments.find(p.name);
    if (it == moments.end()) {
      Moments mo;
      mo.m = Mat<T>::Zero(p.values.rows(), p.values.cols());
      mo.v = Mat<T>::Zero(p.values.rows(), p.values.cols());
      it = moments.emplace(p.name, std::move(mo)).first;
    }
    return it->second;
  }
};

// Bias-corrected Adam over all trainable tensors, then zeroes the gradients.
template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state, T lr) {
  for (size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    if (p.trainable && !all_finite(p.grad))
      throw ContractError("adam_step: non-finite gradient in tensor " + p.name);
  }
  state.step += 1;
  T c1 = T(1) - T(std::pow(double(state.beta1), double(state.step)));
  T c2 = T(1) - T(std::pow(double(state.beta2), double(state.step)));
  for (size_t i = 0; i < store.size(); ++i) {
    auto& p = store[i];
    if (!p.trainable) continue;
    auto& mo = state.for_tensor(p);
    mo.m = state.beta1 * mo.m + (T(1) - state.beta1) * p.grad;
    mo.v.array() = state.beta2 * mo.v.array() + (T(1) - state.beta2) * p.grad.array().square();
    p.values.array() -=
        lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + state.eps);
  }
  store.zero_grads();
}

// Geometric interpolation from lr_start at step 0 to lr_end at step `total`,
// exact at both endpoints.
template <typename T>
T lr_schedule(int64_t step, int64_t total, T lr_start, T lr_end) {
  if (lr_start <= T(0) || lr_end <= T(0))
    throw ConfigError("lr_schedule: learning rates must be positive");
  if (step < 0 || step > total) throw ContractError("lr_schedule: step outside [0, total]");
  if (step == 0) return lr_start;
  if (step == total) return lr_end;
  double f = double(step) / double(total);
  return T(double(lr_start) * std::pow(double(lr_end) / double(lr_start), f));
}

}  // namespace hyperfield
