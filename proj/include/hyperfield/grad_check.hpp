#pragma once

#include <functional>

#include "hyperfield/rng.hpp"
#include "hyperfield/tape.hpp"

namespace hyperfield {

// `build` must construct the loss graph afresh on the given tape, as a pure
// function of the store contents.
template <typename T>
using LossBuilder = std::function<Value<T>(Tape<T>&)>;

template <typename T>
T compute_grads(const LossBuilder<T>& build, ParamStore<T>& store) {
  store.zero_grads();
  Tape<T> tape;
  Value<T> loss = build(tape);
  tape.backward(loss);
  tape.merge_param_grads();
  return loss.val()(0, 0);
}

template <typename T>
T eval_loss(const LossBuilder<T>& build) {
  Tape<T> tape;
  return build(tape).val()(0, 0);
}

// Central finite differences against the gradients currently held in the
// store, over up to `samples_per_tensor` entries of each trainable tensor.
// Returns max over checked entries of |analytic - fd| / max(1, |analytic|).
template <typename T>
double max_fd_rel_error(const LossBuilder<T>& build, ParamStore<T>& store, double h,
                        int samples_per_tensor, uint64_t seed) {
  double worst = 0.0;
  for (size_t ti = 0; ti < store.size(); ++ti) {
    auto& p = store[ti];
    if (!p.trainable) continue;
    Rng rng = Rng::stream(seed, {Rng::hash_str(p.name), 0xfd});
    int64_t n = p.size();
    int64_t checks = samples_per_tensor <= 0 ? n : std::min<int64_t>(n, samples_per_tensor);
    for (int64_t k = 0; k < checks; ++k) {
      int64_t flat = (checks == n) ? k : int64_t(rng.next_u64() % uint64_t(n));
      int64_t r = flat / p.values.cols(), c = flat % p.values.cols();
      T saved = p.values(r, c);
      p.values(r, c) = saved + T(h);
      double lp = double(eval_loss(build));
      p.values(r, c) = saved - T(h);
      double lm = double(eval_loss(build));
      p.values(r, c) = saved;
      double fd = (lp - lm) / (2.0 * h);
      double analytic = double(p.grad(r, c));
      double rel = std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

template <typename T>
double grad_check(const LossBuilder<T>& build, ParamStore<T>& store, double h,
                  int samples_per_tensor = 0, uint64_t seed = 0) {
  compute_grads(build, store);
  return max_fd_rel_error(build, store, h, samples_per_tensor, seed);
}

}  // namespace hyperfield
