#pragma once

#include <cstring>
#include <fstream>
#include <memory>
#include <unordered_map>
#include <vector>

#include "hyperfield/common.hpp"

namespace hyperfield {

// One named tensor with a paired gradient buffer. Rank 0/1 tensors are held
// as 1x1 / nx1 matrices; the logical shape is kept separately for
// serialization.
template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<uint64_t> shape;
  Mat<T> values;
  Mat<T> grad;
  bool trainable = true;

  int64_t size() const { return values.size(); }
};

template <typename T>
class ParamStore {
 public:
  ParamTensor<T>& add(const std::string& name, std::vector<uint64_t> shape, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter tensor: " + name);
    if (shape.size() > 2) throw ConfigError("parameter rank > 2 unsupported: " + name);
    int64_t rows = 1, cols = 1;
    if (shape.size() == 1) rows = int64_t(shape[0]);
    if (shape.size() == 2) {
      rows = int64_t(shape[0]);
      cols = int64_t(shape[1]);
    }
    auto pt = std::make_unique<ParamTensor<T>>();
    pt->name = name;
    pt->shape = std::move(shape);
    pt->values = Mat<T>::Zero(rows, cols);
    pt->grad = Mat<T>::Zero(rows, cols);
    pt->trainable = trainable;
    index_[name] = int(tensors_.size());
    tensors_.push_back(std::move(pt));
    return *tensors_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  ParamTensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter tensor: " + name);
    return *tensors_[it->second];
  }
  const ParamTensor<T>& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->at(name);
  }

  // insertion order, which is also the optimizer and serialization order
  size_t size() const { return tensors_.size(); }
  ParamTensor<T>& operator[](size_t i) { return *tensors_[i]; }
  const ParamTensor<T>& operator[](size_t i) const { return *tensors_[i]; }

  void zero_grads() {
    for (auto& t : tensors_) t->grad.setZero();
  }

  int64_t n_params() const {
    int64_t n = 0;
    for (auto& t : tensors_) n += t->size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<ParamTensor<T>>> tensors_;  // stable addresses
  std::unordered_map<std::string, int> index_;
};

// Freeze / zero all tensors under a name prefix (ablation plumbing).
template <typename T>
void freeze_prefix(ParamStore<T>& store, const std::string& prefix) {
  for (size_t i = 0; i < store.size(); ++i)
    if (store[i].name.rfind(prefix, 0) == 0) store[i].trainable = false;
}

template <typename T>
void zero_prefix(ParamStore<T>& store, const std::string& prefix) {
  for (size_t i = 0; i < store.size(); ++i)
    if (store[i].name.rfind(prefix, 0) == 0) store[i].values.setZero();
}

// ---------------------------------------------------------------------------
// Checkpoint format: little-endian, magic "HYPF", u32 version, u32 tensor
// count, then per tensor: u16 name length + name, u8 rank, u64 dims, u8 dtype
// tag (1 = f32, 2 = f64), raw values row-major. Gradients ride along as
// "<name>.g", Adam moments as "<name>.m" / "<name>.v".
// ---------------------------------------------------------------------------

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}
template <typename U>
void put_int(std::ostream& os, U v) {
  put_bytes(os, &v, sizeof(v));  // little-endian host
}
inline void get_bytes(std::istream& is, void* p, size_t n) {
  if (!is.read(reinterpret_cast<char*>(p), std::streamsize(n)))
    throw IoError("checkpoint: unexpected end of file");
}
template <typename U>
U get_int(std::istream& is) {
  U v;
  get_bytes(is, &v, sizeof(v));
  return v;
}

template <typename T>
void put_tensor(std::ostream& os, const std::string& name, const std::vector<uint64_t>& shape,
                const Mat<T>& m) {
  if (name.size() > 0xffff) throw IoError("checkpoint: tensor name too long");
  put_int<uint16_t>(os, uint16_t(name.size()));
  put_bytes(os, name.data(), name.size());
  put_int<uint8_t>(os, uint8_t(shape.size()));
  for (uint64_t d : shape) put_int<uint64_t>(os, d);
  put_int<uint8_t>(os, sizeof(T) == 4 ? 1 : 2);
  // row-major
  for (int64_t r = 0; r < m.rows(); ++r)
    for (int64_t c = 0; c < m.cols(); ++c) {
      T v = m(r, c);
      put_bytes(os, &v, sizeof(T));
    }
}

struct RawTensor {
  std::vector<uint64_t> shape;
  std::vector<double> data;  // widened on read
};

inline RawTensor get_tensor(std::istream& is, std::string& name_out) {
  uint16_t nlen = get_int<uint16_t>(is);
  name_out.resize(nlen);
  get_bytes(is, name_out.data(), nlen);
  RawTensor t;
  uint8_t rank = get_int<uint8_t>(is);
  uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    t.shape.push_back(get_int<uint64_t>(is));
    count *= t.shape.back();
  }
  uint8_t tag = get_int<uint8_t>(is);
  if (tag != 1 && tag != 2) throw IoError("checkpoint: bad dtype tag for " + name_out);
  t.data.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    if (tag == 1) {
      float v;
      get_bytes(is, &v, sizeof(v));
      t.data[i] = double(v);
    } else {
      double v;
      get_bytes(is, &v, sizeof(v));
      t.data[i] = v;
    }
  }
  return t;
}

template <typename T>
void fill_from_raw(Mat<T>& m, const RawTensor& raw, const std::string& name) {
  if (uint64_t(m.size()) != raw.data.size())
    throw IoError("checkpoint: size mismatch for tensor " + name);
  size_t k = 0;
  for (int64_t r = 0; r < m.rows(); ++r)
    for (int64_t c = 0; c < m.cols(); ++c) m(r, c) = T(raw.data[k++]);
}

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

// Extra state saved next to the parameters (optimizer moments, counters).
template <typename T>
struct CheckpointExtras {
  std::unordered_map<std::string, Mat<T>> moments;  // "<name>.m" / "<name>.v"
  uint64_t adam_step = 0;
  uint64_t train_step = 0;
};

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                     const CheckpointExtras<T>* extras = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write("HYPF", 4);
  detail::put_int<uint32_t>(os, kCheckpointVersion);

  uint32_t count = uint32_t(store.size()) * 2;  // values + grads
  if (extras) count += uint32_t(extras->moments.size()) + 2;
  detail::put_int<uint32_t>(os, count);

  for (size_t i = 0; i < store.size(); ++i) {
    const auto& t = store[i];
    detail::put_tensor(os, t.name, t.shape, t.values);
    detail::put_tensor(os, t.name + ".g", t.shape, t.grad);
  }
  if (extras) {
    for (size_t i = 0; i < store.size(); ++i) {
      const auto& t = store[i];
      for (const char* suf : {".m", ".v"}) {
        auto it = extras->moments.find(t.name + suf);
        if (it != extras->moments.end())
          detail::put_tensor(os, it->first, t.shape, it->second);
      }
    }
    Mat<T> scalar(1, 1);
    scalar(0, 0) = T(extras->adam_step);
    detail::put_tensor(os, "adam.t", {}, scalar);
    scalar(0, 0) = T(extras->train_step);
    detail::put_tensor(os, "train.step", {}, scalar);
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

// Loads into an existing store (shapes must already match); returns extras.
template <typename T>
CheckpointExtras<T> load_checkpoint(const std::string& path, ParamStore<T>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  detail::get_bytes(is, magic, 4);
  if (std::memcmp(magic, "HYPF", 4) != 0) throw IoError("not a HYPF checkpoint: " + path);
  uint32_t version = detail::get_int<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  uint32_t count = detail::get_int<uint32_t>(is);

  CheckpointExtras<T> extras;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name;
    detail::RawTensor raw = detail::get_tensor(is, name);
    if (name == "adam.t") {
      extras.adam_step = uint64_t(raw.data.at(0));
    } else if (name == "train.step") {
      extras.train_step = uint64_t(raw.data.at(0));
    } else if (name.size() > 2 && name[name.size() - 2] == '.' &&
               (name.back() == 'm' || name.back() == 'v' || name.back() == 'g')) {
      std::string base = name.substr(0, name.size() - 2);
      if (!store.contains(base)) throw IoError("checkpoint tensor for unknown base: " + name);
      auto& t = store.at(base);
      if (name.back() == 'g') {
        detail::fill_from_raw(t.grad, raw, name);
      } else {
        Mat<T> m(t.values.rows(), t.values.cols());
        detail::fill_from_raw(m, raw, name);
        extras.moments[name] = std::move(m);
      }
    } else {
      if (!store.contains(name)) throw IoError("checkpoint contains unknown tensor: " + name);
      detail::fill_from_raw(store.at(name).values, raw, name);
    }
  }
  return extras;
}

}  // namespace hyperfield
