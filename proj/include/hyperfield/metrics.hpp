#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include "hyperfield/image.hpp"

namespace hyperfield {

constexpr double kPsnrCap = 99.0;

// -10 log10(MSE) over [0,1] RGB, capped at 99 dB for identical images.
inline double psnr(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ContractError("psnr: image shapes differ");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = double(a.data[i]) - double(b.data[i]);
    mse += d * d;
  }
  mse /= double(a.data.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

// 4-connected component count of {plane > threshold}.
template <typename T>
int mask_components(const Vec<T>& plane, int width, int height, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ContractError("mask_components: threshold must be in (0,1)");
  if (plane.size() != int64_t(width) * height)
    throw ContractError("mask_components: size mismatch");
  std::vector<char> seen(size_t(plane.size()), 0);
  std::vector<int> stack;
  int components = 0;
  auto on = [&](int64_t i) { return double(plane(i)) > threshold; };
  for (int64_t start = 0; start < plane.size(); ++start) {
    if (seen[size_t(start)] || !on(start)) continue;
    ++components;
    stack.push_back(int(start));
    seen[size_t(start)] = 1;
    while (!stack.empty()) {
      int i = stack.back();
      stack.pop_back();
      int x = i % width, y = i / width;
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || nx[k] >= width || ny[k] < 0 || ny[k] >= height) continue;
        int j = ny[k] * width + nx[k];
        if (!seen[size_t(j)] && on(j)) {
          seen[size_t(j)] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return components;
}

inline int mask_components(const Image& acc, double threshold) {
  if (acc.channels != 1) throw ContractError("mask_components: expected 1 channel");
  Vec<double> plane(int64_t(acc.data.size()));
  for (size_t i = 0; i < acc.data.size(); ++i) plane(int64_t(i)) = acc.data[i];
  return mask_components(plane, acc.width, acc.height, threshold);
}

struct MetricRecord {
  std::string name;
  int frame = -1;
  double value = 0.0;
  std::string units;
};

constexpr const char* kMetricsHeader = "# hyperfield-metrics v1\tname\tframe\tvalue\tunits";

// Append-only TSV with a versioned header line.
inline void append_metrics(const std::string& path, const std::vector<MetricRecord>& records) {
  bool fresh = !std::filesystem::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw IoError("cannot open metrics file: " + path);
  if (fresh) os << kMetricsHeader << "\n";
  for (const auto& r : records)
    os << r.name << "\t" << r.frame << "\t" << r.value << "\t" << r.units << "\n";
}

}  // namespace hyperfield
