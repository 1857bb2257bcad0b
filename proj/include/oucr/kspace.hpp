#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "oucr/common.hpp"
#include "oucr/fft.hpp"
#include "oucr/tensor.hpp"

namespace oucr {

/// Cartesian column-sampling pattern broadcast over rows, fastMRI style: a
/// fully sampled central band plus uniformly random phase-encode columns.
struct Mask {
  int h = 0, w = 0;
  int af = 0;
  double center_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> cols;  // size w, values 0/1

  bool col(int x) const { return cols[std::size_t(x)] != 0; }

  int sampled_columns() const {
    return int(std::accumulate(cols.begin(), cols.end(), 0));
  }

  double realized_af() const { return double(w) / double(sampled_columns()); }

  /// Full H*W plane of the given scalar type (1 at sampled positions).
  template <class S>
  std::shared_ptr<const std::vector<S>> plane(bool complement = false) const {
    auto p = std::make_shared<std::vector<S>>(std::size_t(h) * std::size_t(w));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const bool on = col(x) != complement;
        (*p)[std::size_t(y) * std::size_t(w) + std::size_t(x)] = on ? S(1) : S(0);
      }
    return p;
  }
};

inline double center_fraction_for_af(int af) {
  if (af == 4) return 0.08;
  if (af == 8) return 0.04;
  throw ValueError("mask: acceleration factor must be 4 or 8, got " + std::to_string(af));
}

/// fastMRI-convention mask: ceil(cf*w) central columns always on, then random
/// columns without replacement up to round(w/af) total. Deterministic in seed.
/// center_fraction_override > 0 replaces the per-af default.
inline Mask mask_generate(int h, int w, int af, std::uint64_t seed,
                          double center_fraction_override = 0.0) {
  if (h < 1) throw ValueError("mask: h must be positive");
  if (w < 16) throw ValueError("mask: w must be >= 16, got " + std::to_string(w));
  const double cf =
      center_fraction_override > 0.0 ? center_fraction_override : center_fraction_for_af(af);
  const int n_center = int(std::ceil(cf * w));
  const int n_total = int(std::llround(double(w) / double(af)));
  if (n_total < n_center)
    throw ValueError("mask: infeasible, target columns (" + std::to_string(n_total) +
                     ") < fully sampled center columns (" + std::to_string(n_center) + ")");
  Mask m;
  m.h = h;
  m.w = w;
  m.af = af;
  m.center_fraction = cf;
  m.seed = seed;
  m.cols.assign(std::size_t(w), 0);
  const int pad = (w - n_center + 1) / 2;
  for (int x = pad; x < pad + n_center; ++x) m.cols[std::size_t(x)] = 1;
  std::vector<int> rest;
  rest.reserve(std::size_t(w - n_center));
  for (int x = 0; x < w; ++x)
    if (!m.cols[std::size_t(x)]) rest.push_back(x);
  Rng rng(seed);
  int need = n_total - n_center;
  // Partial Fisher-Yates over the non-center columns.
  for (int k = 0; k < need; ++k) {
    const std::size_t j = std::size_t(k) + std::size_t(rng.below(rest.size() - std::size_t(k)));
    std::swap(rest[std::size_t(k)], rest[j]);
    m.cols[std::size_t(rest[std::size_t(k)])] = 1;
  }
  return m;
}

/// Measured k-space: values are exactly zero at unsampled positions.
template <class S>
struct KSpaceData {
  Tensor<S> values;  // [2,h,w]
  Mask mask;
};

template <class S>
void check_mask_shape(const Tensor<S>& img, const Mask& mask, const char* op) {
  check_complex_image(img, op);
  if (img.extent(1) != mask.h || img.extent(2) != mask.w)
    throw ShapeError(std::string(op) + ": image " + shape_str(img.shape()) +
                     " does not match mask " + std::to_string(mask.h) + "x" +
                     std::to_string(mask.w));
}

/// mask ⊙ fft2c(image). Simulation-side operator; not differentiable.
template <class S>
KSpaceData<S> forward_encode(const Tensor<S>& image, const Mask& mask) {
  check_mask_shape(image, mask, "forward_encode");
  const int h = mask.h, w = mask.w;
  std::vector<S> k = fft2c_raw(image.data(), h, w, false);
  const std::int64_t plane = std::int64_t(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (!mask.col(x)) {
        k[std::size_t(y * w + x)] = S(0);
        k[std::size_t(y * w + x + plane)] = S(0);
      }
  return {Tensor<S>::from_data({2, h, w}, std::move(k)), mask};
}

/// Seeded Gaussian noise on the sampled k-space entries (robustness option,
/// off by default in every pipeline).
template <class S>
void add_kspace_noise(KSpaceData<S>& x, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return;
  Rng rng(seed);
  auto& v = x.values.data();
  const int h = x.mask.h, w = x.mask.w;
  const std::int64_t plane = std::int64_t(h) * w;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      if (x.mask.col(xx)) {
        v[std::size_t(y * w + xx)] += S(sigma * rng.normal());
        v[std::size_t(y * w + xx + plane)] += S(sigma * rng.normal());
      }
}

/// Zero-filled reconstruction x̄ = ifft2c(x).
template <class S>
Tensor<S> zero_fill(const KSpaceData<S>& x) {
  const int h = x.mask.h, w = x.mask.w;
  return Tensor<S>::from_data({2, h, w}, fft2c_raw(x.values.data(), h, w, true));
}

/// Hard data consistency: F⁻¹[ D·x + (1−D)·F[z] ]. Differentiable in z; the
/// gradient flows through (1−D) in k-space.
template <class S>
Tensor<S> data_consistency(const Tensor<S>& z, const KSpaceData<S>& x, const Mask& mask) {
  check_mask_shape(z, mask, "data_consistency");
  if (!shape_eq(z.shape(), x.values.shape()))
    throw ShapeError("data_consistency: z " + shape_str(z.shape()) + " vs k-space " +
                     shape_str(x.values.shape()));
  Tensor<S> kz = fft2c(z);
  Tensor<S> kept = mul_mask_hw(kz, mask.template plane<S>(/*complement=*/true));
  Tensor<S> combined = add(kept, x.values.detach());
  return ifft2c(combined);
}

// --- mask persistence: 1 byte per entry, row-major, plus a JSON sidecar ---

inline void mask_save(const Mask& m, const std::string& bin_path, const std::string& json_path) {
  std::string bytes;
  bytes.reserve(std::size_t(m.h) * std::size_t(m.w));
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) bytes.push_back(m.col(x) ? char(1) : char(0));
  write_file_bytes(bin_path, bytes);
  nlohmann::json j;
  j["h"] = m.h;
  j["w"] = m.w;
  j["af"] = m.af;
  j["center_fraction"] = m.center_fraction;
  j["seed"] = m.seed;
  write_file_bytes(json_path, j.dump(2) + "\n");
}

inline Mask mask_load(const std::string& bin_path, const std::string& json_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(json_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("mask sidecar " + json_path + ": " + e.what());
  }
  Mask m;
  try {
    m.h = j.at("h").get<int>();
    m.w = j.at("w").get<int>();
    m.af = j.at("af").get<int>();
    m.center_fraction = j.at("center_fraction").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("mask sidecar " + json_path + ": " + e.what());
  }
  const std::string bytes = read_file_bytes(bin_path);
  if (std::int64_t(bytes.size()) != std::int64_t(m.h) * m.w)
    throw DataError("mask " + bin_path + ": expected " + std::to_string(std::int64_t(m.h) * m.w) +
                    " bytes, found " + std::to_string(bytes.size()));
  m.cols.assign(std::size_t(m.w), 0);
  for (int x = 0; x < m.w; ++x) m.cols[std::size_t(x)] = std::uint8_t(bytes[std::size_t(x)]);
  // Pattern must be constant along rows.
  for (int y = 1; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (std::uint8_t(bytes[std::size_t(y) * std::size_t(m.w) + std::size_t(x)]) !=
          m.cols[std::size_t(x)])
        throw DataError("mask " + bin_path + ": pattern varies along rows");
  return m;
}

}  // namespace oucr
