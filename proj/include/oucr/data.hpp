#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "oucr/common.hpp"
#include "oucr/tensor.hpp"

namespace oucr {

/// One fully-sampled ground-truth image. Values are float32-representable by
/// construction so dataset round trips are bit-exact.
struct Sample {
  std::string id;
  Tensor<double> target;  // [2,h,w]
  double norm_scale = 1.0;

  int h() const { return target.extent(1); }
  int w() const { return target.extent(2); }
};

struct EllipseSpec {
  double cx, cy, a, b, theta_deg, value;
};

/// Shepp-Logan-style base set, adjusted to be mirror symmetric about the
/// vertical axis so symmetry can serve as a generation oracle.
inline const std::vector<EllipseSpec>& phantom_base_ellipses() {
  static const std::vector<EllipseSpec> set = {
      {0.0, 0.0, 0.69, 0.92, 0.0, 1.0},        {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8},
      {0.22, 0.0, 0.12, 0.31, -18.0, -0.2},    {-0.22, 0.0, 0.12, 0.31, 18.0, -0.2},
      {0.0, 0.35, 0.21, 0.25, 0.0, 0.1},       {0.0, 0.1, 0.046, 0.046, 0.0, 0.1},
      {0.0, -0.1, 0.046, 0.046, 0.0, 0.1},     {-0.06, -0.605, 0.023, 0.023, 0.0, 0.1},
      {0.06, -0.605, 0.023, 0.023, 0.0, 0.1},  {0.0, -0.605, 0.023, 0.046, 0.0, 0.1},
  };
  return set;
}

namespace detail {

inline void add_ellipse(std::vector<double>& mag, int h, int w, const EllipseSpec& e) {
  const double rad = e.theta_deg * 3.141592653589793238462643383279502884 / 180.0;
  const double ct = std::cos(rad), st = std::sin(rad);
  for (int y = 0; y < h; ++y) {
    const double yy = (2.0 * y + 1.0 - h) / h;
    for (int x = 0; x < w; ++x) {
      const double xx = (2.0 * x + 1.0 - w) / w;
      const double dx = xx - e.cx, dy = yy - e.cy;
      const double u = ct * dx + st * dy;
      const double v = -st * dx + ct * dy;
      if ((u / e.a) * (u / e.a) + (v / e.b) * (v / e.b) <= 1.0)
        mag[std::size_t(y) * std::size_t(w) + std::size_t(x)] += e.value;
    }
  }
}

inline double percentile99(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t idx =
      std::size_t(std::ceil(0.99 * double(v.size()))) - 1;  // nearest-rank
  return v[std::min(idx, v.size() - 1)];
}

}  // namespace detail

/// Piecewise-smooth synthetic phantom with a seeded smooth phase field.
/// complexity 0 is the pure base ellipse set; each level adds random ellipses,
/// and levels >= 2 add fine sinusoidal texture. Magnitudes stay in [0,1].
/// Deterministic in (h, w, seed, complexity).
inline Sample phantom_generate(int h, int w, std::uint64_t seed, int complexity) {
  if (h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0)
    throw ValueError("phantom: dims must be >= 4 and divisible by 4, got " + std::to_string(h) +
                     "x" + std::to_string(w));
  if (complexity < 0) throw ValueError("phantom: complexity must be >= 0");
  const std::int64_t plane = std::int64_t(h) * w;
  std::vector<double> mag(std::size_t(plane), 0.0);
  for (const auto& e : phantom_base_ellipses()) detail::add_ellipse(mag, h, w, e);

  Rng rng(mix_seed(seed, 0xDA7Aull));
  for (int level = 0; level < complexity; ++level) {
    for (int k = 0; k < 4; ++k) {
      EllipseSpec e;
      e.cx = rng.uniform(-0.55, 0.55);
      e.cy = rng.uniform(-0.55, 0.55);
      e.a = rng.uniform(0.02, 0.18);
      e.b = rng.uniform(0.02, 0.18);
      e.theta_deg = rng.uniform(0.0, 180.0);
      const double v = rng.uniform(0.05, 0.15);
      e.value = (rng.next_u64() & 1) ? v : -v;
      detail::add_ellipse(mag, h, w, e);
    }
  }
  if (complexity >= 2) {
    const double fx = rng.uniform(4.0, 9.0), fy = rng.uniform(4.0, 9.0);
    const double p1 = rng.uniform(0.0, 6.283185307179586);
    const double p2 = rng.uniform(0.0, 6.283185307179586);
    for (int y = 0; y < h; ++y) {
      const double yy = (2.0 * y + 1.0 - h) / h;
      for (int x = 0; x < w; ++x) {
        const double xx = (2.0 * x + 1.0 - w) / w;
        auto& m = mag[std::size_t(y) * std::size_t(w) + std::size_t(x)];
        if (m > 0.02)
          m *= 1.0 + 0.08 * std::sin(fx * 3.141592653589793 * xx + p1) *
                         std::sin(fy * 3.141592653589793 * yy + p2);
      }
    }
  }
  for (auto& m : mag) m = std::clamp(m, 0.0, 1.0);

  // Smooth random phase so the imaginary channel carries signal.
  const double c0 = rng.uniform(-1.5, 1.5), c1 = rng.uniform(-1.5, 1.5);
  const double c2 = rng.uniform(-1.5, 1.5), c3 = rng.uniform(-1.5, 1.5);
  const double c4 = rng.uniform(-1.5, 1.5), c5 = rng.uniform(-1.5, 1.5);
  const double sa = rng.uniform(0.0, 0.4), su = rng.uniform(1.0, 3.0);
  const double sv = rng.uniform(1.0, 3.0), sp = rng.uniform(0.0, 6.283185307179586);

  std::vector<double> values(std::size_t(2 * plane));
  for (int y = 0; y < h; ++y) {
    const double yy = (2.0 * y + 1.0 - h) / h;
    for (int x = 0; x < w; ++x) {
      const double xx = (2.0 * x + 1.0 - w) / w;
      const double phi = c0 + c1 * xx + c2 * yy + c3 * xx * yy + c4 * xx * xx + c5 * yy * yy +
                         sa * std::sin(3.141592653589793 * (su * xx + sv * yy) + sp);
      const double m = mag[std::size_t(y) * std::size_t(w) + std::size_t(x)];
      // Snap to float32 so persistence round trips are bit-exact.
      values[std::size_t(y) * std::size_t(w) + std::size_t(x)] = double(float(m * std::cos(phi)));
      values[std::size_t(plane) + std::size_t(y) * std::size_t(w) + std::size_t(x)] =
          double(float(m * std::sin(phi)));
    }
  }
  Sample s;
  s.id = "p" + std::to_string(seed);
  s.target = Tensor<double>::from_data({2, h, w}, std::move(values));
  double scale = detail::percentile99(mag);
  if (scale <= 0.0) scale = *std::max_element(mag.begin(), mag.end());
  if (scale <= 0.0) scale = 1.0;
  s.norm_scale = double(float(scale));
  return s;
}

// --- dataset persistence -----------------------------------------------------
// Layout: <dir>/manifest.json + <dir>/data.bin. The blob stores float32
// little-endian values, per sample the real plane then the imaginary plane,
// row-major. The manifest documents shapes, ids, offsets and norm scales.

struct DatasetManifest {
  int version = 1;
  int h = 0, w = 0;
  std::int64_t count = 0;
  std::string dtype = "float32";
  std::string split;  // train | val | test | (free-form)
  struct Record {
    std::string id;
    std::int64_t offset = 0;
    double norm_scale = 1.0;
  };
  std::vector<Record> records;
};

inline std::int64_t sample_bytes(const DatasetManifest& m) {
  return 2 * std::int64_t(m.h) * m.w * 4;
}

inline DatasetManifest dataset_write(const std::vector<Sample>& samples, const std::string& dir,
                                     const std::string& split_tag) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  DatasetManifest m;
  m.split = split_tag;
  if (!samples.empty()) {
    m.h = samples[0].h();
    m.w = samples[0].w();
  }
  m.count = std::int64_t(samples.size());
  std::string blob;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.h() != m.h || s.w() != m.w)
      throw ShapeError("dataset_write: sample '" + s.id + "' has shape " +
                       shape_str(s.target.shape()) + ", expected 2x" + std::to_string(m.h) + "x" +
                       std::to_string(m.w));
    if (!(s.norm_scale > 0.0))
      throw ValueError("dataset_write: sample '" + s.id + "' has non-positive norm_scale");
    DatasetManifest::Record r;
    r.id = s.id;
    r.offset = std::int64_t(blob.size());
    r.norm_scale = s.norm_scale;
    m.records.push_back(r);
    for (double v : s.target.data()) le::put_f32(blob, float(v));
  }
  write_file_bytes(dir + "/data.bin", blob);

  nlohmann::json j;
  j["version"] = m.version;
  j["h"] = m.h;
  j["w"] = m.w;
  j["count"] = m.count;
  j["dtype"] = m.dtype;
  j["split"] = m.split;
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json e;
    e["id"] = r.id;
    e["offset"] = r.offset;
    e["norm_scale"] = r.norm_scale;
    recs.push_back(e);
  }
  j["samples"] = recs;
  write_file_bytes(dir + "/manifest.json", j.dump(2) + "\n");
  return m;
}

/// Streaming reader; validates the manifest on open and the payload length
/// against the record table.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& dir) : dir_(dir) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file_bytes(dir + "/manifest.json"));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corrupt manifest in " + dir + ": " + e.what());
    }
    try {
      m_.version = j.at("version").get<int>();
      if (m_.version != 1)
        throw DataError("manifest " + dir + ": unsupported version " +
                        std::to_string(m_.version));
      m_.h = j.at("h").get<int>();
      m_.w = j.at("w").get<int>();
      m_.count = j.at("count").get<std::int64_t>();
      m_.dtype = j.at("dtype").get<std::string>();
      m_.split = j.value("split", "");
      if (m_.dtype != "float32")
        throw DataError("manifest " + dir + ": unsupported dtype " + m_.dtype);
      for (const auto& e : j.at("samples")) {
        DatasetManifest::Record r;
        r.id = e.at("id").get<std::string>();
        r.offset = e.at("offset").get<std::int64_t>();
        r.norm_scale = e.at("norm_scale").get<double>();
        m_.records.push_back(r);
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corrupt manifest in " + dir + ": " + e.what());
    }
    if (std::int64_t(m_.records.size()) != m_.count)
      throw DataError("corrupt manifest in " + dir + ": count " + std::to_string(m_.count) +
                      " does not match " + std::to_string(m_.records.size()) + " records");
    const std::int64_t sb = sample_bytes(m_);
    for (std::size_t i = 0; i < m_.records.size(); ++i) {
      if (m_.records[i].offset != std::int64_t(i) * sb)
        throw DataError("corrupt manifest in " + dir + ": offsets are not strictly increasing " +
                        "contiguous records");
      if (!(m_.records[i].norm_scale > 0.0))
        throw DataError("corrupt manifest in " + dir + ": non-positive norm_scale for '" +
                        m_.records[i].id + "'");
    }
    blob_.open(dir + "/data.bin", std::ios::binary);
    if (!blob_) throw DataError("cannot open " + dir + "/data.bin");
    blob_.seekg(0, std::ios::end);
    const std::int64_t size = std::int64_t(blob_.tellg());
    const std::int64_t expected = m_.count * sb;
    if (size != expected)
      throw DataError("truncated payload in " + dir + ": expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(size));
    blob_.seekg(0);
  }

  const DatasetManifest& manifest() const { return m_; }

  bool next(Sample& out) {
    if (cursor_ >= m_.count) return false;
    const auto& r = m_.records[std::size_t(cursor_)];
    const std::int64_t n = 2 * std::int64_t(m_.h) * m_.w;
    std::vector<char> raw(std::size_t(n) * 4);
    blob_.seekg(r.offset);
    blob_.read(raw.data(), std::streamsize(raw.size()));
    if (!blob_)
      throw DataError("truncated payload in " + dir_ + " while reading sample '" + r.id + "'");
    std::vector<double> values(static_cast<std::size_t>(n));
    const unsigned char* p = reinterpret_cast<const unsigned char*>(raw.data());
    for (std::int64_t i = 0; i < n; ++i)
      values[std::size_t(i)] = double(le::get_f32(p + 4 * i));
    out.id = r.id;
    out.target = Tensor<double>::from_data({2, m_.h, m_.w}, std::move(values));
    out.norm_scale = r.norm_scale;
    ++cursor_;
    return true;
  }

 private:
  std::string dir_;
  DatasetManifest m_;
  std::ifstream blob_;
  std::int64_t cursor_ = 0;
};

inline std::vector<Sample> dataset_read_all(const std::string& dir) {
  DatasetReader reader(dir);
  std::vector<Sample> out;
  out.reserve(std::size_t(reader.manifest().count));
  Sample s;
  while (reader.next(s)) out.push_back(s);
  return out;
}

// --- splits -------------------------------------------------------------------

struct SplitIds {
  std::vector<int> train, val, test;
};

/// Seeded disjoint partition of 0..n-1. Train/val sizes are floor(frac*n);
/// the remainder goes to test. Default fractions follow a 102/14/28-of-144
/// pattern.
inline SplitIds make_split(int n_total, const std::array<double, 3>& fractions,
                           std::uint64_t seed) {
  if (n_total < 3) throw ValueError("make_split: need at least 3 samples");
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValueError("make_split: fractions must sum to 1, got " + std::to_string(sum));
  for (double f : fractions)
    if (f < 0) throw ValueError("make_split: fractions must be non-negative");
  std::vector<int> ids(static_cast<std::size_t>(n_total));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(mix_seed(seed, 0x5F171ull));
  rng.shuffle(ids);
  const int n_train = int(std::floor(fractions[0] * n_total));
  const int n_val = int(std::floor(fractions[1] * n_total));
  SplitIds s;
  s.train.assign(ids.begin(), ids.begin() + n_train);
  s.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  s.test.assign(ids.begin() + n_train + n_val, ids.end());
  return s;
}

inline constexpr std::array<double, 3> kDefaultSplitFractions{0.71, 0.10, 0.19};

}  // namespace oucr
