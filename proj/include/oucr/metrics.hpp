#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oucr/common.hpp"
#include "oucr/fft.hpp"
#include "oucr/tensor.hpp"

namespace oucr {

inline std::vector<double> magnitude_of(const Tensor<double>& z) {
  check_complex_image(z, "magnitude_of");
  const std::int64_t plane = std::int64_t(z.extent(1)) * z.extent(2);
  std::vector<double> m(static_cast<std::size_t>(plane));
  const double* re = z.data().data();
  const double* im = re + plane;
  for (std::int64_t i = 0; i < plane; ++i)
    m[std::size_t(i)] = std::hypot(re[i], im[i]);
  return m;
}

/// 20*log10(data_range/RMSE) with data_range = max(reference). Identical
/// images give +infinity; the CSV writer spells that "inf".
inline double psnr(const std::vector<double>& recon, const std::vector<double>& reference) {
  if (recon.size() != reference.size())
    throw ShapeError("psnr: size mismatch " + std::to_string(recon.size()) + " vs " +
                     std::to_string(reference.size()));
  if (reference.empty()) throw ShapeError("psnr: empty images");
  const double range = *std::max_element(reference.begin(), reference.end());
  if (range <= 0.0) throw ValueError("psnr: reference image is all zero");
  double sq = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double d = recon[i] - reference[i];
    sq += d * d;
  }
  const double rmse = std::sqrt(sq / double(recon.size()));
  if (rmse == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(range / rmse);
}

/// Mean local SSIM over all fully contained 7x7 windows, uniform weighting,
/// population moments, K1=0.01, K2=0.03, data_range = max(reference).
inline double ssim(const std::vector<double>& recon, const std::vector<double>& reference,
                   int h, int w) {
  constexpr int kWin = 7;
  constexpr double kK1 = 0.01, kK2 = 0.03;
  if (recon.size() != reference.size() ||
      std::int64_t(recon.size()) != std::int64_t(h) * w)
    throw ShapeError("ssim: size mismatch");
  if (h < kWin || w < kWin)
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " smaller than the " + std::to_string(kWin) + "x" + std::to_string(kWin) +
                     " window");
  const double range = *std::max_element(reference.begin(), reference.end());
  const double c1 = (kK1 * range) * (kK1 * range);
  const double c2 = (kK2 * range) * (kK2 * range);

  // Integral images for x, y, x^2, y^2, xy.
  const int ih = h + 1, iw = w + 1;
  std::vector<double> sx(std::size_t(ih) * iw, 0.0), sy(sx), sxx(sx), syy(sx), sxy(sx);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = recon[std::size_t(y) * std::size_t(w) + std::size_t(x)];
      const double b = reference[std::size_t(y) * std::size_t(w) + std::size_t(x)];
      const std::size_t i11 = std::size_t(y + 1) * std::size_t(iw) + std::size_t(x + 1);
      const std::size_t i10 = i11 - 1;
      const std::size_t i01 = i11 - std::size_t(iw);
      const std::size_t i00 = i01 - 1;
      sx[i11] = a + sx[i10] + sx[i01] - sx[i00];
      sy[i11] = b + sy[i10] + sy[i01] - sy[i00];
      sxx[i11] = a * a + sxx[i10] + sxx[i01] - sxx[i00];
      syy[i11] = b * b + syy[i10] + syy[i01] - syy[i00];
      sxy[i11] = a * b + sxy[i10] + sxy[i01] - sxy[i00];
    }
  auto window_sum = [iw](const std::vector<double>& s, int y, int x) {
    const std::size_t r0 = std::size_t(y), r1 = std::size_t(y + kWin);
    const std::size_t c0 = std::size_t(x), c1 = std::size_t(x + kWin);
    return s[r1 * std::size_t(iw) + c1] - s[r1 * std::size_t(iw) + c0] -
           s[r0 * std::size_t(iw) + c1] + s[r0 * std::size_t(iw) + c0];
  };
  const double n = double(kWin * kWin);
  double acc = 0.0;
  std::int64_t count = 0;
  for (int y = 0; y + kWin <= h; ++y)
    for (int x = 0; x + kWin <= w; ++x) {
      const double mx = window_sum(sx, y, x) / n;
      const double my = window_sum(sy, y, x) / n;
      const double vx = window_sum(sxx, y, x) / n - mx * mx;
      const double vy = window_sum(syy, y, x) / n - my * my;
      const double cxy = window_sum(sxy, y, x) / n - mx * my;
      const double num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
      const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
      acc += num / den;
      ++count;
    }
  return acc / double(count);
}

// --- k-space band analysis (same mask applied to both images) ---------------

struct BandSpec {
  enum class Kind { Low, High } kind = Kind::Low;
  double radius_fraction = 0.15;  // of min(H,W)/2

  void validate() const {
    if (!(radius_fraction > 0.0 && radius_fraction < 1.0))
      throw ValueError("band: radius_fraction must be in (0,1)");
  }
};

struct BandMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
};

namespace detail {

/// Keeps only the frequencies selected by the band mask; returns the filtered
/// complex image.
inline Tensor<double> band_filter(const Tensor<double>& img, const BandSpec& spec) {
  const int h = img.extent(1), w = img.extent(2);
  std::vector<double> k = fft2c_raw(img.data(), h, w, false);
  const double r = spec.radius_fraction * (std::min(h, w) / 2.0);
  const double r2 = r * r;
  const int cy = h / 2, cx = w / 2;
  const std::int64_t plane = std::int64_t(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d2 = double(y - cy) * (y - cy) + double(x - cx) * (x - cx);
      const bool low = d2 <= r2;
      const bool keep = (spec.kind == BandSpec::Kind::Low) ? low : !low;
      if (!keep) {
        k[std::size_t(y * w + x)] = 0.0;
        k[std::size_t(y * w + x + plane)] = 0.0;
      }
    }
  return Tensor<double>::from_data({2, h, w}, fft2c_raw(k, h, w, true));
}

}  // namespace detail

/// Fig: filter both images with the same centered disc (or its complement) in
/// k-space, then compare the filtered magnitudes.
inline BandMetrics band_analysis(const Tensor<double>& recon, const Tensor<double>& reference,
                                 const BandSpec& spec) {
  check_complex_image(recon, "band_analysis");
  if (!shape_eq(recon.shape(), reference.shape()))
    throw ShapeError("band_analysis: shape mismatch " + shape_str(recon.shape()) + " vs " +
                     shape_str(reference.shape()));
  spec.validate();
  const Tensor<double> fr = detail::band_filter(recon, spec);
  const Tensor<double> fg = detail::band_filter(reference, spec);
  const auto mr = magnitude_of(fr);
  const auto mg = magnitude_of(fg);
  BandMetrics bm;
  bm.psnr = psnr(mr, mg);
  bm.ssim = ssim(mr, mg, recon.extent(1), recon.extent(2));
  return bm;
}

// --- reports -----------------------------------------------------------------

struct ReconReport {
  std::string id;
  std::string method;
  int af = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  BandMetrics low, high;
};

struct Quartiles {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
  std::int64_t count = 0;
};

/// Linear-interpolation quantiles (the numpy default).
inline Quartiles quartiles(std::vector<double> v) {
  if (v.empty()) throw ValueError("quartiles: empty set");
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double pos = p * double(v.size() - 1);
    const std::size_t lo = std::size_t(pos);
    const double frac = pos - double(lo);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + frac * (v[lo + 1] - v[lo]);
  };
  Quartiles q;
  q.min = v.front();
  q.q1 = at(0.25);
  q.median = at(0.5);
  q.q3 = at(0.75);
  q.max = v.back();
  double s = 0.0;
  for (double x : v) s += x;
  q.mean = s / double(v.size());
  q.count = std::int64_t(v.size());
  return q;
}

namespace detail {

/// Shortest round-trip decimal representation; infinities spelled inf/-inf.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError("bad numeric field: '" + s + "'");
  return v;
}

inline nlohmann::json json_stat(const Quartiles& q) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : "-inf";
  };
  nlohmann::json j;
  j["count"] = q.count;
  j["mean"] = num(q.mean);
  j["median"] = num(q.median);
  j["q1"] = num(q.q1);
  j["q3"] = num(q.q3);
  j["min"] = num(q.min);
  j["max"] = num(q.max);
  return j;
}

}  // namespace detail

/// CSV with one row per (sample, band) plus a JSON summary with boxplot-ready
/// statistics grouped by method and band.
inline void emit_report(const std::vector<ReconReport>& reports, const std::string& csv_path,
                        const std::string& json_path) {
  if (reports.empty()) throw ValueError("emit_report: no reports");
  std::string csv = "id,method,af,band,psnr_db,ssim\n";
  for (const auto& r : reports) {
    if (r.id.find_first_of(",\n") != std::string::npos ||
        r.method.find_first_of(",\n") != std::string::npos)
      throw ValueError("emit_report: ids and method tags must not contain commas or newlines");
    const struct {
      const char* band;
      double p, s;
    } rows[3] = {{"full", r.psnr, r.ssim},
                 {"low", r.low.psnr, r.low.ssim},
                 {"high", r.high.psnr, r.high.ssim}};
    for (const auto& row : rows)
      csv += r.id + "," + r.method + "," + std::to_string(r.af) + "," + row.band + "," +
             detail::format_double(row.p) + "," + detail::format_double(row.s) + "\n";
  }
  write_file_bytes(csv_path, csv);

  nlohmann::json summary;
  summary["version"] = 1;
  nlohmann::json methods = nlohmann::json::object();
  std::vector<std::string> names;
  for (const auto& r : reports)
    if (std::find(names.begin(), names.end(), r.method) == names.end()) names.push_back(r.method);
  for (const auto& name : names) {
    nlohmann::json bands = nlohmann::json::object();
    const struct {
      const char* band;
      BandMetrics ReconReport::* bm;
    } defs[3] = {{"full", nullptr}, {"low", &ReconReport::low}, {"high", &ReconReport::high}};
    for (const auto& d : defs) {
      std::vector<double> ps, ss;
      for (const auto& r : reports) {
        if (r.method != name) continue;
        if (d.bm) {
          ps.push_back((r.*(d.bm)).psnr);
          ss.push_back((r.*(d.bm)).ssim);
        } else {
          ps.push_back(r.psnr);
          ss.push_back(r.ssim);
        }
      }
      nlohmann::json b;
      b["psnr_db"] = detail::json_stat(quartiles(ps));
      b["ssim"] = detail::json_stat(quartiles(ss));
      bands[d.band] = b;
    }
    methods[name] = bands;
  }
  summary["methods"] = methods;
  write_file_bytes(json_path, summary.dump(2) + "\n");
}

/// Strict parser for the CSV emitted above; groups the three band rows of a
/// sample back into one report.
inline std::vector<ReconReport> parse_report_csv(const std::string& csv_path) {
  std::istringstream in(read_file_bytes(csv_path));
  std::string line;
  if (!std::getline(in, line) || line != "id,method,af,band,psnr_db,ssim")
    throw DataError("report csv " + csv_path + ": bad header");
  std::vector<ReconReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find(',', start);
      f.push_back(line.substr(start, pos == std::string::npos ? pos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (f.size() != 6) throw DataError("report csv " + csv_path + ": bad row '" + line + "'");
    const std::string& band = f[3];
    if (band == "full") {
      ReconReport r;
      r.id = f[0];
      r.method = f[1];
      r.af = int(std::stol(f[2]));
      r.psnr = detail::parse_double(f[4]);
      r.ssim = detail::parse_double(f[5]);
      out.push_back(r);
    } else {
      if (out.empty() || out.back().id != f[0])
        throw DataError("report csv " + csv_path + ": band row without its full row: '" + line +
                        "'");
      BandMetrics& bm = band == "low" ? out.back().low : out.back().high;
      if (band != "low" && band != "high")
        throw DataError("report csv " + csv_path + ": unknown band '" + band + "'");
      bm.psnr = detail::parse_double(f[4]);
      bm.ssim = detail::parse_double(f[5]);
    }
  }
  return out;
}

}  // namespace oucr
