#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include <oucr/oucr.hpp>

#include "testutil.hpp"

using namespace oucr;
using testutil::random_tensor;

namespace {

std::string temp_dir(const char* tag) {
  auto d = std::filesystem::temp_directory_path() / (std::string("oucr_metrics_") + tag);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

std::vector<double> random_image(Rng& rng, int n, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// Independent oracle: PSNR straight from its definition via MSE in one pass.
double psnr_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double mx = 0, mse = 0;
  for (double v : b) mx = std::max(mx, v);
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= double(a.size());
  return 10.0 * std::log10(mx * mx / mse);
}

/// Independent oracle: per-window SSIM by direct loops, no integral images.
double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  double range = 0;
  for (double v : b) range = std::max(range, v);
  const double c1 = 0.01 * range * 0.01 * range;
  const double c2 = 0.03 * range * 0.03 * range;
  double acc = 0;
  int count = 0;
  for (int y = 0; y + 7 <= h; ++y)
    for (int x = 0; x + 7 <= w; ++x) {
      double mx = 0, my = 0;
      for (int dy = 0; dy < 7; ++dy)
        for (int dx = 0; dx < 7; ++dx) {
          mx += a[std::size_t((y + dy) * w + x + dx)];
          my += b[std::size_t((y + dy) * w + x + dx)];
        }
      mx /= 49;
      my /= 49;
      double vx = 0, vy = 0, cv = 0;
      for (int dy = 0; dy < 7; ++dy)
        for (int dx = 0; dx < 7; ++dx) {
          const double da = a[std::size_t((y + dy) * w + x + dx)] - mx;
          const double db = b[std::size_t((y + dy) * w + x + dx)] - my;
          vx += da * da;
          vy += db * db;
          cv += da * db;
        }
      vx /= 49;
      vy /= 49;
      cv /= 49;
      acc += (2 * mx * my + c1) * (2 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return acc / count;
}

}  // namespace

TEST_CASE("psnr sentinel, closed form and oracle agreement", "[metrics][psnr]") {
  Rng rng(1);
  const auto ref = random_image(rng, 256);
  CHECK(std::isinf(psnr(ref, ref)));

  // Uniform error of 0.1 against a reference whose max is exactly 1.
  std::vector<double> unit = ref;
  unit[7] = 1.0;
  std::vector<double> off(unit.size());
  for (std::size_t i = 0; i < off.size(); ++i) off[i] = unit[i] + 0.1;
  CHECK(psnr(off, unit) == Catch::Approx(20.0).margin(1e-12));

  for (int trial = 0; trial < 5; ++trial) {
    const auto a = random_image(rng, 256);
    const auto b = random_image(rng, 256, 0.1, 1.0);
    CHECK(std::abs(psnr(a, b) - psnr_oracle(a, b)) < 1e-12);
  }

  CHECK_THROWS_AS(psnr(ref, std::vector<double>(256, 0.0)), ValueError);
  CHECK_THROWS_AS(psnr(ref, std::vector<double>(100, 1.0)), ShapeError);
}

TEST_CASE("ssim identities and brute-force oracle", "[metrics][ssim]") {
  Rng rng(2);
  const auto ref = random_image(rng, 16 * 16);
  CHECK(ssim(ref, ref, 16, 16) == 1.0);

  // Constant shift by half the dynamic range: structure intact, luminance off.
  std::vector<double> shifted(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) shifted[i] = ref[i] + 0.5;
  const double s = ssim(shifted, ref, 16, 16);
  CHECK(s < 1.0);
  CHECK(s > 0.0);

  for (int trial = 0; trial < 5; ++trial) {
    const auto a = random_image(rng, 16 * 16);
    const auto b = random_image(rng, 16 * 16, 0.1, 1.0);
    CHECK(std::abs(ssim(a, b, 16, 16) - ssim_oracle(a, b, 16, 16)) < 1e-10);
  }

  CHECK_THROWS_AS(ssim(std::vector<double>(36, 1.0), std::vector<double>(36, 1.0), 6, 6),
                  ShapeError);
}

TEST_CASE("ssim is 1 only for identical finite images", "[metrics][ssim][property]") {
  Rng rng(3);
  const auto ref = random_image(rng, 16 * 16);
  auto tweaked = ref;
  tweaked[40] += 0.05;
  CHECK(ssim(tweaked, ref, 16, 16) < 1.0 - 1e-12);
}

TEST_CASE("joint rescaling leaves both metrics unchanged", "[metrics][property]") {
  Rng rng(4);
  const auto a = random_image(rng, 16 * 16);
  const auto b = random_image(rng, 16 * 16, 0.1, 1.0);
  for (double c : {0.25, 3.0, 1e3}) {
    std::vector<double> ca(a.size()), cb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ca[i] = c * a[i];
      cb[i] = c * b[i];
    }
    CHECK(std::abs(psnr(ca, cb) - psnr(a, b)) < 1e-10);
    CHECK(std::abs(ssim(ca, cb, 16, 16) - ssim(a, b, 16, 16)) < 1e-10);
  }
}

TEST_CASE("band analysis separates frequency content", "[metrics][band]") {
  Rng rng(5);
  Tensor<double> ref = random_tensor({2, 32, 32}, rng, 0.0, 1.0);
  const BandSpec low{BandSpec::Kind::Low, 0.3};
  const BandSpec high{BandSpec::Kind::High, 0.3};

  const BandMetrics self_low = band_analysis(ref, ref, low);
  const BandMetrics self_high = band_analysis(ref, ref, high);
  CHECK(std::isinf(self_low.psnr));
  CHECK(std::isinf(self_high.psnr));
  CHECK(self_low.ssim == 1.0);
  CHECK(self_high.ssim == 1.0);

  // Perturbation whose spectrum lives strictly outside the low disc: the low
  // band is untouched up to transform roundoff, the high band takes the hit.
  std::vector<double> k(2 * 32 * 32, 0.0);
  const double r = 0.3 * 16.0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double d2 = double(y - 16) * (y - 16) + double(x - 16) * (x - 16);
      if (d2 > r * r + 1.0) {
        k[std::size_t(y * 32 + x)] = 0.05 * rng.uniform(-1, 1);
        k[std::size_t(1024 + y * 32 + x)] = 0.05 * rng.uniform(-1, 1);
      }
    }
  const auto pert = fft2c_raw(k, 32, 32, true);
  std::vector<double> recon_v = ref.data();
  for (std::size_t i = 0; i < recon_v.size(); ++i) recon_v[i] += pert[i];
  const Tensor<double> recon = Tensor<double>::from_data({2, 32, 32}, recon_v);

  const BandMetrics bl = band_analysis(recon, ref, low);
  const BandMetrics bh = band_analysis(recon, ref, high);
  CHECK((std::isinf(bl.psnr) || bl.psnr > 140.0));
  CHECK(std::isfinite(bh.psnr));
  CHECK(bh.psnr < 100.0);
}

TEST_CASE("band filters partition k-space", "[metrics][band][property]") {
  Rng rng(6);
  Tensor<double> img = random_tensor({2, 32, 32}, rng);
  for (double rf : {0.1, 0.15, 0.4}) {
    const Tensor<double> lo = detail::band_filter(img, {BandSpec::Kind::Low, rf});
    const Tensor<double> hi = detail::band_filter(img, {BandSpec::Kind::High, rf});
    double worst = 0;
    for (std::size_t i = 0; i < img.data().size(); ++i)
      worst = std::max(worst, std::abs(lo.data()[i] + hi.data()[i] - img.data()[i]));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("wide low band converges to whole-image metrics", "[metrics][band]") {
  // Band-limited pair: zero outside the 0.8 disc, so a 0.95 low band keeps
  // everything and the metrics match the unfiltered ones.
  Rng rng(7);
  Tensor<double> a = detail::band_filter(random_tensor({2, 32, 32}, rng, 0.0, 1.0),
                                         {BandSpec::Kind::Low, 0.8});
  Tensor<double> b = detail::band_filter(random_tensor({2, 32, 32}, rng, 0.1, 1.0),
                                         {BandSpec::Kind::Low, 0.8});
  const BandMetrics bm = band_analysis(a, b, {BandSpec::Kind::Low, 0.95});
  const auto ma = magnitude_of(a);
  const auto mb = magnitude_of(b);
  CHECK(bm.psnr == Catch::Approx(psnr(ma, mb)).margin(1e-8));
  CHECK(bm.ssim == Catch::Approx(ssim(ma, mb, 32, 32)).margin(1e-8));
}

TEST_CASE("band spec validation", "[metrics][band][errors]") {
  Tensor<double> img = Tensor<double>::zeros({2, 16, 16});
  CHECK_THROWS_AS(band_analysis(img, img, {BandSpec::Kind::Low, 0.0}), ValueError);
  CHECK_THROWS_AS(band_analysis(img, img, {BandSpec::Kind::Low, 1.5}), ValueError);
  CHECK_THROWS_AS(band_analysis(img, Tensor<double>::zeros({2, 8, 8}), {}), ShapeError);
}

TEST_CASE("quartiles use linear interpolation", "[metrics][report]") {
  const Quartiles q = quartiles({5, 1, 3, 2, 4});
  CHECK(q.median == 3.0);
  CHECK(q.q1 == 2.0);
  CHECK(q.q3 == 4.0);
  CHECK(q.min == 1.0);
  CHECK(q.max == 5.0);
  CHECK(q.mean == 3.0);
  CHECK_THROWS_AS(quartiles({}), ValueError);
}

TEST_CASE("reports round trip through CSV and summarize to JSON", "[metrics][report]") {
  const std::string dir = temp_dir("report");
  std::vector<ReconReport> reports;
  Rng rng(8);
  for (int i = 0; i < 5; ++i) {
    ReconReport r;
    r.id = "p" + std::to_string(i);
    r.method = i % 2 ? "oucr" : "cs";
    r.af = 4;
    r.psnr = i == 0 ? std::numeric_limits<double>::infinity() : rng.uniform(20, 40);
    r.ssim = rng.uniform(0.5, 1.0);
    r.low = {rng.uniform(20, 60), rng.uniform(0.5, 1.0)};
    r.high = {rng.uniform(10, 30), rng.uniform(0.2, 0.9)};
    reports.push_back(r);
  }
  emit_report(reports, dir + "/report.csv", dir + "/summary.json");

  // One CSV row per (sample, band).
  const std::string csv = read_file_bytes(dir + "/report.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 5);

  const auto back = parse_report_csv(dir + "/report.csv");
  REQUIRE(back.size() == reports.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == reports[i].id);
    CHECK(back[i].method == reports[i].method);
    CHECK(back[i].af == reports[i].af);
    CHECK(back[i].psnr == reports[i].psnr);  // bit-exact round trip, inf included
    CHECK(back[i].ssim == reports[i].ssim);
    CHECK(back[i].low.psnr == reports[i].low.psnr);
    CHECK(back[i].high.ssim == reports[i].high.ssim);
  }

  const auto j = nlohmann::json::parse(read_file_bytes(dir + "/summary.json"));
  REQUIRE(j.contains("methods"));
  REQUIRE(j["methods"].contains("oucr"));
  REQUIRE(j["methods"]["oucr"].contains("full"));
  CHECK(j["methods"]["oucr"]["full"]["psnr_db"].contains("median"));
  CHECK(j["methods"]["cs"]["full"]["psnr_db"]["mean"] == "inf");  // infinity serialized as string

  CHECK_THROWS_AS(emit_report({}, dir + "/x.csv", dir + "/x.json"), ValueError);
  ReconReport bad;
  bad.id = "has,comma";
  CHECK_THROWS_AS(emit_report({bad}, dir + "/x.csv", dir + "/x.json"), ValueError);
}
