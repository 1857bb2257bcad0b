#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include <oucr/oucr.hpp>

#include "testutil.hpp"

using namespace oucr;
using testutil::full_mask;
using testutil::random_tensor;

namespace {

std::string temp_dir(const char* tag) {
  auto d = std::filesystem::temp_directory_path() / (std::string("oucr_kspace_") + tag);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d.string();
}

}  // namespace

TEST_CASE("mask_generate matches the fastMRI column protocol", "[kspace][mask]") {
  const Mask m = mask_generate(32, 32, 4, 0);
  CHECK(m.center_fraction == 0.08);
  CHECK(m.sampled_columns() == 8);  // 32/4
  // ceil(0.08*32) = 3 central columns fully sampled
  CHECK(m.col(15));
  CHECK(m.col(16));
  CHECK(m.col(17));
  CHECK(m.realized_af() == Catch::Approx(4.0));

  const Mask m8 = mask_generate(64, 64, 8, 1);
  CHECK(m8.center_fraction == 0.04);
  CHECK(m8.sampled_columns() == 8);  // 64/8
}

TEST_CASE("mask_generate is deterministic and validates inputs", "[kspace][mask]") {
  const Mask a = mask_generate(32, 32, 4, 123);
  const Mask b = mask_generate(32, 32, 4, 123);
  CHECK(a.cols == b.cols);
  const Mask c = mask_generate(32, 32, 4, 124);
  CHECK(a.cols != c.cols);

  CHECK_THROWS_AS(mask_generate(32, 8, 4, 0), ValueError);   // w too small
  CHECK_THROWS_AS(mask_generate(32, 32, 3, 0), ValueError);  // af not in {4,8}
  // Infeasible: requested rate below the fully sampled center band.
  CHECK_THROWS_AS(mask_generate(32, 32, 8, 0, 0.5), ValueError);
  CHECK_THROWS_WITH(mask_generate(32, 32, 8, 0, 0.5),
                    Catch::Matchers::ContainsSubstring("infeasible"));
}

TEST_CASE("mask realized acceleration stays within 10 percent", "[kspace][mask][property]") {
  for (int w : {32, 64, 128})
    for (int af : {4, 8})
      for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Mask m = mask_generate(16, w, af, seed);
        CHECK(std::abs(m.realized_af() - af) / af <= 0.10);
      }
}

TEST_CASE("forward_encode masks the spectrum", "[kspace]") {
  Rng rng(1);
  Tensor<double> img = random_tensor({2, 16, 16}, rng);

  const KSpaceData<double> full = forward_encode(img, full_mask(16, 16));
  const auto direct = fft2c_raw(img.data(), 16, 16, false);
  CHECK(full.values.data() == direct);

  const KSpaceData<double> zero = forward_encode(Tensor<double>::zeros({2, 16, 16}),
                                                 mask_generate(16, 16, 4, 0));
  for (double v : zero.values.data()) CHECK(v == 0.0);

  const Mask m = mask_generate(16, 16, 4, 2);
  const KSpaceData<double> x = forward_encode(img, m);
  for (int y = 0; y < 16; ++y)
    for (int c = 0; c < 16; ++c)
      if (!m.col(c)) {
        CHECK(x.values.at({0, y, c}) == 0.0);
        CHECK(x.values.at({1, y, c}) == 0.0);
      }
  CHECK(testutil::l2_norm(x.values.data()) <= testutil::l2_norm(img.data()) * (1 + 1e-12));

  CHECK_THROWS_AS(forward_encode(Tensor<double>::zeros({2, 8, 8}), m), ShapeError);
}

TEST_CASE("zero_fill inverts complete measurements", "[kspace]") {
  Rng rng(2);
  Tensor<double> img = random_tensor({2, 16, 16}, rng);
  const auto x = forward_encode(img, full_mask(16, 16));
  CHECK(testutil::max_abs_diff(zero_fill(x).data(), img.data()) < 1e-10);

  KSpaceData<double> zed{Tensor<double>::zeros({2, 16, 16}), mask_generate(16, 16, 4, 0)};
  for (double v : zero_fill(zed).data()) CHECK(v == 0.0);
}

TEST_CASE("data_consistency is a hard projection", "[kspace][dc]") {
  Rng rng(3);
  const Mask m = mask_generate(16, 16, 4, 5);
  Tensor<double> truth = random_tensor({2, 16, 16}, rng);
  const KSpaceData<double> x = forward_encode(truth, m);
  Tensor<double> z = random_tensor({2, 16, 16}, rng);

  const Tensor<double> once = data_consistency(z, x, m);
  const Tensor<double> twice = data_consistency(once, x, m);
  CHECK(testutil::max_abs_diff(once.data(), twice.data()) < 1e-12);

  // k-space of the output equals x exactly on sampled columns, F[z] elsewhere.
  const auto k_out = fft2c_raw(once.data(), 16, 16, false);
  const auto k_z = fft2c_raw(z.data(), 16, 16, false);
  for (int y = 0; y < 16; ++y)
    for (int c = 0; c < 16; ++c)
      for (int part = 0; part < 2; ++part) {
        const std::size_t i = std::size_t(part * 256 + y * 16 + c);
        if (m.col(c))
          CHECK(std::abs(k_out[i] - x.values.data()[i]) < 1e-12);
        else
          CHECK(std::abs(k_out[i] - k_z[i]) < 1e-12);
      }
}

TEST_CASE("data_consistency passthrough and fixed point", "[kspace][dc]") {
  Rng rng(4);
  Tensor<double> truth = random_tensor({2, 16, 16}, rng);
  const Mask fm = full_mask(16, 16);
  const KSpaceData<double> xf = forward_encode(truth, fm);
  Tensor<double> junk = random_tensor({2, 16, 16}, rng);
  const Tensor<double> out = data_consistency(junk, xf, fm);
  CHECK(testutil::max_abs_diff(out.data(), zero_fill(xf).data()) < 1e-12);

  // A z that is already consistent is a fixed point.
  const Mask m = mask_generate(16, 16, 4, 6);
  const KSpaceData<double> x = forward_encode(truth, m);
  const Tensor<double> consistent = zero_fill(x);
  const Tensor<double> kept = data_consistency(consistent, x, m);
  CHECK(testutil::max_abs_diff(kept.data(), consistent.data()) < 1e-10);
}

TEST_CASE("data_consistency differentiates through the unsampled set", "[kspace][dc][grad]") {
  Rng rng(7);
  const Mask m = mask_generate(8, 16, 4, 1);
  Tensor<double> truth = random_tensor({2, 8, 16}, rng);
  const KSpaceData<double> x = forward_encode(truth, m);
  Tensor<double> z = random_tensor({2, 8, 16}, rng);
  z.set_requires_grad();
  auto wts = std::make_shared<const std::vector<double>>([&] {
    std::vector<double> v(z.data().size());
    for (auto& q : v) q = rng.uniform(-1, 1);
    return v;
  }());
  backward(weighted_sum(data_consistency(z, x, m), wts));
  auto f = [&] { return weighted_sum(data_consistency(z.detach(), x, m), wts).item(); };
  CHECK(testutil::max_rel_err(*z.grad(), testutil::fd_gradient(z, f)) < 1e-6);
}

TEST_CASE("encode-zerofill-encode is idempotent", "[kspace][property]") {
  Rng rng(11);
  const Mask m = mask_generate(16, 16, 4, 9);
  Tensor<double> img = random_tensor({2, 16, 16}, rng);
  const KSpaceData<double> x1 = forward_encode(img, m);
  const KSpaceData<double> x2 = forward_encode(zero_fill(x1), m);
  CHECK(testutil::max_abs_diff(x1.values.data(), x2.values.data()) < 1e-12);
}

TEST_CASE("mask files round trip with their sidecar", "[kspace][io]") {
  const std::string dir = temp_dir("io");
  const Mask m = mask_generate(24, 32, 8, 42);
  mask_save(m, dir + "/mask.bin", dir + "/mask.json");
  const Mask back = mask_load(dir + "/mask.bin", dir + "/mask.json");
  CHECK(back.cols == m.cols);
  CHECK(back.h == m.h);
  CHECK(back.af == m.af);
  CHECK(back.seed == m.seed);
  CHECK(back.center_fraction == m.center_fraction);

  write_file_bytes(dir + "/mask.json", "{not json");
  CHECK_THROWS_AS(mask_load(dir + "/mask.bin", dir + "/mask.json"), DataError);

  mask_save(m, dir + "/m2.bin", dir + "/m2.json");
  write_file_bytes(dir + "/m2.bin", "abc");
  CHECK_THROWS_AS(mask_load(dir + "/m2.bin", dir + "/m2.json"), DataError);
}
