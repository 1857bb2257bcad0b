#include <catch2/catch_amalgamated.hpp>

#include <oucr/oucr.hpp>

#include "testutil.hpp"

using namespace oucr;
using testutil::fd_gradient;
using testutil::max_rel_err;
using testutil::random_tensor;

namespace {

double inner(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("fft2c of a centered impulse is flat", "[fft]") {
  Tensor<double> z = Tensor<double>::zeros({2, 8, 8});
  z.at({0, 4, 4}) = 1.0;
  Tensor<double> k = fft2c(z);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      CHECK(k.at({0, y, x}) == Catch::Approx(0.125).margin(1e-12));
      CHECK(std::abs(k.at({1, y, x})) < 1e-12);
    }
}

TEST_CASE("fft2c round trip on random fields", "[fft]") {
  Rng rng(5);
  Tensor<double> z = random_tensor({2, 16, 16}, rng);
  Tensor<double> back = ifft2c(fft2c(z));
  CHECK(testutil::max_abs_diff(back.data(), z.data()) < 1e-10);
  Tensor<double> fwd = fft2c(ifft2c(z));
  CHECK(testutil::max_abs_diff(fwd.data(), z.data()) < 1e-10);
}

TEST_CASE("fft2c preserves energy", "[fft]") {
  Rng rng(6);
  Tensor<double> z = random_tensor({2, 8, 8}, rng);
  const double n0 = testutil::l2_norm(z.data());
  const double n1 = testutil::l2_norm(fft2c(z).data());
  CHECK(std::abs(n0 - n1) / n0 < 1e-12);
}

TEST_CASE("ifft2c is the exact adjoint of fft2c", "[fft]") {
  Rng rng(8);
  Tensor<double> a = random_tensor({2, 8, 8}, rng);
  Tensor<double> b = random_tensor({2, 8, 8}, rng);
  const double lhs = inner(fft2c(a).data(), b.data());
  const double rhs = inner(a.data(), ifft2c(b).data());
  CHECK(std::abs(lhs - rhs) < 1e-12);
}

TEST_CASE("fft ops differentiate as their adjoints", "[fft][grad]") {
  Rng rng(9);
  Tensor<double> z = random_tensor({2, 8, 8}, rng);
  z.set_requires_grad();
  auto wts = std::make_shared<const std::vector<double>>([&] {
    std::vector<double> v(z.data().size());
    for (auto& x : v) x = rng.uniform(-1, 1);
    return v;
  }());
  backward(weighted_sum(fft2c(z), wts));
  auto f = [&] { return weighted_sum(fft2c(z.detach()), wts).item(); };
  CHECK(max_rel_err(*z.grad(), fd_gradient(z, f)) < 1e-6);

  Tensor<double> z2 = random_tensor({2, 8, 8}, rng);
  z2.set_requires_grad();
  backward(weighted_sum(ifft2c(z2), wts));
  auto f2 = [&] { return weighted_sum(ifft2c(z2.detach()), wts).item(); };
  CHECK(max_rel_err(*z2.grad(), fd_gradient(z2, f2)) < 1e-6);
}

TEST_CASE("non power-of-two extents go through Bluestein", "[fft]") {
  Rng rng(10);
  for (auto [h, w] : {std::pair{12, 12}, std::pair{6, 10}, std::pair{1, 16}, std::pair{7, 5}}) {
    Tensor<double> z = random_tensor({2, h, w}, rng);
    Tensor<double> back = ifft2c(fft2c(z));
    CHECK(testutil::max_abs_diff(back.data(), z.data()) < 1e-10);
    const double n0 = testutil::l2_norm(z.data());
    const double n1 = testutil::l2_norm(fft2c(z).data());
    CHECK(std::abs(n0 - n1) / n0 < 1e-11);
  }
}

TEST_CASE("fft2c validates its input", "[fft][errors]") {
  CHECK_THROWS_AS(fft2c(Tensor<double>::zeros({3, 4, 4})), ShapeError);
  CHECK_THROWS_AS(fft2c(Tensor<double>::zeros({16})), ShapeError);
}
