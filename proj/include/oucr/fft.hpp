#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "oucr/tensor.hpp"

// Centered orthonormal 2-D DFT over complex images stored as [2,H,W] real
// pairs. Any H, W >= 1 is supported: power-of-two lengths use an iterative
// radix-2 transform, everything else goes through Bluestein's chirp-z
// algorithm. Both directions scale by 1/sqrt(H*W), so fft2c and ifft2c are
// unitary and each is the other's adjoint.

namespace oucr {
namespace fftdetail {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t m = 1;
  while (m < n) m <<= 1;
  return m;
}

// In-place unnormalized DFT, n a power of two. sign -1 forward, +1 backward.
inline void fft_radix2(double* re, double* im, std::size_t n, double sgn) {
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sgn * 2.0 * kPi / double(len);
    const std::size_t half = len / 2;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        // Twiddles from the angle directly; no iterated multiplication drift.
        const double a = ang * double(k);
        const double wr = std::cos(a), wi = std::sin(a);
        const std::size_t u = i + k, v = i + k + half;
        const double xr = re[v] * wr - im[v] * wi;
        const double xi = re[v] * wi + im[v] * wr;
        re[v] = re[u] - xr;
        im[v] = im[u] - xi;
        re[u] += xr;
        im[u] += xi;
      }
    }
  }
}

// Unnormalized forward DFT of arbitrary length via the chirp-z identity
// jk = (j^2 + k^2 - (k-j)^2) / 2.
inline void fft_bluestein_forward(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  const std::size_t m = next_pow2(2 * n - 1);
  std::vector<double> cr(n), ci(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::int64_t q = (std::int64_t(k) * std::int64_t(k)) % std::int64_t(2 * n);
    const double a = -kPi * double(q) / double(n);
    cr[k] = std::cos(a);
    ci[k] = std::sin(a);
  }
  std::vector<double> ar(m, 0.0), ai(m, 0.0), br(m, 0.0), bi(m, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    ar[k] = re[k] * cr[k] - im[k] * ci[k];
    ai[k] = re[k] * ci[k] + im[k] * cr[k];
  }
  br[0] = 1.0;
  for (std::size_t k = 1; k < n; ++k) {
    br[k] = br[m - k] = cr[k];
    bi[k] = bi[m - k] = -ci[k];
  }
  fft_radix2(ar.data(), ai.data(), m, -1.0);
  fft_radix2(br.data(), bi.data(), m, -1.0);
  for (std::size_t k = 0; k < m; ++k) {
    const double r = ar[k] * br[k] - ai[k] * bi[k];
    const double i = ar[k] * bi[k] + ai[k] * br[k];
    ar[k] = r;
    ai[k] = i;
  }
  fft_radix2(ar.data(), ai.data(), m, 1.0);
  const double inv_m = 1.0 / double(m);
  for (std::size_t k = 0; k < n; ++k) {
    const double vr = ar[k] * inv_m, vi = ai[k] * inv_m;
    re[k] = vr * cr[k] - vi * ci[k];
    im[k] = vr * ci[k] + vi * cr[k];
  }
}

// Unnormalized 1-D DFT of any length; inverse (sign +1) via conjugation.
inline void fft_any(std::vector<double>& re, std::vector<double>& im, bool inverse) {
  const std::size_t n = re.size();
  if (n == 0) throw ShapeError("fft: empty length");
  if (n == 1) return;
  if (inverse)
    for (auto& v : im) v = -v;
  if (is_pow2(n))
    fft_radix2(re.data(), im.data(), n, -1.0);
  else
    fft_bluestein_forward(re, im);
  if (inverse)
    for (auto& v : im) v = -v;
}

// Unnormalized separable 2-D DFT on h*w planes.
inline void fft2_inplace(std::vector<double>& re, std::vector<double>& im, int h, int w,
                         bool inverse) {
  std::vector<double> tr(static_cast<std::size_t>(w)), ti(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    const std::size_t row = std::size_t(y) * std::size_t(w);
    for (int x = 0; x < w; ++x) {
      tr[std::size_t(x)] = re[row + std::size_t(x)];
      ti[std::size_t(x)] = im[row + std::size_t(x)];
    }
    fft_any(tr, ti, inverse);
    for (int x = 0; x < w; ++x) {
      re[row + std::size_t(x)] = tr[std::size_t(x)];
      im[row + std::size_t(x)] = ti[std::size_t(x)];
    }
  }
  std::vector<double> cr(static_cast<std::size_t>(h)), ci(static_cast<std::size_t>(h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      cr[std::size_t(y)] = re[std::size_t(y) * std::size_t(w) + std::size_t(x)];
      ci[std::size_t(y)] = im[std::size_t(y) * std::size_t(w) + std::size_t(x)];
    }
    fft_any(cr, ci, inverse);
    for (int y = 0; y < h; ++y) {
      re[std::size_t(y) * std::size_t(w) + std::size_t(x)] = cr[std::size_t(y)];
      im[std::size_t(y) * std::size_t(w) + std::size_t(x)] = ci[std::size_t(y)];
    }
  }
}

/// Full centered orthonormal transform between [2,h,w] buffers. Computation
/// is always double precision; S only selects the storage type.
template <class S>
void fft2c_buffers(const S* in, S* out, int h, int w, bool inverse) {
  const std::int64_t plane = std::int64_t(h) * w;
  std::vector<double> re(static_cast<std::size_t>(plane)), im(static_cast<std::size_t>(plane));
  const int sh = h / 2, sw = w / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::int64_t src = std::int64_t((y + sh) % h) * w + (x + sw) % w;  // ifftshift
      re[std::size_t(y) * std::size_t(w) + std::size_t(x)] = double(in[src]);
      im[std::size_t(y) * std::size_t(w) + std::size_t(x)] = double(in[src + plane]);
    }
  if (inverse)
    for (auto& v : im) v = -v;
  fft2_inplace(re, im, h, w, false);
  if (inverse)
    for (auto& v : im) v = -v;
  const double s = 1.0 / std::sqrt(double(h) * double(w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::int64_t dst = std::int64_t((y + sh) % h) * w + (x + sw) % w;  // fftshift
      out[dst] = S(re[std::size_t(y) * std::size_t(w) + std::size_t(x)] * s);
      out[dst + plane] = S(im[std::size_t(y) * std::size_t(w) + std::size_t(x)] * s);
    }
}

}  // namespace fftdetail

/// Complex images ride through the network as [2,H,W] real tensors; only
/// fft2c/ifft2c interpret the channel pair as complex.
template <class S>
using ComplexImage = Tensor<S>;

template <class S>
void check_complex_image(const Tensor<S>& z, const char* op) {
  if (z.rank() != 3 || z.extent(0) != 2)
    throw ShapeError(std::string(op) + ": expected a [2,H,W] complex image, got " +
                     shape_str(z.shape()));
}

/// Out-of-graph transform on a raw [2,h,w] buffer.
template <class S>
std::vector<S> fft2c_raw(const std::vector<S>& z, int h, int w, bool inverse) {
  if (std::int64_t(z.size()) != 2 * std::int64_t(h) * w)
    throw ShapeError("fft2c_raw: buffer size does not match 2*h*w");
  std::vector<S> out(z.size());
  fftdetail::fft2c_buffers(z.data(), out.data(), h, w, inverse);
  return out;
}

template <class S>
Tensor<S> fft2c(const Tensor<S>& z) {
  check_complex_image(z, "fft2c");
  const int h = z.extent(1), w = z.extent(2);
  std::vector<S> out(z.data().size());
  fftdetail::fft2c_buffers(z.data().data(), out.data(), h, w, false);
  return detail::make_result(
      "fft2c", z.shape(), std::move(out), {z},
      [h, w](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        if (!slots[0]) return;
        std::vector<S> tmp(gout.size());
        fftdetail::fft2c_buffers(gout.data(), tmp.data(), h, w, true);  // adjoint = inverse
        auto& g = *slots[0];
        for (std::size_t i = 0; i < tmp.size(); ++i) g[i] += tmp[i];
      });
}

template <class S>
Tensor<S> ifft2c(const Tensor<S>& z) {
  check_complex_image(z, "ifft2c");
  const int h = z.extent(1), w = z.extent(2);
  std::vector<S> out(z.data().size());
  fftdetail::fft2c_buffers(z.data().data(), out.data(), h, w, true);
  return detail::make_result(
      "ifft2c", z.shape(), std::move(out), {z},
      [h, w](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        if (!slots[0]) return;
        std::vector<S> tmp(gout.size());
        fftdetail::fft2c_buffers(gout.data(), tmp.data(), h, w, false);  // adjoint = forward
        auto& g = *slots[0];
        for (std::size_t i = 0; i < tmp.size(); ++i) g[i] += tmp[i];
      });
}

}  // namespace oucr
