#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "oucr/common.hpp"
#include "oucr/fft.hpp"
#include "oucr/kspace.hpp"
#include "oucr/tensor.hpp"

// Classical reconstruction of min_y R(y) + lambda*||x - F_D y||^2 by FISTA
// with a monotone safeguard (rejected candidates keep the previous iterate
// and restart the momentum), so the objective trace never increases. R is
// isotropic TV per channel or l1 of a single-level Haar decomposition with
// complex-magnitude shrinkage.

namespace oucr {

inline double soft_threshold(double c, double t) {
  if (t < 0) throw ValueError("soft_threshold: threshold must be >= 0");
  const double m = std::abs(c) - t;
  return m > 0 ? (c > 0 ? m : -m) : 0.0;
}

/// Magnitude shrinkage preserving phase.
inline void soft_threshold_complex(double& re, double& im, double t) {
  if (t < 0) throw ValueError("soft_threshold: threshold must be >= 0");
  const double m = std::hypot(re, im);
  if (m <= t) {
    re = 0.0;
    im = 0.0;
    return;
  }
  const double s = (m - t) / m;
  re *= s;
  im *= s;
}

struct CsConfig {
  double lambda = 50.0;
  enum class Reg { TV, Haar } reg = Reg::TV;
  int max_iters = 150;
  double tol = 1e-10;  // relative objective change between accepted iterates
  double step = 0.0;   // 0 selects 1/(2*lambda); F_D is non-expansive under orthonormal F
  int tv_inner = 40;   // dual iterations per TV prox, warm-started

  void validate() const {
    if (lambda <= 0) throw ValueError("cs: lambda must be positive");
    if (max_iters < 1) throw ValueError("cs: max_iters must be >= 1");
    if (tol <= 0) throw ValueError("cs: tolerance must be positive");
    if (tv_inner < 1) throw ValueError("cs: tv_inner must be >= 1");
  }
};

struct CsTracePoint {
  double objective = 0, data_term = 0, reg_term = 0;
};

struct CsResult {
  Tensor<double> image;
  std::vector<CsTracePoint> trace;
  int iterations = 0;
};

namespace csdetail {

inline double tv_value_channel(const double* u, int h, int w) {
  double acc = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = x + 1 < w ? u[y * w + x + 1] - u[y * w + x] : 0.0;
      const double dy = y + 1 < h ? u[(y + 1) * w + x] - u[y * w + x] : 0.0;
      acc += std::sqrt(dx * dx + dy * dy);
    }
  return acc;
}

/// Chambolle dual iterations for prox of tau*TV; p1/p2 persist across calls
/// as a warm start.
inline void tv_prox_channel(const double* z, double* u, std::vector<double>& p1,
                            std::vector<double>& p2, int h, int w, double tau, int iters) {
  const double tc = 0.124;  // dual step, within the guaranteed range
  const std::size_t n = std::size_t(h) * std::size_t(w);
  if (p1.size() != n) {
    p1.assign(n, 0.0);
    p2.assign(n, 0.0);
  }
  std::vector<double> div(n), v(n);
  for (int it = 0; it < iters; ++it) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double d = p1[std::size_t(y * w + x)] + p2[std::size_t(y * w + x)];
        if (x > 0) d -= p1[std::size_t(y * w + x - 1)];
        if (y > 0) d -= p2[std::size_t((y - 1) * w + x)];
        div[std::size_t(y * w + x)] = d;
      }
    for (std::size_t i = 0; i < n; ++i) v[i] = div[i] - z[i] / tau;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double g1 = x + 1 < w ? v[std::size_t(y * w + x + 1)] - v[std::size_t(y * w + x)] : 0.0;
        const double g2 = y + 1 < h ? v[std::size_t((y + 1) * w + x)] - v[std::size_t(y * w + x)] : 0.0;
        const double mag = std::sqrt(g1 * g1 + g2 * g2);
        const double den = 1.0 + tc * mag;
        p1[std::size_t(y * w + x)] = (p1[std::size_t(y * w + x)] + tc * g1) / den;
        p2[std::size_t(y * w + x)] = (p2[std::size_t(y * w + x)] + tc * g2) / den;
      }
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double d = p1[std::size_t(y * w + x)] + p2[std::size_t(y * w + x)];
      if (x > 0) d -= p1[std::size_t(y * w + x - 1)];
      if (y > 0) d -= p2[std::size_t((y - 1) * w + x)];
      u[y * w + x] = z[y * w + x] - tau * d;
    }
}

/// Single-level orthonormal Haar: quadrant layout LL|LH over HL|HH.
inline void haar_forward_channel(const double* u, double* c, int h, int w) {
  const int hh = h / 2, hw = w / 2;
  for (int y = 0; y < hh; ++y)
    for (int x = 0; x < hw; ++x) {
      const double a = u[(2 * y) * w + 2 * x], b = u[(2 * y) * w + 2 * x + 1];
      const double cc = u[(2 * y + 1) * w + 2 * x], d = u[(2 * y + 1) * w + 2 * x + 1];
      c[y * w + x] = (a + b + cc + d) / 2.0;
      c[y * w + x + hw] = (a - b + cc - d) / 2.0;
      c[(y + hh) * w + x] = (a + b - cc - d) / 2.0;
      c[(y + hh) * w + x + hw] = (a - b - cc + d) / 2.0;
    }
}

inline void haar_inverse_channel(const double* c, double* u, int h, int w) {
  const int hh = h / 2, hw = w / 2;
  for (int y = 0; y < hh; ++y)
    for (int x = 0; x < hw; ++x) {
      const double ll = c[y * w + x], lh = c[y * w + x + hw];
      const double hl = c[(y + hh) * w + x], hhv = c[(y + hh) * w + x + hw];
      u[(2 * y) * w + 2 * x] = (ll + lh + hl + hhv) / 2.0;
      u[(2 * y) * w + 2 * x + 1] = (ll - lh + hl - hhv) / 2.0;
      u[(2 * y + 1) * w + 2 * x] = (ll + lh - hl - hhv) / 2.0;
      u[(2 * y + 1) * w + 2 * x + 1] = (ll - lh - hl + hhv) / 2.0;
    }
}

}  // namespace csdetail

/// R(y) for the configured regularizer on a [2,h,w] buffer.
inline double cs_regularizer_value(const std::vector<double>& y, int h, int w,
                                   const CsConfig& cfg) {
  const std::int64_t plane = std::int64_t(h) * w;
  if (cfg.reg == CsConfig::Reg::TV)
    return csdetail::tv_value_channel(y.data(), h, w) +
           csdetail::tv_value_channel(y.data() + plane, h, w);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("cs: Haar regularizer needs even dims, got " + std::to_string(h) + "x" +
                     std::to_string(w));
  std::vector<double> cre(static_cast<std::size_t>(plane)), cim(static_cast<std::size_t>(plane));
  csdetail::haar_forward_channel(y.data(), cre.data(), h, w);
  csdetail::haar_forward_channel(y.data() + plane, cim.data(), h, w);
  double acc = 0.0;
  for (std::int64_t i = 0; i < plane; ++i)
    acc += std::hypot(cre[std::size_t(i)], cim[std::size_t(i)]);
  return acc;
}

/// FISTA solve of Eq.-1-style objective. Returns the final iterate and the
/// per-iteration objective trace (index 0 is the zero-filled start).
inline CsResult cs_reconstruct(const KSpaceData<double>& x, const Mask& mask,
                               const CsConfig& cfg) {
  cfg.validate();
  const int h = mask.h, w = mask.w;
  if (!shape_eq(x.values.shape(), Shape{2, h, w}))
    throw ShapeError("cs: k-space " + shape_str(x.values.shape()) + " does not match mask " +
                     std::to_string(h) + "x" + std::to_string(w));
  const std::int64_t plane = std::int64_t(h) * w;
  const double step = cfg.step > 0 ? cfg.step : 1.0 / (2.0 * cfg.lambda);

  const auto& kx = x.values.data();
  auto data_term = [&](const std::vector<double>& k) {
    double acc = 0.0;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        if (mask.col(xx)) {
          const double dr = k[std::size_t(y * w + xx)] - kx[std::size_t(y * w + xx)];
          const double di = k[std::size_t(y * w + xx + plane)] - kx[std::size_t(y * w + xx + plane)];
          acc += dr * dr + di * di;
        }
    return cfg.lambda * acc;
  };
  auto objective = [&](const std::vector<double>& y, double* data_out, double* reg_out) {
    const std::vector<double> k = fft2c_raw(y, h, w, false);
    const double d = data_term(k);
    const double r = cs_regularizer_value(y, h, w, cfg);
    if (data_out) *data_out = d;
    if (reg_out) *reg_out = r;
    return d + r;
  };
  auto gradient = [&](const std::vector<double>& y) {
    std::vector<double> k = fft2c_raw(y, h, w, false);
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        const std::size_t i = std::size_t(yy * w + xx);
        if (mask.col(xx)) {
          k[i] -= kx[i];
          k[i + std::size_t(plane)] -= kx[i + std::size_t(plane)];
        } else {
          k[i] = 0.0;
          k[i + std::size_t(plane)] = 0.0;
        }
      }
    std::vector<double> g = fft2c_raw(k, h, w, true);
    for (auto& v : g) v *= 2.0 * cfg.lambda;
    return g;
  };

  std::vector<double> p1re, p2re, p1im, p2im;  // warm-started TV dual fields
  auto prox = [&](std::vector<double> z) {
    std::vector<double> u(z.size());
    if (cfg.reg == CsConfig::Reg::TV) {
      csdetail::tv_prox_channel(z.data(), u.data(), p1re, p2re, h, w, step, cfg.tv_inner);
      csdetail::tv_prox_channel(z.data() + plane, u.data() + plane, p1im, p2im, h, w, step,
                                cfg.tv_inner);
      return u;
    }
    if (h % 2 != 0 || w % 2 != 0)
      throw ShapeError("cs: Haar regularizer needs even dims");
    std::vector<double> cre(static_cast<std::size_t>(plane)), cim(static_cast<std::size_t>(plane));
    csdetail::haar_forward_channel(z.data(), cre.data(), h, w);
    csdetail::haar_forward_channel(z.data() + plane, cim.data(), h, w);
    for (std::int64_t i = 0; i < plane; ++i)
      soft_threshold_complex(cre[std::size_t(i)], cim[std::size_t(i)], step);
    csdetail::haar_inverse_channel(cre.data(), u.data(), h, w);
    csdetail::haar_inverse_channel(cim.data(), u.data() + plane, h, w);
    return u;
  };

  std::vector<double> y = fft2c_raw(kx, h, w, true);  // zero-filled start
  std::vector<double> z = y;
  double t = 1.0;
  CsResult res;
  CsTracePoint tp;
  double f_cur = objective(y, &tp.data_term, &tp.reg_term);
  tp.objective = f_cur;
  res.trace.push_back(tp);

  int consecutive_increases = 0;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const std::vector<double> g = gradient(z);
    std::vector<double> cand(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) cand[i] = z[i] - step * g[i];
    cand = prox(std::move(cand));
    CsTracePoint ctp;
    const double f_cand = objective(cand, &ctp.data_term, &ctp.reg_term);
    ctp.objective = f_cand;
    if (f_cand > f_cur) {
      if (++consecutive_increases >= 10)
        throw NumericError("cs: objective increased for 10 consecutive iterations; "
                           "reduce the step size (or leave it on automatic)");
      // Monotone safeguard: keep y, restart the momentum from it.
      z = y;
      t = 1.0;
      res.trace.push_back(res.trace.back());
      res.iterations = it;
      continue;
    }
    consecutive_increases = 0;
    const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
    const double mom = (t - 1.0) / t_next;
    std::vector<double> z_next(cand.size());
    for (std::size_t i = 0; i < cand.size(); ++i)
      z_next[i] = cand[i] + mom * (cand[i] - y[i]);
    const double f_prev = f_cur;
    y = std::move(cand);
    z = std::move(z_next);
    t = t_next;
    f_cur = f_cand;
    res.trace.push_back(ctp);
    res.iterations = it;
    if (std::abs(f_prev - f_cur) <= cfg.tol * std::max(1.0, std::abs(f_prev))) break;
  }
  res.image = Tensor<double>::from_data({2, h, w}, std::move(y));
  return res;
}

/// Objective trace CSV: iter, objective, data_term, reg_term.
inline void cs_trace_write(const CsResult& res, const std::string& path) {
  std::string csv = "iter,objective,data_term,reg_term\n";
  for (std::size_t i = 0; i < res.trace.size(); ++i) {
    const auto& t = res.trace[i];
    csv += std::to_string(i) + "," + std::to_string(t.objective) + "," +
           std::to_string(t.data_term) + "," + std::to_string(t.reg_term) + "\n";
  }
  write_file_bytes(path, csv);
}

}  // namespace oucr
