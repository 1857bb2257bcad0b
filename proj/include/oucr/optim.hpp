#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oucr/common.hpp"
#include "oucr/model.hpp"

namespace oucr {

struct TrainConfig {
  double lr_init = 1.5e-4;
  double lr_decay = 0.9;
  int lr_decay_every = 5;
  int max_epochs = 50;
  int batch_size = 4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  int J = 0;  // overrides ModelConfig::iterations when > 0

  double clip_norm = 1.0;          // global-norm gradient clip; <= 0 disables
  bool loss_on_magnitude = false;  // default: l1 over the 2-channel complex pair

  // Undersampling protocol for simulated measurements.
  int af = 4;
  std::uint64_t mask_seed = 0;
  bool mask_per_sample = false;
  double noise_sigma = 0.0;

  void validate() const {
    if (lr_init <= 0) throw ValueError("train: lr_init must be positive");
    if (lr_decay <= 0 || lr_decay > 1) throw ValueError("train: lr_decay must be in (0,1]");
    if (lr_decay_every < 1) throw ValueError("train: lr_decay_every must be >= 1");
    if (max_epochs < 1) throw ValueError("train: max_epochs must be >= 1");
    if (batch_size < 1) throw ValueError("train: batch_size must be >= 1");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw ValueError("train: betas must be in [0,1)");
    if (eps <= 0) throw ValueError("train: eps must be positive");
  }
};

/// Piecewise-constant decay: lr_init * decay^(epoch / every).
inline double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ValueError("lr_schedule: epoch must be >= 0");
  return cfg.lr_init * std::pow(cfg.lr_decay, double(epoch / cfg.lr_decay_every));
}

template <class S>
struct AdamState {
  struct Slot {
    std::vector<S> m, v;
  };
  std::map<std::string, Slot> slots;
  std::int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  AdamState() = default;
  AdamState(const ParamSet<S>& params, double b1, double b2, double e)
      : beta1(b1), beta2(b2), eps(e) {
    for (const auto& [name, p] : params.entries) {
      Slot s;
      s.m.assign(std::size_t(p.numel()), S(0));
      s.v.assign(std::size_t(p.numel()), S(0));
      slots.emplace(name, std::move(s));
    }
  }
};

/// Standard bias-corrected Adam update over every parameter in the set.
template <class S>
void adam_step(ParamSet<S>& params, AdamState<S>& st, double lr) {
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, double(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, double(st.t));
  for (auto& [name, p] : params.entries) {
    const std::vector<S>* g = p.grad();
    if (!p.requires_grad() || !g)
      throw ValueError("adam_step: missing gradient for parameter '" + name + "'");
    auto sit = st.slots.find(name);
    if (sit == st.slots.end())
      throw ValueError("adam_step: no optimizer state for parameter '" + name + "'");
    auto& slot = sit->second;
    auto& theta = p.data();
    const S b1 = S(st.beta1), b2 = S(st.beta2);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const S gi = (*g)[i];
      slot.m[i] = b1 * slot.m[i] + (S(1) - b1) * gi;
      slot.v[i] = b2 * slot.v[i] + (S(1) - b2) * gi * gi;
      const S mhat = S(double(slot.m[i]) / bc1);
      const S vhat = S(double(slot.v[i]) / bc2);
      theta[i] -= S(lr) * mhat / (std::sqrt(vhat) + S(st.eps));
    }
  }
}

/// Scales all gradients so their joint l2 norm is at most max_norm.
/// Returns the pre-clip norm.
template <class S>
double clip_global_norm(ParamSet<S>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params.entries) {
    const std::vector<S>* g = p.grad();
    if (!g) throw ValueError("clip_global_norm: missing gradient for parameter '" + name + "'");
    for (S v : *g) sq += double(v) * double(v);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const S s = S(max_norm / norm);
    for (auto& [name, p] : params.entries)
      for (auto& v : *p.mutable_grad()) v *= s;
  }
  return norm;
}

}  // namespace oucr
