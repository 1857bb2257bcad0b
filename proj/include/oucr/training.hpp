#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "oucr/checkpoint.hpp"
#include "oucr/common.hpp"
#include "oucr/data.hpp"
#include "oucr/kspace.hpp"
#include "oucr/metrics.hpp"
#include "oucr/model.hpp"
#include "oucr/optim.hpp"

namespace oucr {

struct EpochLog {
  int epoch = 0;
  double lr = 0, train_l1 = 0, val_psnr = 0, val_ssim = 0, wall_seconds = 0;
};

struct TrainResult {
  int epochs_run = 0;
  int best_epoch = -1;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
  std::vector<EpochLog> log;
};

template <class S>
Tensor<S> normalized_target(const Sample& s) {
  const auto& src = s.target.data();
  std::vector<S> v(src.size());
  const double inv = 1.0 / s.norm_scale;
  for (std::size_t i = 0; i < src.size(); ++i) v[i] = S(src[i] * inv);
  return Tensor<S>::from_data(s.target.shape(), std::move(v));
}

namespace detail {

template <class S>
std::string param_norm_report(const ParamSet<S>& ps) {
  std::map<std::string, double> sq;
  for (const auto& [path, t] : ps.entries) {
    const std::string ns = path.substr(0, path.find('.'));
    for (S v : t.data()) sq[ns] += double(v) * double(v);
  }
  std::string out;
  for (const auto& [ns, s] : sq) out += ns + "=" + format_double(std::sqrt(s)) + " ";
  return out;
}

/// Measurement simulation for one sample under the run's mask protocol.
template <class S>
KSpaceData<S> simulate_measurement(const Tensor<S>& target_norm, const Mask& base_mask,
                                   const TrainConfig& cfg, std::uint64_t sample_tag, int epoch) {
  Mask m = base_mask;
  if (cfg.mask_per_sample)
    m = mask_generate(base_mask.h, base_mask.w, cfg.af,
                      mix_seed(mix_seed(cfg.mask_seed, sample_tag), std::uint64_t(epoch)));
  KSpaceData<S> x = forward_encode(target_norm, m);
  if (cfg.noise_sigma > 0)
    add_kspace_noise(x, cfg.noise_sigma,
                     mix_seed(mix_seed(cfg.seed, 0xA015Eull + sample_tag), std::uint64_t(epoch)));
  return x;
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochLog&)>;

/// The full training protocol: seeded shuffles, l1 loss over the complex
/// pair (magnitude optional), global-norm clipping, Adam with the stepped lr
/// schedule, per-epoch validation PSNR/SSIM, CSV logging, best/last
/// checkpoints, and bit-exact resumption from the last checkpoint.
template <class S>
TrainResult train(ModelConfig mcfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg,
                  const std::string& out_dir, bool resume = false,
                  const Mask* fixed_mask = nullptr, const EpochCallback& on_epoch = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (cfg.J > 0) mcfg.iterations = cfg.J;
  mcfg.validate();
  if (train_set.empty()) throw ValueError("train: empty training set");
  const int h = train_set[0].h(), w = train_set[0].w();
  if (h % 4 != 0 || w % 4 != 0)
    throw ValueError("train: spatial dims must be divisible by 4, got " + std::to_string(h) +
                     "x" + std::to_string(w));
  for (const auto& s : train_set)
    if (s.h() != h || s.w() != w)
      throw ShapeError("train: sample '" + s.id + "' shape differs from the rest");
  for (const auto& s : val_set)
    if (s.h() != h || s.w() != w)
      throw ShapeError("train: val sample '" + s.id + "' shape differs from the rest");

  fs::create_directories(out_dir);
  const std::string ckpt_last_json = out_dir + "/ckpt_last.json";
  const std::string ckpt_last_bin = out_dir + "/ckpt_last.bin";
  const std::string ckpt_best_json = out_dir + "/ckpt_best.json";
  const std::string ckpt_best_bin = out_dir + "/ckpt_best.bin";
  const std::string optim_json = out_dir + "/optim_last.json";
  const std::string optim_bin = out_dir + "/optim_last.bin";
  const std::string csv_path = out_dir + "/epochs.csv";

  const Mask base_mask =
      fixed_mask ? *fixed_mask : mask_generate(h, w, cfg.af, cfg.mask_seed);

  OucrParams<S> params = build_model<S>(mcfg, cfg.seed);
  ParamSet<S> pset = named_params(params);
  AdamState<S> adam(pset, cfg.beta1, cfg.beta2, cfg.eps);
  Rng rng(mix_seed(cfg.seed, 0x7EA17ull));

  TrainResult result;
  int start_epoch = 0;
  if (resume) {
    nlohmann::json meta = checkpoint_load_into(pset, ckpt_last_json, ckpt_last_bin);
    start_epoch = meta.at("epoch_next").get<int>();
    rng.set_state(meta.at("rng_state").get<std::uint64_t>());
    result.best_val_psnr = meta.at("best_val_psnr").get<double>();
    result.best_epoch = meta.at("best_epoch").get<int>();
    Checkpoint<S> ock = checkpoint_read<S>(optim_json, optim_bin);
    adam.t = ock.meta.at("t").template get<std::int64_t>();
    for (auto& [name, slot] : adam.slots) {
      auto mit = ock.tensors.find(name + ".m");
      auto vit = ock.tensors.find(name + ".v");
      if (mit == ock.tensors.end() || vit == ock.tensors.end())
        throw DataError("optimizer checkpoint: missing state for '" + name + "'");
      slot.m = mit->second.data();
      slot.v = vit->second.data();
    }
  } else {
    std::ofstream csv(csv_path, std::ios::trunc);
    csv << "epoch,lr,train_l1,val_psnr,val_ssim,wall_seconds\n";
  }

  for (int epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, cfg);
    // The epoch permutation must be a pure function of the rng state so a
    // resumed run replays bit-exactly: start from identity every epoch.
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    double loss_sum = 0.0;
    const std::size_t n = order.size();
    for (std::size_t start = 0; start < n; start += std::size_t(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + std::size_t(cfg.batch_size));
      const S inv_batch = S(1.0 / double(stop - start));
      pset.zero_grads();
      for (std::size_t k = start; k < stop; ++k) {
        const Sample& smp = train_set[order[k]];
        const Tensor<S> target = normalized_target<S>(smp);
        const KSpaceData<S> x =
            detail::simulate_measurement(target, base_mask, cfg, order[k], epoch);
        const ComplexImage<S> recon = oucr_forward(x, x.mask, params);
        Tensor<S> loss = cfg.loss_on_magnitude
                             ? l1_loss(complex_magnitude(recon), complex_magnitude(target))
                             : l1_loss(recon, target);
        const double lv = double(loss.item());
        if (!std::isfinite(lv))
          throw NumericError("train: non-finite loss (" + std::to_string(lv) + ") at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(start / std::size_t(cfg.batch_size)) +
                             "; parameter l2 norms: " + detail::param_norm_report(pset));
        loss_sum += lv;
        backward(scale(loss, inv_batch));
      }
      clip_global_norm(pset, cfg.clip_norm);
      adam_step(pset, adam, lr);
    }

    double val_psnr_mean = std::numeric_limits<double>::quiet_NaN();
    double val_ssim_mean = std::numeric_limits<double>::quiet_NaN();
    if (!val_set.empty()) {
      double ps = 0, ss = 0;
      for (std::size_t i = 0; i < val_set.size(); ++i) {
        const Sample& smp = val_set[i];
        const Tensor<S> target = normalized_target<S>(smp);
        Mask m = base_mask;
        if (cfg.mask_per_sample)
          m = mask_generate(h, w, cfg.af, mix_seed(cfg.mask_seed, 0xBA1ull + i));
        const KSpaceData<S> x = forward_encode(target, m);
        const ComplexImage<S> recon = oucr_forward(x, m, params);
        const auto mr = magnitude_of(tensor_cast<double>(recon));
        const auto mt = magnitude_of(tensor_cast<double>(target));
        ps += psnr(mr, mt);
        ss += ssim(mr, mt, h, w);
      }
      val_psnr_mean = ps / double(val_set.size());
      val_ssim_mean = ss / double(val_set.size());
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_l1 = loss_sum / double(n);
    log.val_psnr = val_psnr_mean;
    log.val_ssim = val_ssim_mean;
    log.wall_seconds = wall;
    result.log.push_back(log);
    result.epochs_run = epoch + 1;
    {
      std::ofstream csv(csv_path, std::ios::app);
      csv << log.epoch << "," << detail::format_double(log.lr) << ","
          << detail::format_double(log.train_l1) << "," << detail::format_double(log.val_psnr)
          << "," << detail::format_double(log.val_ssim) << ","
          << detail::format_double(log.wall_seconds) << "\n";
    }

    const bool improved = !val_set.empty() && val_psnr_mean > result.best_val_psnr;
    if (improved) {
      result.best_val_psnr = val_psnr_mean;
      result.best_epoch = epoch;
    }

    nlohmann::json meta;
    meta["epoch_next"] = epoch + 1;
    meta["rng_state"] = rng.state();
    meta["best_val_psnr"] = result.best_val_psnr;
    meta["best_epoch"] = result.best_epoch;
    meta["base_channels"] = mcfg.base_channels;
    meta["iterations"] = mcfg.iterations;
    meta["use_oc"] = mcfg.use_oc;
    meta["use_uc"] = mcfg.use_uc;
    meta["use_rm"] = mcfg.use_rm;
    meta["residual_dc"] = mcfg.residual_dc;
    checkpoint_save(pset.entries, meta, ckpt_last_json, ckpt_last_bin);
    {
      std::map<std::string, Tensor<S>> opt;
      for (const auto& [name, slot] : adam.slots) {
        opt.emplace(name + ".m",
                    Tensor<S>::from_data(pset.entries.at(name).shape(), slot.m));
        opt.emplace(name + ".v",
                    Tensor<S>::from_data(pset.entries.at(name).shape(), slot.v));
      }
      nlohmann::json ometa;
      ometa["t"] = adam.t;
      checkpoint_save(opt, ometa, optim_json, optim_bin);
    }
    if (improved) {
      nlohmann::json bmeta = meta;
      bmeta["epoch"] = epoch;
      bmeta["val_psnr"] = val_psnr_mean;
      checkpoint_save(pset.entries, bmeta, ckpt_best_json, ckpt_best_bin);
    }
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace oucr
