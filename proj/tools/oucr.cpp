// oucr — command-line front end for the OUCR reconstruction toolkit.
//
// Subcommands: gen-data | mask | train | reconstruct | eval | kband | cs |
// rf-probe | param-count. Options resolve as defaults <- --config JSON <-
// command-line flags (rightmost wins), and every run that produces files
// writes its resolved configuration plus the tool version next to them.
//
// Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric
// failure. OUCR_THREADS caps kernel-level parallelism.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include <oucr/oucr.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return json::parse(oucr::read_file_bytes(path));
  } catch (const json::exception& e) {
    throw oucr::UsageError("config file " + path + ": " + e.what());
  }
}

template <class T>
void cfg_apply(const json& cfg, const CLI::Option* opt, const char* key, T& var) {
  if ((opt && opt->count() > 0) || !cfg.contains(key)) return;
  try {
    var = cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw oucr::UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

void write_run_config(const std::string& out_dir, const char* subcommand, json resolved) {
  fs::create_directories(out_dir);
  resolved["tool_version"] = oucr::kVersion;
  resolved["subcommand"] = subcommand;
  oucr::write_file_bytes(out_dir + "/run_config.json", resolved.dump(2) + "\n");
}

struct DtypeOption {
  std::string value = "float64";
  void check() const {
    if (value != "float64" && value != "float32")
      throw oucr::UsageError("--dtype must be float64 or float32, got " + value);
  }
  bool is_double() const { return value == "float64"; }
};

oucr::Sample denormalized_recon(const oucr::Sample& src, const std::vector<double>& recon) {
  oucr::Sample out;
  out.id = src.id;
  out.norm_scale = src.norm_scale;
  std::vector<double> v(recon.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = recon[i] * src.norm_scale;
  out.target = oucr::Tensor<double>::from_data(src.target.shape(), std::move(v));
  return out;
}

void write_previews(const std::string& dir, const std::vector<oucr::Sample>& samples) {
  fs::create_directories(dir);
  for (const auto& s : samples) {
    const auto mag = oucr::magnitude_of(s.target);
    oucr::write_magnitude_png(dir + "/" + s.id + ".png", mag, s.w(), s.h());
  }
}

// --- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  std::string out, config;
  int h = 32, w = 32, count = 200, complexity = 2;
  std::uint64_t seed = 0;
  double train_frac = 0.71, val_frac = 0.10;
};

void run_gen_data(const GenDataArgs& a) {
  if (a.train_frac < 0 || a.val_frac < 0 || a.train_frac + a.val_frac > 1.0)
    throw oucr::UsageError("gen-data: fractions must be non-negative and sum to at most 1");
  std::vector<oucr::Sample> samples;
  samples.reserve(std::size_t(a.count));
  for (int i = 0; i < a.count; ++i) {
    oucr::Sample s =
        oucr::phantom_generate(a.h, a.w, oucr::mix_seed(a.seed, std::uint64_t(i)), a.complexity);
    char id[32];
    std::snprintf(id, sizeof(id), "p%06d", i);
    s.id = id;
    samples.push_back(std::move(s));
  }
  const std::array<double, 3> fr = {a.train_frac, a.val_frac, 1.0 - a.train_frac - a.val_frac};
  const oucr::SplitIds split = oucr::make_split(a.count, fr, a.seed);
  auto subset = [&](const std::vector<int>& ids) {
    std::vector<oucr::Sample> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(samples[std::size_t(i)]);
    return out;
  };
  oucr::dataset_write(subset(split.train), a.out + "/train", "train");
  oucr::dataset_write(subset(split.val), a.out + "/val", "val");
  oucr::dataset_write(subset(split.test), a.out + "/test", "test");
  json rc;
  rc["out"] = a.out;
  rc["h"] = a.h;
  rc["w"] = a.w;
  rc["count"] = a.count;
  rc["seed"] = a.seed;
  rc["complexity"] = a.complexity;
  rc["train_frac"] = a.train_frac;
  rc["val_frac"] = a.val_frac;
  write_run_config(a.out, "gen-data", rc);
  std::printf("gen-data: %zu train / %zu val / %zu test samples of 2x%dx%d under %s\n",
              split.train.size(), split.val.size(), split.test.size(), a.h, a.w, a.out.c_str());
}

// --- mask --------------------------------------------------------------------

struct MaskArgs {
  std::string out, config;
  int h = 32, w = 32, af = 4;
  std::uint64_t seed = 0;
};

void run_mask(const MaskArgs& a) {
  const oucr::Mask m = oucr::mask_generate(a.h, a.w, a.af, a.seed);
  fs::create_directories(a.out);
  oucr::mask_save(m, a.out + "/mask.bin", a.out + "/mask.json");
  json rc;
  rc["out"] = a.out;
  rc["h"] = a.h;
  rc["w"] = a.w;
  rc["af"] = a.af;
  rc["seed"] = a.seed;
  write_run_config(a.out, "mask", rc);
  std::printf("mask: %dx%d af %d -> %d sampled columns (realized af %.3f)\n", a.h, a.w, a.af,
              m.sampled_columns(), m.realized_af());
}

// --- shared model/train flag bundles ------------------------------------------

struct ModelArgs {
  int base_channels = 24;
  int j_iters = 5;
  bool no_oc = false, no_uc = false, no_rm = false, no_residual_dc = false;

  oucr::ModelConfig to_config() const {
    oucr::ModelConfig mc;
    mc.base_channels = base_channels;
    mc.iterations = j_iters;
    mc.use_oc = !no_oc;
    mc.use_uc = !no_uc;
    mc.use_rm = !no_rm;
    mc.residual_dc = !no_residual_dc;
    return mc;
  }
  void fill_json(json& rc) const {
    rc["base_channels"] = base_channels;
    rc["J"] = j_iters;
    rc["use_oc"] = !no_oc;
    rc["use_uc"] = !no_uc;
    rc["use_rm"] = !no_rm;
    rc["residual_dc"] = !no_residual_dc;
  }
};

// --- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, config;
  ModelArgs model;
  int epochs = 50, batch = 4;
  double lr = 1.5e-4, lr_decay = 0.9;
  int lr_decay_every = 5;
  double clip = 1.0, noise_sigma = 0.0;
  std::uint64_t seed = 0, mask_seed = 0;
  int af = 4;
  bool mask_per_sample = false, loss_magnitude = false, resume = false;
  DtypeOption dtype;
};

template <class S>
void run_train_typed(const TrainArgs& a) {
  const auto train_set = oucr::dataset_read_all(a.data + "/train");
  const auto val_set = oucr::dataset_read_all(a.data + "/val");
  oucr::TrainConfig tc;
  tc.lr_init = a.lr;
  tc.lr_decay = a.lr_decay;
  tc.lr_decay_every = a.lr_decay_every;
  tc.max_epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.seed = a.seed;
  tc.clip_norm = a.clip;
  tc.loss_on_magnitude = a.loss_magnitude;
  tc.af = a.af;
  tc.mask_seed = a.mask_seed;
  tc.mask_per_sample = a.mask_per_sample;
  tc.noise_sigma = a.noise_sigma;
  const oucr::TrainResult res = oucr::train<S>(
      a.model.to_config(), train_set, val_set, tc, a.out, a.resume, nullptr,
      [](const oucr::EpochLog& log) {
        std::printf("epoch %3d  lr %.3e  train_l1 %.6f  val_psnr %.3f  val_ssim %.4f  %.1fs\n",
                    log.epoch, log.lr, log.train_l1, log.val_psnr, log.val_ssim,
                    log.wall_seconds);
        std::fflush(stdout);
      });
  std::printf("train: %d epochs, best val PSNR %.3f dB at epoch %d; checkpoints in %s\n",
              res.epochs_run, res.best_val_psnr, res.best_epoch, a.out.c_str());
}

void run_train(const TrainArgs& a) {
  a.dtype.check();
  json rc;
  rc["data"] = a.data;
  rc["out"] = a.out;
  a.model.fill_json(rc);
  rc["epochs"] = a.epochs;
  rc["batch"] = a.batch;
  rc["lr"] = a.lr;
  rc["lr_decay"] = a.lr_decay;
  rc["lr_decay_every"] = a.lr_decay_every;
  rc["clip"] = a.clip;
  rc["seed"] = a.seed;
  rc["af"] = a.af;
  rc["mask_seed"] = a.mask_seed;
  rc["mask_per_sample"] = a.mask_per_sample;
  rc["noise_sigma"] = a.noise_sigma;
  rc["loss_magnitude"] = a.loss_magnitude;
  rc["dtype"] = a.dtype.value;
  rc["resume"] = a.resume;
  write_run_config(a.out, "train", rc);
  if (a.dtype.is_double())
    run_train_typed<double>(a);
  else
    run_train_typed<float>(a);
}

// --- reconstruct -----------------------------------------------------------------

struct ReconstructArgs {
  std::string data, ckpt, out, config;
  int af = 4, j_override = 0;
  std::uint64_t mask_seed = 0;
  bool no_png = false;
  DtypeOption dtype;
};

template <class S>
void run_reconstruct_typed(const ReconstructArgs& a) {
  const auto set = oucr::dataset_read_all(a.data);
  if (set.empty()) throw oucr::DataError("reconstruct: dataset " + a.data + " is empty");

  const std::string ckpt_json = a.ckpt + ".json", ckpt_bin = a.ckpt + ".bin";
  oucr::Checkpoint<S> peek = oucr::checkpoint_read<S>(ckpt_json, ckpt_bin);
  oucr::ModelConfig mc;
  try {
    mc.base_channels = peek.meta.at("base_channels").template get<int>();
    mc.iterations = peek.meta.at("iterations").template get<int>();
    mc.use_oc = peek.meta.at("use_oc").template get<bool>();
    mc.use_uc = peek.meta.at("use_uc").template get<bool>();
    mc.use_rm = peek.meta.at("use_rm").template get<bool>();
    mc.residual_dc = peek.meta.at("residual_dc").template get<bool>();
  } catch (const json::exception& e) {
    throw oucr::DataError("checkpoint " + ckpt_json + " lacks model metadata: " + e.what());
  }
  if (a.j_override > 0) mc.iterations = a.j_override;
  oucr::OucrParams<S> params = oucr::build_model<S>(mc, 0);
  oucr::ParamSet<S> pset = oucr::named_params(params);
  oucr::checkpoint_load_into(pset, ckpt_json, ckpt_bin);

  const int h = set[0].h(), w = set[0].w();
  const oucr::Mask mask = oucr::mask_generate(h, w, a.af, a.mask_seed);
  std::vector<oucr::Sample> recons;
  recons.reserve(set.size());
  for (const auto& smp : set) {
    const oucr::Tensor<S> target = oucr::normalized_target<S>(smp);
    const oucr::KSpaceData<S> x = oucr::forward_encode(target, mask);
    const oucr::ComplexImage<S> recon = oucr::oucr_forward(x, mask, params);
    recons.push_back(
        denormalized_recon(smp, oucr::tensor_cast<double>(recon).data()));
  }
  oucr::dataset_write(recons, a.out, "recon");
  oucr::mask_save(mask, a.out + "/mask.bin", a.out + "/mask.json");
  if (!a.no_png) write_previews(a.out + "/png", recons);
  std::printf("reconstruct: %zu samples -> %s\n", recons.size(), a.out.c_str());
}

void run_reconstruct(const ReconstructArgs& a) {
  a.dtype.check();
  json rc;
  rc["data"] = a.data;
  rc["ckpt"] = a.ckpt;
  rc["out"] = a.out;
  rc["af"] = a.af;
  rc["mask_seed"] = a.mask_seed;
  rc["J"] = a.j_override;
  rc["png"] = !a.no_png;
  rc["dtype"] = a.dtype.value;
  write_run_config(a.out, "reconstruct", rc);
  if (a.dtype.is_double())
    run_reconstruct_typed<double>(a);
  else
    run_reconstruct_typed<float>(a);
}

// --- eval / kband ------------------------------------------------------------------

struct EvalArgs {
  std::string recon, ref, out, method = "oucr", config;
  int af = 4;
  double radius_fraction = 0.15;
};

std::vector<std::pair<oucr::Sample, oucr::Sample>> paired_samples(const std::string& recon_dir,
                                                                  const std::string& ref_dir) {
  const auto recs = oucr::dataset_read_all(recon_dir);
  auto refs = oucr::dataset_read_all(ref_dir);
  if (recs.size() != refs.size())
    throw oucr::DataError("eval: " + recon_dir + " has " + std::to_string(recs.size()) +
                          " samples but " + ref_dir + " has " + std::to_string(refs.size()));
  std::vector<std::pair<oucr::Sample, oucr::Sample>> out;
  for (const auto& r : recs) {
    bool found = false;
    for (auto& g : refs)
      if (g.id == r.id) {
        out.emplace_back(r, g);
        found = true;
        break;
      }
    if (!found)
      throw oucr::DataError("eval: sample '" + r.id + "' missing from reference set " + ref_dir);
  }
  return out;
}

void run_eval(const EvalArgs& a) {
  const auto pairs = paired_samples(a.recon, a.ref);
  std::vector<oucr::ReconReport> reports;
  for (const auto& [rec, ref] : pairs) {
    oucr::ReconReport r;
    r.id = rec.id;
    r.method = a.method;
    r.af = a.af;
    const auto mr = oucr::magnitude_of(rec.target);
    const auto mg = oucr::magnitude_of(ref.target);
    r.psnr = oucr::psnr(mr, mg);
    r.ssim = oucr::ssim(mr, mg, ref.h(), ref.w());
    oucr::BandSpec low{oucr::BandSpec::Kind::Low, a.radius_fraction};
    oucr::BandSpec high{oucr::BandSpec::Kind::High, a.radius_fraction};
    r.low = oucr::band_analysis(rec.target, ref.target, low);
    r.high = oucr::band_analysis(rec.target, ref.target, high);
    reports.push_back(r);
  }
  fs::create_directories(a.out);
  oucr::emit_report(reports, a.out + "/report.csv", a.out + "/summary.json");
  json rc;
  rc["recon"] = a.recon;
  rc["ref"] = a.ref;
  rc["out"] = a.out;
  rc["method"] = a.method;
  rc["af"] = a.af;
  rc["radius_fraction"] = a.radius_fraction;
  write_run_config(a.out, "eval", rc);
  std::vector<double> ps;
  for (const auto& r : reports) ps.push_back(r.psnr);
  const auto q = oucr::quartiles(ps);
  std::printf("eval: %zu samples, PSNR mean %.3f median %.3f dB -> %s\n", reports.size(), q.mean,
              q.median, a.out.c_str());
}

struct KbandArgs {
  std::string recon, ref, out, method = "oucr", config;
  int af = 4;
  std::vector<double> radius_fractions = {0.05, 0.1, 0.15, 0.2, 0.3};
};

void run_kband(const KbandArgs& a) {
  const auto pairs = paired_samples(a.recon, a.ref);
  std::string csv = "id,method,af,band,radius_fraction,psnr_db,ssim\n";
  for (double rf : a.radius_fractions) {
    for (const auto& [rec, ref] : pairs) {
      for (auto kind : {oucr::BandSpec::Kind::Low, oucr::BandSpec::Kind::High}) {
        oucr::BandSpec spec{kind, rf};
        const auto bm = oucr::band_analysis(rec.target, ref.target, spec);
        csv += rec.id + "," + a.method + "," + std::to_string(a.af) + "," +
               (kind == oucr::BandSpec::Kind::Low ? "low" : "high") + "," +
               oucr::detail::format_double(rf) + "," + oucr::detail::format_double(bm.psnr) +
               "," + oucr::detail::format_double(bm.ssim) + "\n";
      }
    }
  }
  fs::create_directories(a.out);
  oucr::write_file_bytes(a.out + "/kband.csv", csv);
  json rc;
  rc["recon"] = a.recon;
  rc["ref"] = a.ref;
  rc["out"] = a.out;
  rc["method"] = a.method;
  rc["af"] = a.af;
  rc["radius_fractions"] = a.radius_fractions;
  write_run_config(a.out, "kband", rc);
  std::printf("kband: %zu samples x %zu fractions -> %s/kband.csv\n", pairs.size(),
              a.radius_fractions.size(), a.out.c_str());
}

// --- cs ------------------------------------------------------------------------------

struct CsArgs {
  std::string data, out, config, reg = "tv";
  int af = 4, iters = 150, tv_inner = 40;
  std::uint64_t mask_seed = 0;
  double lambda = 50.0, tol = 1e-10, step = 0.0;
  bool trace = false, no_png = false;
};

void run_cs(const CsArgs& a) {
  const auto set = oucr::dataset_read_all(a.data);
  if (set.empty()) throw oucr::DataError("cs: dataset " + a.data + " is empty");
  oucr::CsConfig cc;
  cc.lambda = a.lambda;
  cc.max_iters = a.iters;
  cc.tol = a.tol;
  cc.step = a.step;
  cc.tv_inner = a.tv_inner;
  if (a.reg == "tv")
    cc.reg = oucr::CsConfig::Reg::TV;
  else if (a.reg == "haar")
    cc.reg = oucr::CsConfig::Reg::Haar;
  else
    throw oucr::UsageError("cs: --reg must be tv or haar, got " + a.reg);

  const int h = set[0].h(), w = set[0].w();
  const oucr::Mask mask = oucr::mask_generate(h, w, a.af, a.mask_seed);
  if (a.trace) fs::create_directories(a.out + "/trace");
  std::vector<oucr::Sample> recons;
  for (const auto& smp : set) {
    const oucr::Tensor<double> target = oucr::normalized_target<double>(smp);
    const oucr::KSpaceData<double> x = oucr::forward_encode(target, mask);
    const oucr::CsResult res = oucr::cs_reconstruct(x, mask, cc);
    recons.push_back(denormalized_recon(smp, res.image.data()));
    if (a.trace) oucr::cs_trace_write(res, a.out + "/trace/" + smp.id + ".csv");
  }
  oucr::dataset_write(recons, a.out, "recon");
  oucr::mask_save(mask, a.out + "/mask.bin", a.out + "/mask.json");
  if (!a.no_png) write_previews(a.out + "/png", recons);
  json rc;
  rc["data"] = a.data;
  rc["out"] = a.out;
  rc["af"] = a.af;
  rc["mask_seed"] = a.mask_seed;
  rc["lambda"] = a.lambda;
  rc["reg"] = a.reg;
  rc["iters"] = a.iters;
  rc["tol"] = a.tol;
  rc["step"] = a.step;
  rc["tv_inner"] = a.tv_inner;
  rc["trace"] = a.trace;
  write_run_config(a.out, "cs", rc);
  std::printf("cs: %zu samples -> %s\n", recons.size(), a.out.c_str());
}

// --- rf-probe / param-count -----------------------------------------------------------

struct RfProbeArgs {
  int depth = 2, size = 64;
  double weight = 1.0;
};

void run_rf_probe(const RfProbeArgs& a) {
  std::printf("kind,depth,box_h,box_w,area\n");
  for (auto kind : {oucr::BranchKind::Overcomplete, oucr::BranchKind::Undercomplete}) {
    const auto box =
        oucr::receptive_field_probe(oucr::encoder_prefix(kind, a.depth), a.size, a.size, a.weight);
    std::printf("%s,%d,%d,%d,%lld\n", oucr::branch_name(kind), a.depth, box.height(), box.width(),
                (long long)box.area());
  }
}

void run_param_count(const ModelArgs& a) {
  oucr::ModelConfig mc = a.to_config();
  oucr::OucrParams<double> params = oucr::build_model<double>(mc, 0);
  const oucr::ParamSet<double> ps = oucr::named_params(params);
  std::printf("%lld\n", (long long)oucr::param_count(ps));
}

void add_model_flags(CLI::App* sub, ModelArgs& m) {
  sub->add_option("--base-channels", m.base_channels, "width of the first encoder conv");
  sub->add_option("--J", m.j_iters, "CRNN iterations per branch");
  sub->add_flag("--no-oc", m.no_oc, "disable the overcomplete branch");
  sub->add_flag("--no-uc", m.no_uc, "disable the undercomplete branch");
  sub->add_flag("--no-rm", m.no_rm, "disable the refine module");
  sub->add_flag("--no-residual-dc", m.no_residual_dc,
                "feed the decoder output to DC without the image-space residual");
}

}  // namespace

int main(int argc, char** argv) {
#if defined(_OPENMP)
  if (const char* t = std::getenv("OUCR_THREADS")) {
    const int n = std::atoi(t);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
  CLI::App app{"OUCR: over-and-under complete convolutional RNN MR reconstruction toolkit"};
  app.set_version_flag("--version", std::string("oucr ") + oucr::kVersion);
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset with splits");
  gen->add_option("--out", gd.out, "output directory")->required();
  auto* gd_h = gen->add_option("--h", gd.h, "image height");
  auto* gd_w = gen->add_option("--w", gd.w, "image width");
  auto* gd_n = gen->add_option("--count", gd.count, "total sample count");
  auto* gd_s = gen->add_option("--seed", gd.seed, "generation seed");
  auto* gd_c = gen->add_option("--complexity", gd.complexity, "phantom complexity level");
  auto* gd_tf = gen->add_option("--train-frac", gd.train_frac, "train fraction");
  auto* gd_vf = gen->add_option("--val-frac", gd.val_frac, "val fraction (test takes the rest)");
  gen->add_option("--config", gd.config, "JSON config file");
  gen->callback([&] {
    const json cfg = load_config_file(gd.config);
    cfg_apply(cfg, gd_h, "h", gd.h);
    cfg_apply(cfg, gd_w, "w", gd.w);
    cfg_apply(cfg, gd_n, "count", gd.count);
    cfg_apply(cfg, gd_s, "seed", gd.seed);
    cfg_apply(cfg, gd_c, "complexity", gd.complexity);
    cfg_apply(cfg, gd_tf, "train_frac", gd.train_frac);
    cfg_apply(cfg, gd_vf, "val_frac", gd.val_frac);
    run_gen_data(gd);
  });

  MaskArgs ma;
  auto* msk = app.add_subcommand("mask", "generate and store an undersampling mask");
  msk->add_option("--out", ma.out, "output directory")->required();
  auto* ma_h = msk->add_option("--h", ma.h, "rows");
  auto* ma_w = msk->add_option("--w", ma.w, "columns");
  auto* ma_a = msk->add_option("--af", ma.af, "acceleration factor (4 or 8)");
  auto* ma_s = msk->add_option("--seed", ma.seed, "mask seed");
  msk->add_option("--config", ma.config, "JSON config file");
  msk->callback([&] {
    const json cfg = load_config_file(ma.config);
    cfg_apply(cfg, ma_h, "h", ma.h);
    cfg_apply(cfg, ma_w, "w", ma.w);
    cfg_apply(cfg, ma_a, "af", ma.af);
    cfg_apply(cfg, ma_s, "seed", ma.seed);
    run_mask(ma);
  });

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "train an OUCR model on a generated dataset");
  trn->add_option("--data", ta.data, "dataset root (expects train/ and val/)")->required();
  trn->add_option("--out", ta.out, "run output directory")->required();
  add_model_flags(trn, ta.model);
  auto* ta_e = trn->add_option("--epochs", ta.epochs, "maximum epochs");
  auto* ta_b = trn->add_option("--batch", ta.batch, "batch size");
  auto* ta_lr = trn->add_option("--lr", ta.lr, "initial learning rate");
  auto* ta_ld = trn->add_option("--lr-decay", ta.lr_decay, "decay factor");
  auto* ta_le = trn->add_option("--lr-decay-every", ta.lr_decay_every, "epochs per decay step");
  auto* ta_cl = trn->add_option("--clip", ta.clip, "global-norm gradient clip (<=0 disables)");
  auto* ta_se = trn->add_option("--seed", ta.seed, "training seed");
  auto* ta_af = trn->add_option("--af", ta.af, "acceleration factor");
  auto* ta_ms = trn->add_option("--mask-seed", ta.mask_seed, "mask seed");
  trn->add_flag("--mask-per-sample", ta.mask_per_sample, "draw a fresh mask per sample/epoch");
  auto* ta_ns = trn->add_option("--noise-sigma", ta.noise_sigma, "k-space noise sigma (0 = off)");
  trn->add_flag("--loss-magnitude", ta.loss_magnitude, "l1 on magnitudes instead of channels");
  auto* ta_dt = trn->add_option("--dtype", ta.dtype.value, "float64 or float32");
  trn->add_flag("--resume", ta.resume, "resume from ckpt_last in --out");
  trn->add_option("--config", ta.config, "JSON config file");
  trn->callback([&] {
    const json cfg = load_config_file(ta.config);
    cfg_apply(cfg, ta_e, "epochs", ta.epochs);
    cfg_apply(cfg, ta_b, "batch", ta.batch);
    cfg_apply(cfg, ta_lr, "lr", ta.lr);
    cfg_apply(cfg, ta_ld, "lr_decay", ta.lr_decay);
    cfg_apply(cfg, ta_le, "lr_decay_every", ta.lr_decay_every);
    cfg_apply(cfg, ta_cl, "clip", ta.clip);
    cfg_apply(cfg, ta_se, "seed", ta.seed);
    cfg_apply(cfg, ta_af, "af", ta.af);
    cfg_apply(cfg, ta_ms, "mask_seed", ta.mask_seed);
    cfg_apply(cfg, ta_ns, "noise_sigma", ta.noise_sigma);
    cfg_apply(cfg, ta_dt, "dtype", ta.dtype.value);
    run_train(ta);
  });

  ReconstructArgs ra;
  auto* rec = app.add_subcommand("reconstruct", "run a trained model over a dataset");
  rec->add_option("--data", ra.data, "dataset directory to reconstruct")->required();
  rec->add_option("--ckpt", ra.ckpt, "checkpoint base path (without .json/.bin)")->required();
  rec->add_option("--out", ra.out, "output directory")->required();
  auto* ra_af = rec->add_option("--af", ra.af, "acceleration factor");
  auto* ra_ms = rec->add_option("--mask-seed", ra.mask_seed, "mask seed");
  auto* ra_j = rec->add_option("--J", ra.j_override, "override CRNN iterations (0 = checkpoint)");
  rec->add_flag("--no-png", ra.no_png, "skip PNG previews");
  auto* ra_dt = rec->add_option("--dtype", ra.dtype.value, "float64 or float32");
  rec->add_option("--config", ra.config, "JSON config file");
  rec->callback([&] {
    const json cfg = load_config_file(ra.config);
    cfg_apply(cfg, ra_af, "af", ra.af);
    cfg_apply(cfg, ra_ms, "mask_seed", ra.mask_seed);
    cfg_apply(cfg, ra_j, "J", ra.j_override);
    cfg_apply(cfg, ra_dt, "dtype", ra.dtype.value);
    run_reconstruct(ra);
  });

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "PSNR/SSIM and band metrics against a reference set");
  evl->add_option("--recon", ea.recon, "reconstruction dataset directory")->required();
  evl->add_option("--ref", ea.ref, "reference dataset directory")->required();
  evl->add_option("--out", ea.out, "output directory")->required();
  auto* ea_m = evl->add_option("--method", ea.method, "method tag for the report");
  auto* ea_a = evl->add_option("--af", ea.af, "acceleration factor tag");
  auto* ea_r = evl->add_option("--radius-fraction", ea.radius_fraction, "low-band disc radius");
  evl->add_option("--config", ea.config, "JSON config file");
  evl->callback([&] {
    const json cfg = load_config_file(ea.config);
    cfg_apply(cfg, ea_m, "method", ea.method);
    cfg_apply(cfg, ea_a, "af", ea.af);
    cfg_apply(cfg, ea_r, "radius_fraction", ea.radius_fraction);
    run_eval(ea);
  });

  KbandArgs ka;
  auto* kbd = app.add_subcommand("kband", "k-space band analysis over radius fractions");
  kbd->add_option("--recon", ka.recon, "reconstruction dataset directory")->required();
  kbd->add_option("--ref", ka.ref, "reference dataset directory")->required();
  kbd->add_option("--out", ka.out, "output directory")->required();
  auto* ka_m = kbd->add_option("--method", ka.method, "method tag");
  auto* ka_a = kbd->add_option("--af", ka.af, "acceleration factor tag");
  auto* ka_r = kbd->add_option("--radius-fractions", ka.radius_fractions,
                               "list of low-band radius fractions");
  kbd->add_option("--config", ka.config, "JSON config file");
  kbd->callback([&] {
    const json cfg = load_config_file(ka.config);
    cfg_apply(cfg, ka_m, "method", ka.method);
    cfg_apply(cfg, ka_a, "af", ka.af);
    cfg_apply(cfg, ka_r, "radius_fractions", ka.radius_fractions);
    run_kband(ka);
  });

  CsArgs ca;
  auto* csb = app.add_subcommand("cs", "FISTA compressed-sensing baseline reconstruction");
  csb->add_option("--data", ca.data, "dataset directory")->required();
  csb->add_option("--out", ca.out, "output directory")->required();
  auto* ca_af = csb->add_option("--af", ca.af, "acceleration factor");
  auto* ca_ms = csb->add_option("--mask-seed", ca.mask_seed, "mask seed");
  auto* ca_l = csb->add_option("--lambda", ca.lambda, "data-fidelity weight");
  auto* ca_r = csb->add_option("--reg", ca.reg, "regularizer: tv or haar");
  auto* ca_i = csb->add_option("--iters", ca.iters, "max FISTA iterations");
  auto* ca_t = csb->add_option("--tol", ca.tol, "relative objective tolerance");
  auto* ca_s = csb->add_option("--step", ca.step, "step size (0 = 1/(2*lambda))");
  auto* ca_v = csb->add_option("--tv-inner", ca.tv_inner, "TV prox inner iterations");
  csb->add_flag("--trace", ca.trace, "write per-sample objective traces");
  csb->add_flag("--no-png", ca.no_png, "skip PNG previews");
  csb->add_option("--config", ca.config, "JSON config file");
  csb->callback([&] {
    const json cfg = load_config_file(ca.config);
    cfg_apply(cfg, ca_af, "af", ca.af);
    cfg_apply(cfg, ca_ms, "mask_seed", ca.mask_seed);
    cfg_apply(cfg, ca_l, "lambda", ca.lambda);
    cfg_apply(cfg, ca_r, "reg", ca.reg);
    cfg_apply(cfg, ca_i, "iters", ca.iters);
    cfg_apply(cfg, ca_t, "tol", ca.tol);
    cfg_apply(cfg, ca_s, "step", ca.step);
    cfg_apply(cfg, ca_v, "tv_inner", ca.tv_inner);
    run_cs(ca);
  });

  RfProbeArgs rfa;
  auto* rfp = app.add_subcommand("rf-probe", "receptive-field bounding boxes, OC vs UC prefix");
  rfp->add_option("--depth", rfa.depth, "encoder blocks in the probed prefix");
  rfp->add_option("--size", rfa.size, "square input extent");
  rfp->add_option("--weight", rfa.weight, "probe weight value (0 demonstrates the error path)");
  rfp->callback([&] { run_rf_probe(rfa); });

  ModelArgs pca;
  auto* pcc = app.add_subcommand("param-count", "trainable parameter count for a model config");
  add_model_flags(pcc, pca);
  pcc->callback([&] { run_param_count(pca); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const oucr::UsageError& e) {
    std::fprintf(stderr, "error (usage): %s\n", e.what());
    return 2;
  } catch (const oucr::ValueError& e) {
    std::fprintf(stderr, "error (config): %s\n", e.what());
    return 2;
  } catch (const oucr::DataError& e) {
    std::fprintf(stderr, "error (data): %s\n", e.what());
    return 3;
  } catch (const oucr::ShapeError& e) {
    std::fprintf(stderr, "error (shape): %s\n", e.what());
    return 3;
  } catch (const oucr::NumericError& e) {
    std::fprintf(stderr, "error (numeric): %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
