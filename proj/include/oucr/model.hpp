#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oucr/common.hpp"
#include "oucr/fft.hpp"
#include "oucr/kspace.hpp"
#include "oucr/tensor.hpp"

namespace oucr {

enum class BranchKind { Overcomplete, Undercomplete };

inline const char* branch_name(BranchKind k) {
  return k == BranchKind::Overcomplete ? "oc" : "uc";
}

struct ModelConfig {
  int base_channels = 24;
  int iterations = 5;  // CRNN iteration count J
  int depth = 2;       // encoder blocks per branch; the architecture fixes this
  bool use_oc = true;
  bool use_uc = true;
  bool use_rm = true;
  // Feed the decoder output through an image-space residual (+ y) before DC.
  // The strict non-residual form is kept for A/B comparison.
  bool residual_dc = true;

  void validate() const {
    if (iterations < 1) throw ValueError("model: iterations J must be >= 1");
    if (depth != 2) throw ValueError("model: encoder depth is fixed at 2");
    if (base_channels < 1) throw ValueError("model: base_channels must be >= 1");
    if (!use_oc && !use_uc) throw ValueError("model: at least one branch must be enabled");
  }

  int oc_bottleneck_channels() const { return std::max(1, base_channels / 2); }
  int uc_bottleneck_channels() const { return 2 * base_channels; }
};

template <class S>
struct ConvParam {
  Tensor<S> weight;  // [C_out,C_in,3,3]
  Tensor<S> bias;    // [C_out]
};

template <class S>
struct BranchParams {
  BranchKind kind = BranchKind::Undercomplete;
  int c1 = 0;  // width after the first encoder conv
  int c2 = 0;  // bottleneck width
  ConvParam<S> enc1, enc2, res1, res2, dec1, dec2;
};

template <class S>
struct RefineParams {
  int in_channels = 4;
  int width = 0;
  std::array<ConvParam<S>, 4> convs;  // 3x conv+relu, then a linear conv to 2 channels
};

template <class S>
struct OucrParams {
  ModelConfig cfg;
  std::optional<BranchParams<S>> oc, uc;
  std::optional<RefineParams<S>> rm;
};

namespace detail {

/// Kaiming-style fan-in uniform init, bound sqrt(6/fan_in); biases zero.
template <class S>
ConvParam<S> make_conv(int c_out, int c_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / (9.0 * double(c_in)));
  std::vector<S> w(std::size_t(c_out) * std::size_t(c_in) * 9);
  for (auto& v : w) v = S(rng.uniform(-bound, bound));
  ConvParam<S> p;
  p.weight = Tensor<S>::from_data({c_out, c_in, 3, 3}, std::move(w));
  p.weight.set_requires_grad();
  p.bias = Tensor<S>::zeros({c_out});
  p.bias.set_requires_grad();
  return p;
}

}  // namespace detail

template <class S>
BranchParams<S> build_branch(BranchKind kind, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  BranchParams<S> bp;
  bp.kind = kind;
  bp.c1 = cfg.base_channels;
  bp.c2 = kind == BranchKind::Overcomplete ? cfg.oc_bottleneck_channels()
                                           : cfg.uc_bottleneck_channels();
  bp.enc1 = detail::make_conv<S>(bp.c1, 2, rng);
  bp.enc2 = detail::make_conv<S>(bp.c2, bp.c1, rng);
  bp.res1 = detail::make_conv<S>(bp.c2, bp.c2, rng);
  bp.res2 = detail::make_conv<S>(bp.c2, bp.c2, rng);
  bp.dec1 = detail::make_conv<S>(bp.c1, bp.c2, rng);
  bp.dec2 = detail::make_conv<S>(2, bp.c1, rng);
  return bp;
}

template <class S>
RefineParams<S> build_refine(int in_channels, const ModelConfig& cfg, Rng& rng) {
  RefineParams<S> rp;
  rp.in_channels = in_channels;
  rp.width = cfg.base_channels;
  rp.convs[0] = detail::make_conv<S>(rp.width, in_channels, rng);
  rp.convs[1] = detail::make_conv<S>(rp.width, rp.width, rng);
  rp.convs[2] = detail::make_conv<S>(rp.width, rp.width, rng);
  rp.convs[3] = detail::make_conv<S>(2, rp.width, rng);
  return rp;
}

/// Builds every parameter the configuration calls for, seeded. The same
/// parameters are shared by all J iterations of a branch (tied weights).
template <class S>
OucrParams<S> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  OucrParams<S> p;
  p.cfg = cfg;
  Rng rng(mix_seed(seed, 0x0C0DEDull));
  if (cfg.use_oc) p.oc = build_branch<S>(BranchKind::Overcomplete, cfg, rng);
  if (cfg.use_uc) p.uc = build_branch<S>(BranchKind::Undercomplete, cfg, rng);
  if (cfg.use_rm) {
    const int branches = (cfg.use_oc ? 1 : 0) + (cfg.use_uc ? 1 : 0);
    p.rm = build_refine<S>(2 * branches, cfg, rng);
  }
  return p;
}

/// Named view over the model parameters. Paths are namespaced oc./uc./rm.;
/// tensors are shared with the owning structs, not copied.
template <class S>
struct ParamSet {
  std::map<std::string, Tensor<S>> entries;

  void add(const std::string& path, const Tensor<S>& t) { entries.emplace(path, t); }

  void zero_grads() {
    for (auto& [k, t] : entries) t.zero_grad();
  }
};

template <class S>
void register_branch(ParamSet<S>& ps, const std::string& ns, BranchParams<S>& bp) {
  const std::pair<const char*, ConvParam<S>*> convs[] = {
      {"enc1", &bp.enc1}, {"enc2", &bp.enc2}, {"res1", &bp.res1},
      {"res2", &bp.res2}, {"dec1", &bp.dec1}, {"dec2", &bp.dec2}};
  for (auto [name, c] : convs) {
    ps.add(ns + "." + name + ".weight", c->weight);
    ps.add(ns + "." + name + ".bias", c->bias);
  }
}

template <class S>
ParamSet<S> named_params(OucrParams<S>& p) {
  ParamSet<S> ps;
  if (p.oc) register_branch(ps, "oc", *p.oc);
  if (p.uc) register_branch(ps, "uc", *p.uc);
  if (p.rm)
    for (std::size_t i = 0; i < p.rm->convs.size(); ++i) {
      ps.add("rm.conv" + std::to_string(i) + ".weight", p.rm->convs[std::size_t(i)].weight);
      ps.add("rm.conv" + std::to_string(i) + ".bias", p.rm->convs[std::size_t(i)].bias);
    }
  return ps;
}

template <class S>
std::int64_t param_count(const ParamSet<S>& ps) {
  std::int64_t n = 0;
  for (const auto& [k, t] : ps.entries) n += t.numel();
  return n;
}

// --- branch building blocks -------------------------------------------------

namespace detail {

template <class S>
Tensor<S> enc_resample(BranchKind kind, const Tensor<S>& t) {
  return kind == BranchKind::Overcomplete ? upsample_nearest2x2(t) : maxpool2x2(t);
}

template <class S>
Tensor<S> dec_resample(BranchKind kind, const Tensor<S>& t) {
  return kind == BranchKind::Overcomplete ? maxpool2x2(t) : upsample_nearest2x2(t);
}

}  // namespace detail

/// Encoder: 2 x [conv3x3 -> relu -> resample]. UC pools, OC upsamples.
template <class S>
Tensor<S> branch_encode(const BranchParams<S>& bp, const Tensor<S>& y) {
  if (bp.kind == BranchKind::Undercomplete &&
      (y.extent(1) % 4 != 0 || y.extent(2) % 4 != 0))
    throw ShapeError("undercomplete branch needs spatial dims divisible by 4, got " +
                     shape_str(y.shape()));
  Tensor<S> t = detail::enc_resample(bp.kind, relu(conv2d(y, bp.enc1.weight, bp.enc1.bias)));
  return detail::enc_resample(bp.kind, relu(conv2d(t, bp.enc2.weight, bp.enc2.bias)));
}

/// Two convolutions with a skip connection, at bottleneck resolution.
template <class S>
Tensor<S> branch_resblock(const BranchParams<S>& bp, const Tensor<S>& h) {
  Tensor<S> t = relu(conv2d(h, bp.res1.weight, bp.res1.bias));
  t = relu(conv2d(t, bp.res2.weight, bp.res2.bias));
  return add(h, t);
}

/// Decoder: 2 x [conv3x3 -> resample] with the opposite resampler; the final
/// conv is linear with 2 output channels.
template <class S>
Tensor<S> branch_decode(const BranchParams<S>& bp, const Tensor<S>& b) {
  Tensor<S> t = detail::dec_resample(bp.kind, relu(conv2d(b, bp.dec1.weight, bp.dec1.bias)));
  return detail::dec_resample(bp.kind, conv2d(t, bp.dec2.weight, bp.dec2.bias));
}

template <class S>
struct CrnnResult {
  ComplexImage<S> image;
  Tensor<S> hidden;  // bottleneck features after the last iteration
};

/// Unrolled CRNN iterations with hard data consistency:
///   b      <- f_res(h) + f_enc(y)
///   h      <- b
///   y_next <- DC(f_dec(b) [+ y], x, D)
/// The hidden state starts at zeros and persists across the J iterations.
template <class S>
CrnnResult<S> crnn_iterate(const BranchParams<S>& bp, const ComplexImage<S>& y0,
                           const KSpaceData<S>& x, const Mask& mask, int j_iters,
                           bool residual_dc = true) {
  if (j_iters < 1) throw ValueError("crnn_iterate: J must be >= 1");
  check_mask_shape(y0, mask, "crnn_iterate");
  const int h = y0.extent(1), w = y0.extent(2);
  const bool over = bp.kind == BranchKind::Overcomplete;
  if (!over && (h % 4 != 0 || w % 4 != 0))
    throw ShapeError("undercomplete branch needs spatial dims divisible by 4, got " +
                     shape_str(y0.shape()));
  const int bh = over ? 4 * h : h / 4;
  const int bw = over ? 4 * w : w / 4;
  Tensor<S> hidden = Tensor<S>::zeros({bp.c2, bh, bw});
  Tensor<S> y = y0;
  for (int j = 0; j < j_iters; ++j) {
    Tensor<S> b = add(branch_resblock(bp, hidden), branch_encode(bp, y));
    hidden = b;
    Tensor<S> d = branch_decode(bp, b);
    Tensor<S> z = residual_dc ? add(d, y) : d;
    y = data_consistency(z, x, mask);
  }
  return {y, hidden};
}

/// Refine module: channel-concatenated branch outputs through 3 x
/// [conv3x3 -> relu] and a final linear conv to 2 channels, plus a global
/// residual from the last branch output.
template <class S>
ComplexImage<S> refine_module(const std::vector<ComplexImage<S>>& branch_outputs,
                              const RefineParams<S>& rp) {
  if (branch_outputs.empty()) throw ValueError("refine_module: no branch outputs");
  if (int(branch_outputs.size()) * 2 != rp.in_channels)
    throw ShapeError("refine_module: built for " + std::to_string(rp.in_channels) +
                     " input channels, got " + std::to_string(2 * branch_outputs.size()));
  Tensor<S> t = branch_outputs[0];
  for (std::size_t i = 1; i < branch_outputs.size(); ++i)
    t = concat_channels(t, branch_outputs[std::size_t(i)]);
  for (int i = 0; i < 3; ++i)
    t = relu(conv2d(t, rp.convs[std::size_t(i)].weight, rp.convs[std::size_t(i)].bias));
  t = conv2d(t, rp.convs[3].weight, rp.convs[3].bias);
  return add(t, branch_outputs.back());
}

template <class S>
ComplexImage<S> refine_module(const ComplexImage<S>& y_oc, const ComplexImage<S>& y_uc,
                              const RefineParams<S>& rp) {
  return refine_module(std::vector<ComplexImage<S>>{y_oc, y_uc}, rp);
}

/// Full OUCR composition:
///   x̄    <- zero_fill(x)
///   ȳ_oc <- OC-CRNN(x̄, x, D)
///   ȳ_uc <- UC-CRNN(ȳ_oc, x, D)
///   ȳ    <- DC(RM(ȳ_oc ⊗ ȳ_uc), x, D)
/// Disabled branches are bypassed (the next stage takes the previous output);
/// without RM the result is the last branch output, which is already
/// data-consistent.
template <class S>
ComplexImage<S> oucr_forward(const KSpaceData<S>& x, const Mask& mask,
                             const OucrParams<S>& params) {
  const ModelConfig& cfg = params.cfg;
  cfg.validate();
  ComplexImage<S> current = zero_fill(x);
  std::vector<ComplexImage<S>> outputs;
  if (cfg.use_oc) {
    current = crnn_iterate(*params.oc, current, x, mask, cfg.iterations, cfg.residual_dc).image;
    outputs.push_back(current);
  }
  if (cfg.use_uc) {
    current = crnn_iterate(*params.uc, current, x, mask, cfg.iterations, cfg.residual_dc).image;
    outputs.push_back(current);
  }
  if (!cfg.use_rm) return current;
  return data_consistency(refine_module(outputs, *params.rm), x, mask);
}

// --- receptive-field probe ---------------------------------------------------

enum class ProbeOp { Conv3x3, MaxPool2x2, Upsample2x2 };

struct RfBox {
  int row0 = 0, row1 = -1, col0 = 0, col1 = -1;  // inclusive
  int height() const { return row1 - row0 + 1; }
  int width() const { return col1 - col0 + 1; }
  std::int64_t area() const { return std::int64_t(height()) * width(); }
};

/// Encoder prefix of a branch as seen by the first bottleneck convolution:
/// depth x [conv3x3 -> resample] followed by one conv3x3. The trailing conv
/// matters: it makes the probed box reflect forward dependence through the
/// resampler rather than the argmax routing of a bare final maxpool.
inline std::vector<ProbeOp> encoder_prefix(BranchKind kind, int depth) {
  if (depth < 1) throw ValueError("encoder_prefix: depth must be >= 1");
  std::vector<ProbeOp> stack;
  for (int d = 0; d < depth; ++d) {
    stack.push_back(ProbeOp::Conv3x3);
    stack.push_back(kind == BranchKind::Overcomplete ? ProbeOp::Upsample2x2
                                                     : ProbeOp::MaxPool2x2);
  }
  stack.push_back(ProbeOp::Conv3x3);
  return stack;
}

/// Runs a linearized single-channel version of the stack (all-ones weights,
/// no activations), differentiates the center output pixel with respect to
/// the input, and returns the bounding box of nonzero gradient entries.
inline RfBox receptive_field_probe(const std::vector<ProbeOp>& stack, int h, int w,
                                   double weight_value = 1.0) {
  if (h < 1 || w < 1) throw ValueError("receptive_field_probe: bad extents");
  Tensor<double> input = Tensor<double>::full({1, h, w}, 1.0);
  input.set_requires_grad();
  Tensor<double> weight = Tensor<double>::full({1, 1, 3, 3}, weight_value);
  Tensor<double> bias = Tensor<double>::zeros({1});
  Tensor<double> t = input;
  for (ProbeOp op : stack) {
    switch (op) {
      case ProbeOp::Conv3x3: t = conv2d(t, weight, bias); break;
      case ProbeOp::MaxPool2x2: t = maxpool2x2(t); break;
      case ProbeOp::Upsample2x2: t = upsample_nearest2x2(t); break;
    }
  }
  const int oh = t.extent(1), ow = t.extent(2);
  backward(pixel(t, {0, oh / 2, ow / 2}));
  const std::vector<double>& g = *input.grad();
  RfBox box;
  box.row0 = h;
  box.col0 = w;
  bool any = false;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (std::abs(g[std::size_t(y) * std::size_t(w) + std::size_t(x)]) > 0.0) {
        any = true;
        box.row0 = std::min(box.row0, y);
        box.row1 = std::max(box.row1, y);
        box.col0 = std::min(box.col0, x);
        box.col1 = std::max(box.col1, x);
      }
  if (!any)
    throw NumericError("receptive_field_probe: no dependence on the input (degenerate network)");
  return box;
}

}  // namespace oucr
