#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "oucr/common.hpp"

namespace oucr {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  return os.str();
}

inline bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

template <class S>
struct Node;

template <class S>
using NodePtr = std::shared_ptr<Node<S>>;

/// One record of the differentiation graph. The graph is distributed: nodes
/// link to their inputs, and a global counter provides the topological order
/// that backward() walks in reverse. Interior nodes may feed exactly one
/// backward pass; leaves accumulate across passes (that is how per-sample
/// gradients add up within a batch).
template <class S>
struct Node {
  const char* op = "leaf";
  std::uint64_t seq = 0;
  bool is_leaf = false;
  bool consumed = false;
  Shape shape;
  // Aligned with the forward inputs; null for inputs that carry no graph.
  std::vector<NodePtr<S>> parents;
  // Adds this node's contribution to each parent gradient slot. Slot pointers
  // are null where the corresponding parent is absent.
  std::function<void(const std::vector<S>&, const std::vector<std::vector<S>*>&)> backprop;
  std::shared_ptr<std::vector<S>> leaf_grad;
};

inline std::uint64_t next_node_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

/// Dense tensor handle. Copies are shallow (shared storage); ops never mutate
/// their inputs. Tensors that took part in building a graph must not be
/// written through data() before backward() runs, since backward closures
/// reference the same buffers.
template <class S>
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<Impl>()) {}

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    check_shape(t.impl_->shape);
    t.impl_->data = std::make_shared<std::vector<S>>(std::size_t(shape_numel(t.impl_->shape)), S(0));
    return t;
  }

  static Tensor full(Shape shape, S value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<S> values) {
    check_shape(shape);
    if (shape_numel(shape) != std::int64_t(values.size()))
      throw ShapeError("tensor: shape " + shape_str(shape) + " expects " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::make_shared<std::vector<S>>(std::move(values));
    return t;
  }

  /// Marks this tensor as a trainable leaf: allocates the gradient buffer and
  /// attaches a leaf node so backward() can reach it.
  Tensor& set_requires_grad(bool on = true) {
    if (!on) {
      if (impl_->requires_grad) {
        impl_->requires_grad = false;
        impl_->grad.reset();
        impl_->node.reset();
      }
      return *this;
    }
    if (impl_->node && !impl_->node->is_leaf)
      throw ValueError("set_requires_grad: tensor is already an interior graph result");
    if (!impl_->requires_grad) {
      impl_->requires_grad = true;
      impl_->grad = std::make_shared<std::vector<S>>(std::size_t(numel()), S(0));
      auto n = std::make_shared<Node<S>>();
      n->op = "leaf";
      n->seq = next_node_seq();
      n->is_leaf = true;
      n->shape = impl_->shape;
      n->leaf_grad = impl_->grad;
      impl_->node = std::move(n);
    }
    return *this;
  }

  const Shape& shape() const { return impl_->shape; }
  int rank() const { return int(impl_->shape.size()); }
  int extent(int i) const { return impl_->shape[std::size_t(i)]; }
  std::int64_t numel() const { return shape_numel(impl_->shape); }

  std::vector<S>& data() { return *impl_->data; }
  const std::vector<S>& data() const { return *impl_->data; }

  S item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return (*impl_->data)[0];
  }

  /// Row-major element access; index length must equal the rank.
  S& at(std::initializer_list<int> idx) { return (*impl_->data)[std::size_t(offset(idx))]; }
  S at(std::initializer_list<int> idx) const { return (*impl_->data)[std::size_t(offset(idx))]; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_node() const { return impl_->node != nullptr; }
  NodePtr<S> node() const { return impl_->node; }

  /// Gradient buffer, or null when absent (no requires_grad).
  const std::vector<S>* grad() const { return impl_->grad ? impl_->grad.get() : nullptr; }
  std::vector<S>* mutable_grad() { return impl_->grad ? impl_->grad.get() : nullptr; }

  void zero_grad() {
    if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), S(0));
  }

  /// Same storage, no graph participation.
  Tensor detach() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  /// Deep copy of the data; fresh leaf without grad.
  Tensor clone() const { return from_data(impl_->shape, *impl_->data); }

  // Used by op constructors.
  static Tensor make_interior(Shape shape, std::vector<S> values, NodePtr<S> node) {
    Tensor t = from_data(std::move(shape), std::move(values));
    t.impl_->node = std::move(node);
    return t;
  }

 private:
  struct Impl {
    Shape shape;
    std::shared_ptr<std::vector<S>> data = std::make_shared<std::vector<S>>();
    bool requires_grad = false;
    std::shared_ptr<std::vector<S>> grad;
    NodePtr<S> node;
  };

  static void check_shape(const Shape& s) {
    if (s.size() > 4) throw ShapeError("tensor rank must be <= 4, got " + shape_str(s));
    for (int e : s)
      if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(s));
  }

  std::int64_t offset(std::initializer_list<int> idx) const {
    if (idx.size() != impl_->shape.size())
      throw ShapeError("index rank mismatch for shape " + shape_str(impl_->shape));
    std::int64_t off = 0;
    std::size_t d = 0;
    for (int i : idx) {
      off = off * impl_->shape[d] + i;
      ++d;
    }
    return off;
  }

  std::shared_ptr<Impl> impl_;
};

using BackpropSlots = void;  // documentation aid only

namespace detail {

/// Wires an op result into the graph. Inputs without nodes contribute null
/// parent entries; if no input carries a node the result is a plain constant.
template <class S, class Fn>
Tensor<S> make_result(const char* op, Shape shape, std::vector<S> values,
                      std::initializer_list<Tensor<S>> inputs, Fn&& backprop) {
  bool any = false;
  for (const auto& t : inputs) any = any || t.has_node();
  if (!any) return Tensor<S>::from_data(std::move(shape), std::move(values));
  auto node = std::make_shared<Node<S>>();
  node->op = op;
  node->seq = next_node_seq();
  node->shape = shape;
  node->parents.reserve(inputs.size());
  for (const auto& t : inputs) node->parents.push_back(t.node());
  node->backprop = std::forward<Fn>(backprop);
  return Tensor<S>::make_interior(std::move(shape), std::move(values), std::move(node));
}

struct Bchw {
  std::int64_t b, c, h, w;
  bool batched;
};

inline Bchw as_bchw(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw ShapeError(std::string(op) + ": expected [C,H,W] or [B,C,H,W], got " + shape_str(s));
}

}  // namespace detail

/// Reverse-topological gradient accumulation from a scalar loss. Each interior
/// node may be consumed once; rebuilding the forward pass resets the graph.
/// Leaf gradients accumulate (+=) so per-sample losses within a batch add up.
template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  NodePtr<S> root = loss.node();
  if (!root) throw ValueError("backward: loss is detached from any differentiation graph");

  std::vector<Node<S>*> order;
  {
    std::unordered_set<Node<S>*> seen;
    std::vector<Node<S>*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
      Node<S>* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const auto& p : n->parents)
        if (p && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node<S>* a, const Node<S>* b) { return a->seq > b->seq; });
  for (Node<S>* n : order)
    if (!n->is_leaf && n->consumed)
      throw ValueError("backward: graph already consumed by a previous backward(); "
                       "rebuild the forward pass before differentiating again");

  std::unordered_map<Node<S>*, std::vector<S>> grads;
  grads.emplace(root.get(), std::vector<S>{S(1)});
  for (Node<S>* n : order) {
    auto it = grads.find(n);
    if (it == grads.end()) continue;
    if (n->is_leaf) {
      auto& sink = *n->leaf_grad;
      const auto& g = it->second;
      for (std::size_t i = 0; i < sink.size(); ++i) sink[i] += g[i];
    } else {
      std::vector<std::vector<S>*> slots(n->parents.size(), nullptr);
      for (std::size_t i = 0; i < n->parents.size(); ++i) {
        const auto& p = n->parents[i];
        if (!p) continue;
        auto [pit, inserted] = grads.try_emplace(p.get());
        if (inserted) pit->second.assign(std::size_t(shape_numel(p->shape)), S(0));
        slots[i] = &pit->second;
      }
      n->backprop(it->second, slots);
      n->consumed = true;
    }
    grads.erase(it);
  }
}

// ---------------------------------------------------------------------------
// Primitive kernels. Reduction order inside every kernel is fixed, so results
// are bit-identical across runs and thread counts.
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void conv3x3_forward_image(const S* in, const S* w, const S* bias, S* out, int cin, int cout,
                           int h, int ww) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (int co = 0; co < cout; ++co) {
    S* op = out + std::int64_t(co) * h * ww;
    std::fill(op, op + std::int64_t(h) * ww, bias[co]);
    for (int ci = 0; ci < cin; ++ci) {
      const S* ip = in + std::int64_t(ci) * h * ww;
      const S* wp = w + (std::int64_t(co) * cin + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const S wv = wp[ky * 3 + kx];
          const int dy = ky - 1, dx = kx - 1;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(ww, ww - dx);
          for (int y = y0; y < y1; ++y) {
            S* orow = op + std::int64_t(y) * ww;
            const S* irow = ip + std::int64_t(y + dy) * ww + dx;
            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
          }
        }
      }
    }
  }
}

template <class S>
void conv3x3_backward_input(const S* gout, const S* w, S* gin, int cin, int cout, int h, int ww) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (int ci = 0; ci < cin; ++ci) {
    S* gp = gin + std::int64_t(ci) * h * ww;
    for (int co = 0; co < cout; ++co) {
      const S* op = gout + std::int64_t(co) * h * ww;
      const S* wp = w + (std::int64_t(co) * cin + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const S wv = wp[ky * 3 + kx];
          const int dy = ky - 1, dx = kx - 1;
          // out[y][x] consumed in[y+dy][x+dx]; scatter transposed.
          const int p0 = std::max(0, dy), p1 = std::min(h, h + dy);
          const int q0 = std::max(0, dx), q1 = std::min(ww, ww + dx);
          for (int p = p0; p < p1; ++p) {
            S* grow = gp + std::int64_t(p) * ww;
            const S* orow = op + std::int64_t(p - dy) * ww - dx;
            for (int q = q0; q < q1; ++q) grow[q] += wv * orow[q];
          }
        }
      }
    }
  }
}

template <class S>
void conv3x3_backward_weight(const S* gout, const S* in, S* gw, S* gb, int cin, int cout, int h,
                             int ww) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (int co = 0; co < cout; ++co) {
    const S* op = gout + std::int64_t(co) * h * ww;
    S acc = S(0);
    for (std::int64_t i = 0; i < std::int64_t(h) * ww; ++i) acc += op[i];
    gb[co] += acc;
    for (int ci = 0; ci < cin; ++ci) {
      const S* ip = in + std::int64_t(ci) * h * ww;
      S* wp = gw + (std::int64_t(co) * cin + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const int dy = ky - 1, dx = kx - 1;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(ww, ww - dx);
          S s = S(0);
          for (int y = y0; y < y1; ++y) {
            const S* orow = op + std::int64_t(y) * ww;
            const S* irow = ip + std::int64_t(y + dy) * ww + dx;
            for (int x = x0; x < x1; ++x) s += orow[x] * irow[x];
          }
          wp[ky * 3 + kx] += s;
        }
      }
    }
  }
}

}  // namespace detail

/// 3x3, stride-1, zero-padding-1 convolution — the only geometry the
/// architecture uses. Accepts [C,H,W] or [B,C,H,W].
template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
  const auto g = detail::as_bchw(input.shape(), "conv2d");
  if (weight.rank() != 4 || weight.extent(2) != 3 || weight.extent(3) != 3)
    throw ShapeError("conv2d: weight must be [C_out,C_in,3,3], got " + shape_str(weight.shape()));
  const int cout = weight.extent(0), cin = weight.extent(1);
  if (cin != g.c)
    throw ShapeError("conv2d: input channels (" + std::to_string(g.c) + ") != weight C_in (" +
                     std::to_string(cin) + ") [input " + shape_str(input.shape()) + ", weight " +
                     shape_str(weight.shape()) + "]");
  if (bias.rank() != 1 || bias.extent(0) != cout)
    throw ShapeError("conv2d: bias must be [C_out=" + std::to_string(cout) + "], got " +
                     shape_str(bias.shape()));

  Shape oshape = input.shape();
  oshape[oshape.size() - 3] = cout;
  std::vector<S> out(static_cast<std::size_t>(shape_numel(oshape)));
  const std::int64_t in_img = g.c * g.h * g.w, out_img = std::int64_t(cout) * g.h * g.w;
  for (std::int64_t b = 0; b < g.b; ++b)
    detail::conv3x3_forward_image(input.data().data() + b * in_img, weight.data().data(),
                                  bias.data().data(), out.data() + b * out_img, int(g.c), cout,
                                  int(g.h), int(g.w));

  auto in_buf = std::make_shared<std::vector<S>>(input.data());
  auto w_buf = std::make_shared<std::vector<S>>(weight.data());
  const int cin_c = int(g.c), h = int(g.h), w = int(g.w);
  const std::int64_t nb = g.b;
  return detail::make_result(
      "conv2d", std::move(oshape), std::move(out), {input, weight, bias},
      [=](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        for (std::int64_t b = 0; b < nb; ++b) {
          const S* go = gout.data() + b * out_img;
          if (slots[0])
            detail::conv3x3_backward_input(go, w_buf->data(), slots[0]->data() + b * in_img, cin_c,
                                           cout, h, w);
          if (slots[1] || slots[2]) {
            std::vector<S> gw_scratch, gb_scratch;
            if (!slots[1]) gw_scratch.assign(std::size_t(cout) * cin_c * 9, S(0));
            if (!slots[2]) gb_scratch.assign(std::size_t(cout), S(0));
            S* gw = slots[1] ? slots[1]->data() : gw_scratch.data();
            S* gb = slots[2] ? slots[2]->data() : gb_scratch.data();
            detail::conv3x3_backward_weight(go, in_buf->data() + b * in_img, gw, gb, cin_c, cout,
                                            h, w);
          }
        }
      });
}

/// 2x2 max pooling, stride 2. Gradient routes to the first maximal element of
/// each window in row-major order.
template <class S>
Tensor<S> maxpool2x2(const Tensor<S>& input) {
  const auto g = detail::as_bchw(input.shape(), "maxpool2x2");
  if (g.h % 2 != 0 || g.w % 2 != 0)
    throw ShapeError("maxpool2x2: spatial dims must be even, got " + shape_str(input.shape()));
  const std::int64_t oh = g.h / 2, ow = g.w / 2;
  Shape oshape = input.shape();
  oshape[oshape.size() - 2] = int(oh);
  oshape[oshape.size() - 1] = int(ow);
  std::vector<S> out(static_cast<std::size_t>(shape_numel(oshape)));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());

  const std::int64_t planes = g.b * g.c;
  for (std::int64_t p = 0; p < planes; ++p) {
    const S* ip = input.data().data() + p * g.h * g.w;
    S* op = out.data() + p * oh * ow;
    std::int64_t* ap = argmax->data() + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        const std::int64_t base = (2 * y) * g.w + 2 * x;
        std::int64_t best = base;
        S bv = ip[base];
        const std::int64_t cand[3] = {base + 1, base + g.w, base + g.w + 1};
        for (std::int64_t c : cand)
          if (ip[c] > bv) {
            bv = ip[c];
            best = c;
          }
        op[y * ow + x] = bv;
        ap[y * ow + x] = p * g.h * g.w + best;
      }
    }
  }
  return detail::make_result(
      "maxpool2x2", std::move(oshape), std::move(out), {input},
      [argmax](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        if (!slots[0]) return;
        auto& gin = *slots[0];
        for (std::size_t i = 0; i < gout.size(); ++i) gin[std::size_t((*argmax)[i])] += gout[i];
      });
}

/// Nearest-neighbour 2x upsampling; backward sums the four replicas.
template <class S>
Tensor<S> upsample_nearest2x2(const Tensor<S>& input) {
  const auto g = detail::as_bchw(input.shape(), "upsample_nearest2x2");
  const std::int64_t oh = g.h * 2, ow = g.w * 2;
  Shape oshape = input.shape();
  oshape[oshape.size() - 2] = int(oh);
  oshape[oshape.size() - 1] = int(ow);
  std::vector<S> out(static_cast<std::size_t>(shape_numel(oshape)));
  const std::int64_t planes = g.b * g.c;
  for (std::int64_t p = 0; p < planes; ++p) {
    const S* ip = input.data().data() + p * g.h * g.w;
    S* op = out.data() + p * oh * ow;
    for (std::int64_t y = 0; y < g.h; ++y)
      for (std::int64_t x = 0; x < g.w; ++x) {
        const S v = ip[y * g.w + x];
        S* o = op + (2 * y) * ow + 2 * x;
        o[0] = v;
        o[1] = v;
        o[ow] = v;
        o[ow + 1] = v;
      }
  }
  const std::int64_t ih = g.h, iw = g.w;
  return detail::make_result(
      "upsample_nearest2x2", std::move(oshape), std::move(out), {input},
      [planes, ih, iw, oh, ow](const std::vector<S>& gout,
                               const std::vector<std::vector<S>*>& slots) {
        if (!slots[0]) return;
        auto& gin = *slots[0];
        for (std::int64_t p = 0; p < planes; ++p) {
          const S* gp = gout.data() + p * oh * ow;
          S* ip = gin.data() + p * ih * iw;
          for (std::int64_t y = 0; y < ih; ++y)
            for (std::int64_t x = 0; x < iw; ++x) {
              const S* o = gp + (2 * y) * ow + 2 * x;
              ip[y * iw + x] += o[0] + o[1] + o[ow] + o[ow + 1];
            }
        }
      });
}

template <class S>
Tensor<S> relu(const Tensor<S>& input) {
  std::vector<S> out(input.data());
  for (auto& v : out) v = v > S(0) ? v : S(0);
  auto in_buf = std::make_shared<std::vector<S>>(input.data());
  return detail::make_result(
      "relu", input.shape(), std::move(out), {input},
      [in_buf](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        if (!slots[0]) return;
        auto& gin = *slots[0];
        const auto& in = *in_buf;
        for (std::size_t i = 0; i < gout.size(); ++i)
          if (in[i] > S(0)) gin[i] += gout[i];
      });
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (!shape_eq(a.shape(), b.shape()))
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<S> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return detail::make_result(
      "add", a.shape(), std::move(out), {a, b},
      [](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        for (int k = 0; k < 2; ++k)
          if (slots[k]) {
            auto& g = *slots[k];
            for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i];
          }
      });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (!shape_eq(a.shape(), b.shape()))
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<S> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  auto a_buf = std::make_shared<std::vector<S>>(a.data());
  auto b_buf = std::make_shared<std::vector<S>>(b.data());
  return detail::make_result(
      "mul", a.shape(), std::move(out), {a, b},
      [a_buf, b_buf](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        if (slots[0]) {
          auto& g = *slots[0];
          for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] * (*b_buf)[i];
        }
        if (slots[1]) {
          auto& g = *slots[1];
          for (std::size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] * (*a_buf)[i];
        }
      });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.data());
  for (auto& v : out) v *= c;
  return detail::make_result(
      "scale", a.shape(), std::move(out), {a},
      [c](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        if (!slots[0]) return;
        auto& g = *slots[0];
        for (std::size_t i = 0; i < gout.size(); ++i) g[i] += c * gout[i];
      });
}

/// Stacks b's channels after a's. Non-channel dims must agree.
template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  const auto ga = detail::as_bchw(a.shape(), "concat_channels");
  const auto gb = detail::as_bchw(b.shape(), "concat_channels");
  if (ga.batched != gb.batched || ga.b != gb.b || ga.h != gb.h || ga.w != gb.w)
    throw ShapeError("concat_channels: non-channel dims differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  Shape oshape = a.shape();
  oshape[oshape.size() - 3] = int(ga.c + gb.c);
  std::vector<S> out(static_cast<std::size_t>(shape_numel(oshape)));
  const std::int64_t plane = ga.h * ga.w;
  const std::int64_t a_img = ga.c * plane, b_img = gb.c * plane, o_img = (ga.c + gb.c) * plane;
  for (std::int64_t bb = 0; bb < ga.b; ++bb) {
    std::copy_n(a.data().data() + bb * a_img, a_img, out.data() + bb * o_img);
    std::copy_n(b.data().data() + bb * b_img, b_img, out.data() + bb * o_img + a_img);
  }
  const std::int64_t nb = ga.b;
  return detail::make_result(
      "concat_channels", std::move(oshape), std::move(out), {a, b},
      [nb, a_img, b_img, o_img](const std::vector<S>& gout,
                                const std::vector<std::vector<S>*>& slots) {
        for (std::int64_t bb = 0; bb < nb; ++bb) {
          if (slots[0]) {
            auto& g = *slots[0];
            const S* src = gout.data() + bb * o_img;
            for (std::int64_t i = 0; i < a_img; ++i) g[std::size_t(bb * a_img + i)] += src[i];
          }
          if (slots[1]) {
            auto& g = *slots[1];
            const S* src = gout.data() + bb * o_img + a_img;
            for (std::int64_t i = 0; i < b_img; ++i) g[std::size_t(bb * b_img + i)] += src[i];
          }
        }
      });
}

/// Multiplies every channel plane by a constant H*W mask. The mask is data,
/// not a differentiable input.
template <class S>
Tensor<S> mul_mask_hw(const Tensor<S>& t, std::shared_ptr<const std::vector<S>> mask) {
  const auto g = detail::as_bchw(t.shape(), "mul_mask_hw");
  if (std::int64_t(mask->size()) != g.h * g.w)
    throw ShapeError("mul_mask_hw: mask size " + std::to_string(mask->size()) +
                     " != H*W of " + shape_str(t.shape()));
  std::vector<S> out(t.data());
  const std::int64_t plane = g.h * g.w, planes = g.b * g.c;
  for (std::int64_t p = 0; p < planes; ++p) {
    S* op = out.data() + p * plane;
    for (std::int64_t i = 0; i < plane; ++i) op[i] *= (*mask)[std::size_t(i)];
  }
  return detail::make_result(
      "mul_mask_hw", t.shape(), std::move(out), {t},
      [mask, plane, planes](const std::vector<S>& gout,
                            const std::vector<std::vector<S>*>& slots) {
        if (!slots[0]) return;
        auto& g = *slots[0];
        for (std::int64_t p = 0; p < planes; ++p) {
          S* gp = g.data() + p * plane;
          const S* op = gout.data() + p * plane;
          for (std::int64_t i = 0; i < plane; ++i) gp[i] += op[i] * (*mask)[std::size_t(i)];
        }
      });
}

template <class S>
Tensor<S> sum(const Tensor<S>& t) {
  S acc = S(0);
  for (S v : t.data()) acc += v;
  const std::size_t n = t.data().size();
  return detail::make_result(
      "sum", Shape{1}, std::vector<S>{acc}, {t},
      [n](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        if (!slots[0]) return;
        auto& g = *slots[0];
        for (std::size_t i = 0; i < n; ++i) g[i] += gout[0];
      });
}

template <class S>
Tensor<S> weighted_sum(const Tensor<S>& t, std::shared_ptr<const std::vector<S>> w) {
  if (w->size() != t.data().size())
    throw ShapeError("weighted_sum: weight length mismatch");
  S acc = S(0);
  for (std::size_t i = 0; i < w->size(); ++i) acc += (*w)[i] * t.data()[i];
  return detail::make_result(
      "weighted_sum", Shape{1}, std::vector<S>{acc}, {t},
      [w](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        if (!slots[0]) return;
        auto& g = *slots[0];
        for (std::size_t i = 0; i < w->size(); ++i) g[i] += (*w)[i] * gout[0];
      });
}

/// Extracts one element as a scalar tensor (used by the receptive-field probe).
template <class S>
Tensor<S> pixel(const Tensor<S>& t, std::initializer_list<int> idx) {
  std::int64_t off = 0;
  {
    if (idx.size() != t.shape().size()) throw ShapeError("pixel: index rank mismatch");
    std::size_t d = 0;
    for (int i : idx) {
      if (i < 0 || i >= t.extent(int(d))) throw ShapeError("pixel: index out of range");
      off = off * t.extent(int(d)) + i;
      ++d;
    }
  }
  return detail::make_result(
      "pixel", Shape{1}, std::vector<S>{t.data()[std::size_t(off)]}, {t},
      [off](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        if (slots[0]) (*slots[0])[std::size_t(off)] += gout[0];
      });
}

/// Mean absolute difference. The subgradient at zero is taken as zero.
template <class S>
Tensor<S> l1_loss(const Tensor<S>& pred, const Tensor<S>& target) {
  if (!shape_eq(pred.shape(), target.shape()))
    throw ShapeError("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  const auto& p = pred.data();
  const auto& t = target.data();
  S acc = S(0);
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - t[i]);
  const S n = S(double(p.size()));
  auto p_buf = std::make_shared<std::vector<S>>(p);
  auto t_buf = std::make_shared<std::vector<S>>(t);
  return detail::make_result(
      "l1_loss", Shape{1}, std::vector<S>{acc / n}, {pred, target},
      [p_buf, t_buf, n](const std::vector<S>& gout, const std::vector<std::vector<S>*>& slots) {
        const S g0 = gout[0] / n;
        for (std::size_t i = 0; i < p_buf->size(); ++i) {
          const S d = (*p_buf)[i] - (*t_buf)[i];
          const S s = d > S(0) ? g0 : (d < S(0) ? -g0 : S(0));
          if (slots[0]) (*slots[0])[i] += s;
          if (slots[1]) (*slots[1])[i] -= s;
        }
      });
}

/// [2,H,W] complex pair -> [1,H,W] magnitudes. Gradient at zero magnitude is
/// defined as zero.
template <class S>
Tensor<S> complex_magnitude(const Tensor<S>& z) {
  if (z.rank() != 3 || z.extent(0) != 2)
    throw ShapeError("complex_magnitude: expected [2,H,W], got " + shape_str(z.shape()));
  const std::int64_t plane = std::int64_t(z.extent(1)) * z.extent(2);
  std::vector<S> out(static_cast<std::size_t>(plane));
  const S* re = z.data().data();
  const S* im = re + plane;
  for (std::int64_t i = 0; i < plane; ++i)
    out[std::size_t(i)] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
  auto z_buf = std::make_shared<std::vector<S>>(z.data());
  auto m_buf = std::make_shared<std::vector<S>>(out);
  return detail::make_result(
      "complex_magnitude", Shape{1, z.extent(1), z.extent(2)}, std::move(out), {z},
      [z_buf, m_buf, plane](const std::vector<S>& gout,
                            const std::vector<std::vector<S>*>& slots) {
        if (!slots[0]) return;
        auto& g = *slots[0];
        const S* re = z_buf->data();
        const S* im = re + plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const S m = (*m_buf)[std::size_t(i)];
          if (m > S(0)) {
            g[std::size_t(i)] += gout[std::size_t(i)] * re[i] / m;
            g[std::size_t(i + plane)] += gout[std::size_t(i)] * im[i] / m;
          }
        }
      });
}

/// Element-type conversion; produces a detached constant.
template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = To(t.data()[i]);
  return Tensor<To>::from_data(t.shape(), std::move(out));
}

}  // namespace oucr
