#pragma once

#include <string>
#include <utility>
#include <vector>

#include "detnet/graph.hpp"
#include "detnet/rng.hpp"

// The three bottleneck variants:
//   A - dilated bottleneck with identity shortcut (the plain ResNet identity
//       block when dilation is 1),
//   B - dilated bottleneck with a 1x1 convolution projection shortcut,
//   C - the original ResNet bottleneck (projection shortcut, no dilation).

namespace detnet {

enum class BlockKind { A, B, C };

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::A: return "A";
    case BlockKind::B: return "B";
    case BlockKind::C: return "C";
  }
  return "?";
}

struct BlockSpec {
  BlockKind kind = BlockKind::A;
  int c_in = 0;
  int c_mid = 0;
  int c_out = 0;
  int stride = 1;
  int dilation = 1;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;

  bool has_projection() const { return kind != BlockKind::A; }
};

inline void validate_block(const BlockSpec& s) {
  if (s.c_in <= 0 || s.c_mid <= 0 || s.c_out <= 0) {
    throw Error("block: channel counts must be positive");
  }
  if (s.stride != 1 && s.stride != 2) {
    throw Error("block: stride must be 1 or 2, got " + std::to_string(s.stride));
  }
  if (s.dilation < 1) {
    throw Error("block: dilation must be at least 1, got " + std::to_string(s.dilation));
  }
  if (s.kind == BlockKind::A && s.c_in != s.c_out) {
    throw Error("block: kind A requires c_in == c_out for the identity shortcut, got " +
                std::to_string(s.c_in) + " vs " + std::to_string(s.c_out));
  }
  if (s.kind == BlockKind::A && s.stride != 1) {
    throw Error("block: kind A requires stride 1, got " + std::to_string(s.stride));
  }
  if (s.kind == BlockKind::C && s.dilation != 1) {
    throw Error("block: kind C is the original bottleneck and requires dilation 1, got " +
                std::to_string(s.dilation));
  }
}

template <typename T>
Tensor4T<T> he_normal_conv(Rng& rng, Shape4 shape) {
  Tensor4T<T> w(shape);
  const double fan_in = static_cast<double>(shape.c) * shape.h * shape.w;
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : w.data) v = static_cast<T>(rng.normal(0.0, stddev));
  return w;
}

template <typename T>
BatchNormParamsT<T> make_batch_norm(int channels) {
  BatchNormParamsT<T> bn;
  bn.gamma = ValueT<T>::leaf(Tensor4T<T>::full(Shape4{1, channels, 1, 1}, T(1)), true);
  bn.beta = ValueT<T>::leaf(Tensor4T<T>::zeros(Shape4{1, channels, 1, 1}), true);
  bn.running_mean.assign(static_cast<size_t>(channels), T(0));
  bn.running_var.assign(static_cast<size_t>(channels), T(1));
  return bn;
}

// Bottleneck block with owned parameters. Main path:
//   1x1 (c_in -> c_mid) / BN / ReLU
//   3x3 (c_mid -> c_mid, dilated, pad = dilation) / BN / ReLU
//   1x1 (c_mid -> c_out) / BN
// Shortcut: identity (A) or 1x1 projection + BN (B, C). Output is
// ReLU(main + shortcut). The block's stride sits on the first 1x1 conv and
// the projection by default; stride_on_3x3 moves it to the middle conv.
template <typename T>
struct BlockT {
  BlockSpec spec;
  ConvParamsT<T> conv1, conv2, conv3;
  BatchNormParamsT<T> bn1, bn2, bn3;
  ConvParamsT<T> proj_conv;       // engaged when spec.has_projection()
  BatchNormParamsT<T> proj_bn;

  ValuePtrT<T> forward(const ValuePtrT<T>& x, ForwardTrace* trace = nullptr,
                       const std::string& name = {}) {
    if (x->t.shape.c != spec.c_in) {
      throw Error("block" + (name.empty() ? std::string() : " " + name) +
                  ": input channels (" + std::to_string(x->t.shape.c) +
                  ") do not match spec c_in (" + std::to_string(spec.c_in) + ")");
    }
    auto main = relu(batch_norm(conv2d(x, conv1, trace, name + ".conv1"), bn1));
    main = relu(batch_norm(conv2d(main, conv2, trace, name + ".conv2"), bn2));
    main = batch_norm(conv2d(main, conv3, trace, name + ".conv3"), bn3);
    ValuePtrT<T> shortcut = x;
    if (spec.has_projection()) {
      shortcut = batch_norm(conv2d(x, proj_conv, trace, name + ".proj.conv"), proj_bn);
    }
    return relu(add(main, shortcut));
  }

  void set_bn_mode(BnMode mode) {
    bn1.mode = bn2.mode = bn3.mode = mode;
    if (spec.has_projection()) proj_bn.mode = mode;
  }

  // (name suffix, tensor node, apply weight decay) for every trainable
  // parameter, in a fixed order.
  std::vector<std::tuple<std::string, ValuePtrT<T>, bool>> named_params() {
    std::vector<std::tuple<std::string, ValuePtrT<T>, bool>> out;
    auto bn_params = [&](const std::string& prefix, BatchNormParamsT<T>& bn) {
      out.emplace_back(prefix + ".gamma", bn.gamma, false);
      out.emplace_back(prefix + ".beta", bn.beta, false);
    };
    out.emplace_back("conv1.weight", conv1.weight, true);
    bn_params("bn1", bn1);
    out.emplace_back("conv2.weight", conv2.weight, true);
    bn_params("bn2", bn2);
    out.emplace_back("conv3.weight", conv3.weight, true);
    bn_params("bn3", bn3);
    if (spec.has_projection()) {
      out.emplace_back("proj.conv.weight", proj_conv.weight, true);
      bn_params("proj.bn", proj_bn);
    }
    return out;
  }

  std::vector<std::pair<std::string, std::vector<T>*>> named_buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    auto bn_buffers = [&](const std::string& prefix, BatchNormParamsT<T>& bn) {
      out.emplace_back(prefix + ".running_mean", &bn.running_mean);
      out.emplace_back(prefix + ".running_var", &bn.running_var);
    };
    bn_buffers("bn1", bn1);
    bn_buffers("bn2", bn2);
    bn_buffers("bn3", bn3);
    if (spec.has_projection()) bn_buffers("proj.bn", proj_bn);
    return out;
  }
};

using Block = BlockT<float>;

template <typename T>
BlockT<T> make_block_t(const BlockSpec& spec, Rng& rng, bool stride_on_3x3 = false) {
  validate_block(spec);
  BlockT<T> b;
  b.spec = spec;
  const int s1 = stride_on_3x3 ? 1 : spec.stride;
  const int s2 = stride_on_3x3 ? spec.stride : 1;

  b.conv1.weight = ValueT<T>::leaf(he_normal_conv<T>(rng, {spec.c_mid, spec.c_in, 1, 1}), true);
  b.conv1.stride = s1;
  b.bn1 = make_batch_norm<T>(spec.c_mid);

  b.conv2.weight = ValueT<T>::leaf(he_normal_conv<T>(rng, {spec.c_mid, spec.c_mid, 3, 3}), true);
  b.conv2.stride = s2;
  b.conv2.padding = spec.dilation;  // keeps 3x3 output shape-preserving at stride 1
  b.conv2.dilation = spec.dilation;
  b.bn2 = make_batch_norm<T>(spec.c_mid);

  b.conv3.weight = ValueT<T>::leaf(he_normal_conv<T>(rng, {spec.c_out, spec.c_mid, 1, 1}), true);
  b.bn3 = make_batch_norm<T>(spec.c_out);

  if (spec.has_projection()) {
    b.proj_conv.weight =
        ValueT<T>::leaf(he_normal_conv<T>(rng, {spec.c_out, spec.c_in, 1, 1}), true);
    b.proj_conv.stride = spec.stride;
    b.proj_bn = make_batch_norm<T>(spec.c_out);
  }
  return b;
}

inline Block make_block(const BlockSpec& spec, std::uint64_t seed = 0,
                        bool stride_on_3x3 = false) {
  Rng rng(seed);
  return make_block_t<float>(spec, rng, stride_on_3x3);
}

template <typename T>
ValuePtrT<T> block_forward(BlockT<T>& block, const ValuePtrT<T>& x) {
  return block.forward(x);
}

}  // namespace detnet
