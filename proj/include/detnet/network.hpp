#pragma once

#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "detnet/analysis.hpp"
#include "detnet/arch.hpp"

namespace detnet {

// An instantiated backbone (+ optional classifier head). Parameter layout and
// naming follow the analyzer's layer walk, so checkpoints, analysis rows and
// execution traces line up by construction.
template <typename T>
struct NetworkT {
  ArchSpec spec;
  ConvParamsT<T> conv1;
  BatchNormParamsT<T> bn1;
  std::vector<std::vector<BlockT<T>>> block_stages;  // aligned with spec.stages[1:]
  ValuePtrT<T> fc_weight;  // (classes, c, 1, 1)
  ValuePtrT<T> fc_bias;    // (1, classes, 1, 1)

  int n_classes() const { return spec.head_classes; }

  void set_bn_mode(BnMode mode) {
    bn1.mode = mode;
    for (auto& stage : block_stages) {
      for (auto& b : stage) b.set_bn_mode(mode);
    }
  }

  // (name, node, weight-decay eligible), fixed order.
  std::vector<std::tuple<std::string, ValuePtrT<T>, bool>> named_params() {
    std::vector<std::tuple<std::string, ValuePtrT<T>, bool>> out;
    out.emplace_back("stage1.conv1.weight", conv1.weight, true);
    out.emplace_back("stage1.bn1.gamma", bn1.gamma, false);
    out.emplace_back("stage1.bn1.beta", bn1.beta, false);
    for (size_t si = 0; si < block_stages.size(); ++si) {
      const std::string stage = spec.stages[si + 1].name;
      for (size_t bi = 0; bi < block_stages[si].size(); ++bi) {
        const std::string prefix = stage + ".block" + std::to_string(bi + 1) + ".";
        for (auto& [suffix, param, decay] : block_stages[si][bi].named_params()) {
          out.emplace_back(prefix + suffix, param, decay);
        }
      }
    }
    if (fc_weight) {
      out.emplace_back("head.fc.weight", fc_weight, true);
      out.emplace_back("head.fc.bias", fc_bias, false);
    }
    return out;
  }

  std::vector<std::pair<std::string, std::vector<T>*>> named_buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    out.emplace_back("stage1.bn1.running_mean", &bn1.running_mean);
    out.emplace_back("stage1.bn1.running_var", &bn1.running_var);
    for (size_t si = 0; si < block_stages.size(); ++si) {
      const std::string stage = spec.stages[si + 1].name;
      for (size_t bi = 0; bi < block_stages[si].size(); ++bi) {
        const std::string prefix = stage + ".block" + std::to_string(bi + 1) + ".";
        for (auto& [suffix, buf] : block_stages[si][bi].named_buffers()) {
          out.emplace_back(prefix + suffix, buf);
        }
      }
    }
    return out;
  }

  void zero_grad() {
    for (auto& [name, param, decay] : named_params()) param->t.zero_grad();
  }

  std::int64_t param_count() {
    std::int64_t total = 0;
    for (auto& [name, param, decay] : named_params()) total += param->t.numel();
    return total;
  }
};

using Network = NetworkT<float>;

namespace network_detail {

template <typename T>
void check_min_input(const NetworkT<T>& net, const Shape4& shape) {
  if (shape.c != 3) {
    throw Error("forward: expected 3 input channels, got " + std::to_string(shape.c));
  }
  // Shape inference performs the full stride-chain feasibility check.
  shape_inference(net.spec, shape.h, shape.w);
}

}  // namespace network_detail

// He-normal conv weights from the given seed, BN at gamma=1/beta=0 with
// identity running statistics, zero linear bias. Deterministic per seed.
template <typename T>
NetworkT<T> build_network_t(const ArchSpec& spec, int n_classes, std::uint64_t seed) {
  validate_arch(spec);
  if (spec.has_head && n_classes <= 0) {
    throw Error("build_network: n_classes must be positive for headed specs");
  }
  Rng rng(seed);
  NetworkT<T> net;
  net.spec = spec;
  net.spec.head_classes = spec.has_head ? n_classes : 0;

  const StageSpec& stem = spec.stages.at(0);
  net.conv1.weight = ValueT<T>::leaf(he_normal_conv<T>(rng, {stem.stem_channels, 3, 7, 7}), true);
  net.conv1.stride = 2;
  net.conv1.padding = 3;
  net.bn1 = make_batch_norm<T>(stem.stem_channels);

  for (size_t si = 1; si < spec.stages.size(); ++si) {
    std::vector<BlockT<T>> blocks;
    for (const BlockSpec& b : spec.stages[si].blocks) {
      blocks.push_back(make_block_t<T>(b, rng, spec.stride_on_3x3));
    }
    net.block_stages.push_back(std::move(blocks));
  }

  if (spec.has_head) {
    const int d = spec.stages.back().blocks.back().c_out;
    net.fc_weight = ValueT<T>::leaf(he_normal_conv<T>(rng, {n_classes, d, 1, 1}), true);
    net.fc_bias = ValueT<T>::leaf(Tensor4T<T>::zeros({1, n_classes, 1, 1}), true);
  }
  return net;
}

inline Network build_network(const ArchSpec& spec, int n_classes, std::uint64_t seed) {
  return build_network_t<float>(spec, n_classes, seed);
}

// Runs the backbone, returning one tap per block stage (stage2..last).
template <typename T>
std::vector<std::pair<std::string, ValuePtrT<T>>> backbone_features(
    NetworkT<T>& net, const ValuePtrT<T>& input, ForwardTrace* trace = nullptr) {
  network_detail::check_min_input(net, input->t.shape);
  auto x = relu(batch_norm(conv2d(input, net.conv1, trace, "conv1"), net.bn1));
  x = max_pool(x, 3, 2, 1);
  std::vector<std::pair<std::string, ValuePtrT<T>>> taps;
  for (size_t si = 0; si < net.block_stages.size(); ++si) {
    const std::string stage = net.spec.stages[si + 1].name;
    for (size_t bi = 0; bi < net.block_stages[si].size(); ++bi) {
      x = net.block_stages[si][bi].forward(x, trace,
                                           stage + ".block" + std::to_string(bi + 1));
    }
    taps.emplace_back(stage, x);
  }
  return taps;
}

template <typename T>
std::vector<std::pair<std::string, ValuePtrT<T>>> backbone_features(
    NetworkT<T>& net, const Tensor4T<T>& batch, ForwardTrace* trace = nullptr) {
  return backbone_features(net, ValueT<T>::leaf(batch), trace);
}

template <typename T>
ValuePtrT<T> forward_classifier(NetworkT<T>& net, const ValuePtrT<T>& input,
                                ForwardTrace* trace = nullptr) {
  if (!net.fc_weight) {
    throw Error("forward_classifier: spec " + net.spec.name + " has no classification head");
  }
  auto taps = backbone_features(net, input, trace);
  auto pooled = global_avg_pool(taps.back().second);
  return linear(pooled, net.fc_weight, net.fc_bias, trace, "fc");
}

template <typename T>
ValuePtrT<T> forward_classifier(NetworkT<T>& net, const Tensor4T<T>& batch,
                                ForwardTrace* trace = nullptr) {
  return forward_classifier(net, ValueT<T>::leaf(batch), trace);
}

}  // namespace detnet
