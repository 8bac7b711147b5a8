#include "detnet/fpn.hpp"

namespace detnet {

std::vector<std::tuple<std::string, ValuePtr, bool>> FpnNetwork::named_params() {
  std::vector<std::tuple<std::string, ValuePtr, bool>> out = backbone.named_params();
  for (size_t i = 0; i < laterals.size(); ++i) {
    const std::string name = "fpn.lateral" + std::to_string(i + 2);
    out.emplace_back(name + ".weight", laterals[i].weight, true);
    out.emplace_back(name + ".bias", laterals[i].bias, false);
  }
  for (size_t i = 0; i < output_convs.size(); ++i) {
    const std::string name = "fpn.output" + std::to_string(i + 2);
    out.emplace_back(name + ".weight", output_convs[i].weight, true);
    out.emplace_back(name + ".bias", output_convs[i].bias, false);
  }
  return out;
}

FpnNetwork build_fpn(const ArchSpec& backbone, int fpn_channels, std::uint64_t seed) {
  validate_arch(backbone);
  if (fpn_channels <= 0) throw Error("build_fpn: fpn_channels must be positive");
  size_t block_stage_count = backbone.stages.size() - 1;
  if (block_stage_count < 4) {
    throw Error("build_fpn: backbone must expose at least 4 stages past conv1, got " +
                std::to_string(block_stage_count));
  }

  FpnNetwork fpn;
  fpn.channels = fpn_channels;
  fpn.backbone = build_network(backbone, backbone.has_head ? backbone.head_classes : 1, seed);

  Rng rng(seed + 0x9e3779b97f4a7c15ull);
  std::vector<int> strides = stride_map(backbone);
  for (size_t si = 1; si < backbone.stages.size(); ++si) {
    const StageSpec& st = backbone.stages[si];
    ConvParams lateral;
    lateral.weight =
        Value::leaf(he_normal_conv<float>(rng, {fpn_channels, st.blocks.back().c_out, 1, 1}), true);
    lateral.bias = Value::leaf(Tensor4::zeros({1, fpn_channels, 1, 1}), true);
    fpn.laterals.push_back(std::move(lateral));

    ConvParams out_conv;
    out_conv.weight =
        Value::leaf(he_normal_conv<float>(rng, {fpn_channels, fpn_channels, 3, 3}), true);
    out_conv.bias = Value::leaf(Tensor4::zeros({1, fpn_channels, 1, 1}), true);
    out_conv.padding = 1;
    fpn.output_convs.push_back(std::move(out_conv));

    fpn.level_names.push_back("P" + std::to_string(si + 1));
    fpn.level_strides.push_back(strides[si]);
  }

  if (block_stage_count == 4) {
    fpn.pooled_extra_level = true;
    fpn.level_names.push_back("P6");
    fpn.level_strides.push_back(fpn.level_strides.back() * 2);
  }
  return fpn;
}

PyramidFeatures fpn_forward(FpnNetwork& fpn, const ValuePtr& batch) {
  // Alignment concerns the backbone taps only; the pooled extra level works
  // at any size its source has.
  const int deepest = fpn.level_strides[fpn.laterals.size() - 1];
  const Shape4& in = batch->t.shape;
  if (in.h % deepest != 0 || in.w % deepest != 0) {
    throw Error("fpn_forward: input " + in.str() + " is not divisible by the deepest stride " +
                std::to_string(deepest));
  }

  auto taps = backbone_features(fpn.backbone, batch);
  const size_t n = taps.size();

  std::vector<ValuePtr> lateral_out(n);
  for (size_t i = 0; i < n; ++i) {
    lateral_out[i] = conv2d(taps[i].second, fpn.laterals[i]);
  }

  // Top-down: upsample only across an actual stride drop; equal-stride
  // neighbours (DetNet stages 5/6) are summed directly.
  std::vector<ValuePtr> merged(n);
  merged[n - 1] = lateral_out[n - 1];
  for (size_t i = n - 1; i-- > 0;) {
    const int ratio = fpn.level_strides[i + 1] / fpn.level_strides[i];
    ValuePtr down = merged[i + 1];
    if (ratio == 2) {
      down = upsample_nearest2x(down);
    } else if (ratio != 1) {
      throw Error("fpn_forward: unsupported stride ratio " + std::to_string(ratio) +
                  " between pyramid levels");
    }
    merged[i] = add(lateral_out[i], down);
  }

  PyramidFeatures features;
  for (size_t i = 0; i < n; ++i) {
    features.emplace_back(fpn.level_names[i], conv2d(merged[i], fpn.output_convs[i]));
  }
  if (fpn.pooled_extra_level) {
    features.emplace_back(fpn.level_names.back(), max_pool(features.back().second, 1, 2, 0));
  }
  return features;
}

PyramidFeatures fpn_forward(FpnNetwork& fpn, const Tensor4& batch) {
  return fpn_forward(fpn, Value::leaf(batch));
}

}  // namespace detnet
