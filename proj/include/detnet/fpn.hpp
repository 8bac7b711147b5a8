#pragma once

#include <string>
#include <utility>
#include <vector>

#include "detnet/network.hpp"

namespace detnet {

// Feature pyramid over a backbone: one 1x1 lateral per block stage, a
// top-down pathway that upsamples only across actual resolution drops (equal
// strides are merged by plain summation), and a 3x3 output conv per level.
// Backbones with four block stages get the conventional extra P6 as a
// stride-2 max pool of P5; DetNet-style backbones carry their own P6 stage.
struct FpnNetwork {
  Network backbone;
  int channels = 256;
  std::vector<ConvParams> laterals;      // one per block stage, shallow to deep
  std::vector<ConvParams> output_convs;  // 3x3, pad 1, per merged level
  std::vector<std::string> level_names;  // "P2".."P6"
  std::vector<int> level_strides;
  bool pooled_extra_level = false;

  std::vector<std::tuple<std::string, ValuePtr, bool>> named_params();
};

using PyramidFeatures = std::vector<std::pair<std::string, ValuePtr>>;

FpnNetwork build_fpn(const ArchSpec& backbone, int fpn_channels, std::uint64_t seed = 0);

PyramidFeatures fpn_forward(FpnNetwork& fpn, const ValuePtr& batch);
PyramidFeatures fpn_forward(FpnNetwork& fpn, const Tensor4& batch);

}  // namespace detnet
