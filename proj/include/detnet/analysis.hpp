#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detnet/arch.hpp"

// Static analysis over ArchSpec: multiply-add counts, parameters, depth,
// stride map, receptive field and shape inference, all computed without
// touching any numerics. FLOPs follow the multiply-add convention and count
// convolutions and the final linear layer only, at batch size 1.

namespace detnet {

enum class LayerKind { kConv, kBatchNorm, kPool, kGlobalPool, kLinear };

struct LayerRecord {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  Shape4 out;
  std::int64_t flops = 0;   // multiply-adds
  std::int64_t params = 0;  // trainable
  std::int64_t stats = 0;   // batch-norm running statistics
};

struct StageRollup {
  std::string name;
  int stride = 1;            // cumulative stride of the stage output
  std::int64_t rf = 1;       // receptive field along the main path, pixels
  std::int64_t jump = 1;     // distance between adjacent outputs, pixels
};

struct AnalysisReport {
  std::vector<LayerRecord> layers;
  std::vector<StageRollup> stages;
  std::int64_t total_flops = 0;
  std::int64_t total_params = 0;
  std::int64_t total_stats = 0;

  std::int64_t total_params_with_stats() const { return total_params + total_stats; }
};

// Full walk: shapes, FLOPs, parameters and per-stage rollups in one report.
AnalysisReport analyze(const ArchSpec& spec, int input_h, int input_w);

AnalysisReport count_flops(const ArchSpec& spec, int input_h, int input_w);

// Parameter counts are independent of the input size.
AnalysisReport count_params(const ArchSpec& spec);

// Main-path weighted layers: conv1 + three convs per block + final linear;
// projection shortcuts are excluded from the count.
int depth(const ArchSpec& spec);

std::vector<int> stride_map(const ArchSpec& spec);

struct RfEntry {
  std::int64_t rf = 1;
  std::int64_t jump = 1;
};
std::vector<RfEntry> receptive_field(const ArchSpec& spec);

// Layer names and output shapes only (same rows as analyze).
std::vector<LayerRecord> shape_inference(const ArchSpec& spec, int input_h, int input_w);

std::string render_table(const AnalysisReport& report);

// Machine format: one `layer<TAB>shape<TAB>flops<TAB>params` line per layer
// (params include running statistics) and a trailing TOTAL line.
std::string render_tsv(const AnalysisReport& report);

}  // namespace detnet
