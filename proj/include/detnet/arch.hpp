#pragma once

#include <string>
#include <vector>

#include "detnet/blocks.hpp"

namespace detnet {

enum class StageEntry { kStem, kBlocks };

// One backbone stage. stride_in is the cumulative stride the stage's body
// runs at, i.e. the stride of its output feature map; the stem stage is
// reported at its conv output (stride 2), with the trailing 3x3/2 max pool
// counted toward stage2, following the usual C1..C5 stage convention.
struct StageSpec {
  std::string name;
  StageEntry entry = StageEntry::kBlocks;
  int stem_channels = 0;  // stem stages only
  std::vector<BlockSpec> blocks;
  int stride_in = 1;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct ArchSpec {
  std::string name;
  std::vector<StageSpec> stages;
  bool has_head = false;    // global average pool + linear classifier
  int head_classes = 0;
  bool stride_on_3x3 = false;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;

  const StageSpec* find_stage(const std::string& stage_name) const;
};

// Throws on any structural violation (bad block specs, channel mismatches
// between consecutive blocks, inconsistent stride_in accounting).
void validate_arch(const ArchSpec& spec);

// The five networks under comparison. All carry a 1000-class head.
ArchSpec resnet50_spec();
ArchSpec resnet101_spec();
ArchSpec resnet50_dilated_spec();
ArchSpec detnet59_spec();
ArchSpec detnet59_noproj_spec();

// Resolves one of the built-in names above; throws Error for unknown names.
ArchSpec named_arch(const std::string& name);
std::vector<std::string> builtin_arch_names();

// Divides every channel count by `divisor` (all widths must stay integral).
ArchSpec scale_widths(const ArchSpec& spec, int divisor);

struct SpecDiffEntry {
  std::string path;   // e.g. "stage6.block1.kind"
  std::string left;
  std::string right;
};

// Structural field-by-field diff of two specs (names excluded).
std::vector<SpecDiffEntry> diff_specs(const ArchSpec& a, const ArchSpec& b);

// Line-oriented text format:
//   arch <name> [depth=<n>]
//   stage <name> stride_in=<k> entry=<conv7x7_pool|block> [channels=<c>]
//   block kind=<A|B|C> cin=<n> cmid=<n> cout=<n> stride=<n> dilation=<n>
//   head classes=<n>
// '#' starts a comment; unknown keys are rejected; a depth declaration is
// validated against the computed main-path depth.
std::string serialize_arch_spec(const ArchSpec& spec);
ArchSpec parse_arch_spec(const std::string& text);

}  // namespace detnet
