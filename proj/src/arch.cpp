#include "detnet/arch.hpp"

#include <algorithm>
#include <sstream>

#include "detnet/analysis.hpp"

namespace detnet {

const StageSpec* ArchSpec::find_stage(const std::string& stage_name) const {
  for (const auto& s : stages) {
    if (s.name == stage_name) return &s;
  }
  return nullptr;
}

void validate_arch(const ArchSpec& spec) {
  if (spec.stages.empty()) throw Error("arch " + spec.name + ": no stages");
  if (spec.stages[0].entry != StageEntry::kStem) {
    throw Error("arch " + spec.name + ": first stage must be the conv7x7+pool stem");
  }
  int prev_cout = 0;
  int stride = 1;
  for (size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& st = spec.stages[i];
    if (st.name.empty()) throw Error("arch " + spec.name + ": unnamed stage");
    if (st.entry == StageEntry::kStem) {
      if (i != 0) throw Error("arch " + spec.name + ": stem must be the first stage");
      if (st.stem_channels <= 0) {
        throw Error("arch " + spec.name + ": stem channels must be positive");
      }
      if (!st.blocks.empty()) {
        throw Error("arch " + spec.name + ": stem stage carries no blocks");
      }
      stride *= 2;  // conv1; the stem pool is accounted to the next stage
      if (st.stride_in != stride) {
        throw Error("arch " + spec.name + ": " + st.name + " stride_in should be " +
                    std::to_string(stride) + ", got " + std::to_string(st.stride_in));
      }
      prev_cout = st.stem_channels;
      continue;
    }
    if (st.blocks.empty()) {
      throw Error("arch " + spec.name + ": " + st.name + " has no blocks");
    }
    if (i == 1) stride *= 2;  // stem max pool
    for (size_t bi = 0; bi < st.blocks.size(); ++bi) {
      const BlockSpec& b = st.blocks[bi];
      try {
        validate_block(b);
      } catch (const Error& e) {
        throw Error("arch " + spec.name + ": " + st.name + " block " +
                    std::to_string(bi + 1) + ": " + e.what());
      }
      if (b.c_in != prev_cout) {
        throw Error("arch " + spec.name + ": " + st.name + " block " + std::to_string(bi + 1) +
                    ": c_in " + std::to_string(b.c_in) + " does not match preceding width " +
                    std::to_string(prev_cout));
      }
      if (bi > 0 && b.stride != 1) {
        throw Error("arch " + spec.name + ": " + st.name + " block " + std::to_string(bi + 1) +
                    ": only the first block of a stage may be strided");
      }
      stride *= b.stride;
      prev_cout = b.c_out;
    }
    if (st.stride_in != stride) {
      throw Error("arch " + spec.name + ": " + st.name + " stride_in should be " +
                  std::to_string(stride) + ", got " + std::to_string(st.stride_in));
    }
  }
  if (spec.has_head && spec.head_classes <= 0) {
    throw Error("arch " + spec.name + ": head classes must be positive");
  }
}

namespace {

StageSpec stem_stage() {
  StageSpec s;
  s.name = "stage1";
  s.entry = StageEntry::kStem;
  s.stem_channels = 64;
  s.stride_in = 2;
  return s;
}

StageSpec bottleneck_stage(const std::string& name, int count, int c_in, int c_mid, int c_out,
                           int first_stride, int dilation, int stride_in,
                           BlockKind first_kind) {
  StageSpec s;
  s.name = name;
  s.entry = StageEntry::kBlocks;
  s.stride_in = stride_in;
  s.blocks.push_back({first_kind, c_in, c_mid, c_out, first_stride, dilation});
  for (int i = 1; i < count; ++i) {
    s.blocks.push_back({BlockKind::A, c_out, c_mid, c_out, 1, dilation});
  }
  return s;
}

// Stages 1-4 shared by every network here: conv1 stem, then bottleneck
// stages [3, 4, 6] at widths (64,256) / (128,512) / (256,1024).
std::vector<StageSpec> common_trunk(int stage4_count) {
  std::vector<StageSpec> stages;
  stages.push_back(stem_stage());
  stages.push_back(bottleneck_stage("stage2", 3, 64, 64, 256, 1, 1, 4, BlockKind::C));
  stages.push_back(bottleneck_stage("stage3", 4, 256, 128, 512, 2, 1, 8, BlockKind::C));
  stages.push_back(bottleneck_stage("stage4", stage4_count, 512, 256, 1024, 2, 1, 16, BlockKind::C));
  return stages;
}

ArchSpec finish(ArchSpec spec) {
  spec.has_head = true;
  spec.head_classes = 1000;
  validate_arch(spec);
  return spec;
}

}  // namespace

ArchSpec resnet50_spec() {
  ArchSpec spec;
  spec.name = "resnet50";
  spec.stages = common_trunk(6);
  spec.stages.push_back(bottleneck_stage("stage5", 3, 1024, 512, 2048, 2, 1, 32, BlockKind::C));
  return finish(std::move(spec));
}

ArchSpec resnet101_spec() {
  ArchSpec spec;
  spec.name = "resnet101";
  spec.stages = common_trunk(23);
  spec.stages.push_back(bottleneck_stage("stage5", 3, 1024, 512, 2048, 2, 1, 32, BlockKind::C));
  return finish(std::move(spec));
}

// ResNet-50 with the stage-5 stride removed and its 3x3 convs dilated, as
// used for detector fine-tuning; the head stays usable for toy experiments.
ArchSpec resnet50_dilated_spec() {
  ArchSpec spec;
  spec.name = "resnet50_dilated";
  spec.stages = common_trunk(6);
  spec.stages.push_back(bottleneck_stage("stage5", 3, 1024, 512, 2048, 1, 2, 16, BlockKind::B));
  return finish(std::move(spec));
}

// Stages 1-4 as ResNet-50; stages 5 and 6 trade downsampling for dilation-2
// bottlenecks at the stage-4 width and open with a projection block to mark
// the new semantic stage.
ArchSpec detnet59_spec() {
  ArchSpec spec;
  spec.name = "detnet59";
  spec.stages = common_trunk(6);
  spec.stages.push_back(bottleneck_stage("stage5", 3, 1024, 256, 1024, 1, 2, 16, BlockKind::B));
  spec.stages.push_back(bottleneck_stage("stage6", 3, 1024, 256, 1024, 1, 2, 16, BlockKind::B));
  return finish(std::move(spec));
}

// DetNet-59 with the stage-6 entry projection removed (identity shortcut).
ArchSpec detnet59_noproj_spec() {
  ArchSpec spec = detnet59_spec();
  spec.name = "detnet59_noproj";
  spec.stages[5].blocks[0].kind = BlockKind::A;
  validate_arch(spec);
  return spec;
}

ArchSpec named_arch(const std::string& name) {
  if (name == "resnet50") return resnet50_spec();
  if (name == "resnet101") return resnet101_spec();
  if (name == "resnet50_dilated") return resnet50_dilated_spec();
  if (name == "detnet59") return detnet59_spec();
  if (name == "detnet59_noproj") return detnet59_noproj_spec();
  throw Error("unknown architecture '" + name + "'; built-ins: resnet50, resnet101, " +
              "resnet50_dilated, detnet59, detnet59_noproj");
}

std::vector<std::string> builtin_arch_names() {
  return {"resnet50", "resnet101", "resnet50_dilated", "detnet59", "detnet59_noproj"};
}

ArchSpec scale_widths(const ArchSpec& spec, int divisor) {
  if (divisor <= 0) throw Error("scale_widths: divisor must be positive");
  auto scale = [&](int c, const std::string& what) {
    if (c % divisor != 0) {
      throw Error("scale_widths: " + what + " (" + std::to_string(c) +
                  ") is not divisible by " + std::to_string(divisor));
    }
    return c / divisor;
  };
  ArchSpec out = spec;
  if (divisor > 1) out.name += "_w" + std::to_string(divisor);
  for (auto& st : out.stages) {
    if (st.entry == StageEntry::kStem) {
      st.stem_channels = scale(st.stem_channels, "stem channels");
      continue;
    }
    for (auto& b : st.blocks) {
      b.c_in = scale(b.c_in, "c_in");
      b.c_mid = scale(b.c_mid, "c_mid");
      b.c_out = scale(b.c_out, "c_out");
    }
  }
  validate_arch(out);
  return out;
}

std::vector<SpecDiffEntry> diff_specs(const ArchSpec& a, const ArchSpec& b) {
  std::vector<SpecDiffEntry> out;
  auto field = [&](const std::string& path, auto left, auto right) {
    if (left != right) {
      out.push_back({path, std::to_string(left), std::to_string(right)});
    }
  };
  if (a.stages.size() != b.stages.size()) {
    out.push_back({"stages", std::to_string(a.stages.size()), std::to_string(b.stages.size())});
    return out;
  }
  for (size_t i = 0; i < a.stages.size(); ++i) {
    const StageSpec& sa = a.stages[i];
    const StageSpec& sb = b.stages[i];
    const std::string sp = sa.name;
    if (sa.entry != sb.entry) {
      out.push_back({sp + ".entry", sa.entry == StageEntry::kStem ? "stem" : "block",
                     sb.entry == StageEntry::kStem ? "stem" : "block"});
      continue;
    }
    field(sp + ".stride_in", sa.stride_in, sb.stride_in);
    field(sp + ".channels", sa.stem_channels, sb.stem_channels);
    if (sa.blocks.size() != sb.blocks.size()) {
      out.push_back({sp + ".blocks", std::to_string(sa.blocks.size()),
                     std::to_string(sb.blocks.size())});
      continue;
    }
    for (size_t bi = 0; bi < sa.blocks.size(); ++bi) {
      const BlockSpec& ba = sa.blocks[bi];
      const BlockSpec& bb = sb.blocks[bi];
      const std::string bp = sp + ".block" + std::to_string(bi + 1);
      if (ba.kind != bb.kind) {
        out.push_back({bp + ".kind", to_string(ba.kind), to_string(bb.kind)});
      }
      field(bp + ".cin", ba.c_in, bb.c_in);
      field(bp + ".cmid", ba.c_mid, bb.c_mid);
      field(bp + ".cout", ba.c_out, bb.c_out);
      field(bp + ".stride", ba.stride, bb.stride);
      field(bp + ".dilation", ba.dilation, bb.dilation);
    }
  }
  field("head.classes", a.has_head ? a.head_classes : 0, b.has_head ? b.head_classes : 0);
  return out;
}

std::string serialize_arch_spec(const ArchSpec& spec) {
  std::ostringstream os;
  os << "arch " << spec.name << " depth=" << depth(spec) << "\n";
  for (const auto& st : spec.stages) {
    os << "stage " << st.name << " stride_in=" << st.stride_in;
    if (st.entry == StageEntry::kStem) {
      os << " entry=conv7x7_pool channels=" << st.stem_channels << "\n";
      continue;
    }
    os << " entry=block\n";
    for (const auto& b : st.blocks) {
      os << "block kind=" << to_string(b.kind) << " cin=" << b.c_in << " cmid=" << b.c_mid
         << " cout=" << b.c_out << " stride=" << b.stride << " dilation=" << b.dilation << "\n";
    }
  }
  if (spec.has_head) os << "head classes=" << spec.head_classes << "\n";
  return os.str();
}

namespace {

struct LineCursor {
  int number = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error("parse error at line " + std::to_string(number) + ": " + msg);
  }
};

std::vector<std::pair<std::string, std::string>> parse_keys(
    const std::vector<std::string>& tokens, size_t from, const LineCursor& at) {
  std::vector<std::pair<std::string, std::string>> out;
  for (size_t i = from; i < tokens.size(); ++i) {
    auto eq = tokens[i].find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= tokens[i].size()) {
      at.fail("expected key=value, got '" + tokens[i] + "'");
    }
    out.emplace_back(tokens[i].substr(0, eq), tokens[i].substr(eq + 1));
  }
  return out;
}

int parse_int(const std::string& s, const std::string& key, const LineCursor& at) {
  try {
    size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    at.fail("value of '" + key + "' is not an integer: '" + s + "'");
  }
}

}  // namespace

ArchSpec parse_arch_spec(const std::string& text) {
  ArchSpec spec;
  bool saw_arch = false;
  int declared_depth = -1;
  StageSpec* current = nullptr;
  LineCursor at;

  std::istringstream is(text);
  std::string raw;
  while (std::getline(is, raw)) {
    ++at.number;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    std::istringstream ls(raw);
    std::vector<std::string> tokens;
    for (std::string tok; ls >> tok;) tokens.push_back(tok);
    if (tokens.empty()) continue;

    const std::string& kind = tokens[0];
    if (kind == "arch") {
      if (saw_arch) at.fail("duplicate arch line");
      if (tokens.size() < 2) at.fail("arch line needs a name");
      spec.name = tokens[1];
      saw_arch = true;
      for (const auto& [k, v] : parse_keys(tokens, 2, at)) {
        if (k == "depth") {
          declared_depth = parse_int(v, k, at);
        } else {
          at.fail("unknown key '" + k + "' on arch line");
        }
      }
    } else if (kind == "stage") {
      if (tokens.size() < 2) at.fail("stage line needs a name");
      StageSpec st;
      st.name = tokens[1];
      bool saw_entry = false;
      for (const auto& [k, v] : parse_keys(tokens, 2, at)) {
        if (k == "stride_in") {
          st.stride_in = parse_int(v, k, at);
        } else if (k == "entry") {
          saw_entry = true;
          if (v == "conv7x7_pool") {
            st.entry = StageEntry::kStem;
          } else if (v == "block") {
            st.entry = StageEntry::kBlocks;
          } else {
            at.fail("unknown entry kind '" + v + "'");
          }
        } else if (k == "channels") {
          st.stem_channels = parse_int(v, k, at);
        } else {
          at.fail("unknown key '" + k + "' on stage line");
        }
      }
      if (!saw_entry) at.fail("stage line is missing entry=");
      spec.stages.push_back(std::move(st));
      current = &spec.stages.back();
    } else if (kind == "block") {
      if (!current) at.fail("block line before any stage");
      if (current->entry == StageEntry::kStem) at.fail("stem stage cannot carry blocks");
      BlockSpec b;
      bool saw_kind = false;
      for (const auto& [k, v] : parse_keys(tokens, 1, at)) {
        if (k == "kind") {
          saw_kind = true;
          if (v == "A") {
            b.kind = BlockKind::A;
          } else if (v == "B") {
            b.kind = BlockKind::B;
          } else if (v == "C") {
            b.kind = BlockKind::C;
          } else {
            at.fail("unknown block kind '" + v + "'");
          }
        } else if (k == "cin") {
          b.c_in = parse_int(v, k, at);
        } else if (k == "cmid") {
          b.c_mid = parse_int(v, k, at);
        } else if (k == "cout") {
          b.c_out = parse_int(v, k, at);
        } else if (k == "stride") {
          b.stride = parse_int(v, k, at);
        } else if (k == "dilation") {
          b.dilation = parse_int(v, k, at);
        } else {
          at.fail("unknown key '" + k + "' on block line");
        }
      }
      if (!saw_kind) at.fail("block line is missing kind=");
      current->blocks.push_back(b);
    } else if (kind == "head") {
      for (const auto& [k, v] : parse_keys(tokens, 1, at)) {
        if (k == "classes") {
          spec.has_head = true;
          spec.head_classes = parse_int(v, k, at);
        } else {
          at.fail("unknown key '" + k + "' on head line");
        }
      }
    } else {
      at.fail("unknown directive '" + kind + "'");
    }
  }

  if (!saw_arch) throw Error("parse error: missing arch line");
  validate_arch(spec);
  if (declared_depth >= 0) {
    int actual = depth(spec);
    if (actual != declared_depth) {
      throw Error("validation error: declared depth " + std::to_string(declared_depth) +
                  " does not match computed depth " + std::to_string(actual));
    }
  }
  return spec;
}

}  // namespace detnet
