#include "detnet/analysis.hpp"

#include <iomanip>
#include <sstream>

#include "detnet/kernels.hpp"

namespace detnet {

namespace {

struct Walker {
  const ArchSpec& spec;
  AnalysisReport report;
  Shape4 cur;                // current feature shape (n = 1)
  std::int64_t rf = 1, jump = 1;

  explicit Walker(const ArchSpec& s, int h, int w) : spec(s) {
    cur = Shape4{1, 3, h, w};
  }

  void check_extent(const std::string& name, const Shape4& out) {
    if (out.h <= 0 || out.w <= 0) {
      throw Error("shape underflow at " + name + ": output " + out.str());
    }
  }

  // k/stride/dilation step of the receptive-field recurrence.
  void grow_rf(int k, int stride, int dilation) {
    rf += static_cast<std::int64_t>(k - 1) * dilation * jump;
    jump *= stride;
  }

  void conv(const std::string& name, int c_out, int k, int stride, int padding, int dilation) {
    check_conv_geometry("conv2d", cur.h, k, stride, padding, dilation, "h");
    check_conv_geometry("conv2d", cur.w, k, stride, padding, dilation, "w");
    Shape4 out{1, c_out, conv_out_extent(cur.h, k, stride, padding, dilation),
               conv_out_extent(cur.w, k, stride, padding, dilation)};
    check_extent(name, out);
    LayerRecord rec;
    rec.name = name;
    rec.kind = LayerKind::kConv;
    rec.out = out;
    rec.flops = static_cast<std::int64_t>(out.h) * out.w * c_out * cur.c * k * k;
    rec.params = static_cast<std::int64_t>(c_out) * cur.c * k * k;
    report.layers.push_back(rec);
    cur = out;
  }

  // Projection shortcut conv: counted for FLOPs/params, off the main path,
  // so it does not advance the running shape or the rf recurrence.
  void proj_conv(const std::string& name, const Shape4& from, int c_out, int stride) {
    Shape4 out{1, c_out, conv_out_extent(from.h, 1, stride, 0, 1),
               conv_out_extent(from.w, 1, stride, 0, 1)};
    check_extent(name, out);
    LayerRecord rec;
    rec.name = name;
    rec.kind = LayerKind::kConv;
    rec.out = out;
    rec.flops = static_cast<std::int64_t>(out.h) * out.w * c_out * from.c;
    rec.params = static_cast<std::int64_t>(c_out) * from.c;
    report.layers.push_back(rec);
  }

  void batch_norm(const std::string& name) {
    LayerRecord rec;
    rec.name = name;
    rec.kind = LayerKind::kBatchNorm;
    rec.out = cur;
    rec.params = 2 * static_cast<std::int64_t>(cur.c);
    rec.stats = 2 * static_cast<std::int64_t>(cur.c);
    report.layers.push_back(rec);
  }

  void bn_for(const std::string& name, const Shape4& shape) {
    LayerRecord rec;
    rec.name = name;
    rec.kind = LayerKind::kBatchNorm;
    rec.out = shape;
    rec.params = 2 * static_cast<std::int64_t>(shape.c);
    rec.stats = 2 * static_cast<std::int64_t>(shape.c);
    report.layers.push_back(rec);
  }

  void max_pool(const std::string& name, int k, int stride, int padding) {
    check_conv_geometry("max_pool", cur.h, k, stride, padding, 1, "h");
    check_conv_geometry("max_pool", cur.w, k, stride, padding, 1, "w");
    Shape4 out{1, cur.c, conv_out_extent(cur.h, k, stride, padding, 1),
               conv_out_extent(cur.w, k, stride, padding, 1)};
    check_extent(name, out);
    LayerRecord rec;
    rec.name = name;
    rec.kind = LayerKind::kPool;
    rec.out = out;
    report.layers.push_back(rec);
    grow_rf(k, stride, 1);
    cur = out;
  }

  void rollup(const std::string& name) {
    report.stages.push_back({name, jump > 0 ? static_cast<int>(jump) : 1, rf, jump});
  }

  void block(const std::string& name, const BlockSpec& b) {
    const int s1 = spec.stride_on_3x3 ? 1 : b.stride;
    const int s2 = spec.stride_on_3x3 ? b.stride : 1;
    const Shape4 entry = cur;
    conv(name + ".conv1", b.c_mid, 1, s1, 0, 1);
    grow_rf(1, s1, 1);
    bn_for(name + ".bn1", cur);
    conv(name + ".conv2", b.c_mid, 3, s2, b.dilation, b.dilation);
    grow_rf(3, s2, b.dilation);
    bn_for(name + ".bn2", cur);
    conv(name + ".conv3", b.c_out, 1, 1, 0, 1);
    bn_for(name + ".bn3", cur);
    if (b.has_projection()) {
      proj_conv(name + ".proj.conv", entry, b.c_out, b.stride);
      bn_for(name + ".proj.bn", cur);
    }
  }

  void run() {
    bool pool_pending = false;
    for (size_t i = 0; i < spec.stages.size(); ++i) {
      const StageSpec& st = spec.stages[i];
      if (st.entry == StageEntry::kStem) {
        conv("conv1", st.stem_channels, 7, 2, 3, 1);
        grow_rf(7, 2, 1);
        bn_for("stage1.bn1", cur);
        rollup(st.name);
        pool_pending = true;
        continue;
      }
      if (pool_pending) {
        max_pool("maxpool", 3, 2, 1);
        pool_pending = false;
      }
      for (size_t bi = 0; bi < st.blocks.size(); ++bi) {
        block(st.name + ".block" + std::to_string(bi + 1), st.blocks[bi]);
      }
      rollup(st.name);
    }
    if (spec.has_head) {
      LayerRecord gap;
      gap.name = "gap";
      gap.kind = LayerKind::kGlobalPool;
      gap.out = Shape4{1, cur.c, 1, 1};
      report.layers.push_back(gap);

      LayerRecord fc;
      fc.name = "fc";
      fc.kind = LayerKind::kLinear;
      fc.out = Shape4{1, spec.head_classes, 1, 1};
      fc.flops = static_cast<std::int64_t>(cur.c) * spec.head_classes;
      fc.params = static_cast<std::int64_t>(cur.c) * spec.head_classes + spec.head_classes;
      report.layers.push_back(fc);
    }
    for (const auto& l : report.layers) {
      report.total_flops += l.flops;
      report.total_params += l.params;
      report.total_stats += l.stats;
    }
  }
};

}  // namespace

AnalysisReport analyze(const ArchSpec& spec, int input_h, int input_w) {
  validate_arch(spec);
  Walker w(spec, input_h, input_w);
  w.run();
  return std::move(w.report);
}

AnalysisReport count_flops(const ArchSpec& spec, int input_h, int input_w) {
  return analyze(spec, input_h, input_w);
}

AnalysisReport count_params(const ArchSpec& spec) { return analyze(spec, 224, 224); }

int depth(const ArchSpec& spec) {
  int d = 0;
  for (const auto& st : spec.stages) {
    if (st.entry == StageEntry::kStem) {
      d += 1;
    } else {
      d += 3 * static_cast<int>(st.blocks.size());
    }
  }
  if (spec.has_head) d += 1;
  return d;
}

std::vector<int> stride_map(const ArchSpec& spec) {
  AnalysisReport r = analyze(spec, 224, 224);
  std::vector<int> out;
  out.reserve(r.stages.size());
  for (const auto& s : r.stages) out.push_back(s.stride);
  return out;
}

std::vector<RfEntry> receptive_field(const ArchSpec& spec) {
  AnalysisReport r = analyze(spec, 224, 224);
  std::vector<RfEntry> out;
  out.reserve(r.stages.size());
  for (const auto& s : r.stages) out.push_back({s.rf, s.jump});
  return out;
}

std::vector<LayerRecord> shape_inference(const ArchSpec& spec, int input_h, int input_w) {
  return analyze(spec, input_h, input_w).layers;
}

std::string render_table(const AnalysisReport& report) {
  std::ostringstream os;
  size_t name_w = 5;
  for (const auto& l : report.layers) name_w = std::max(name_w, l.name.size());
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "layer" << std::right
     << std::setw(16) << "shape" << std::setw(14) << "flops" << std::setw(12) << "params"
     << std::setw(10) << "stats" << "\n";
  for (const auto& l : report.layers) {
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << l.name << std::right
       << std::setw(16) << l.out.str() << std::setw(14) << l.flops << std::setw(12) << l.params
       << std::setw(10) << l.stats << "\n";
  }
  os << std::left << std::setw(static_cast<int>(name_w) + 2) << "TOTAL" << std::right
     << std::setw(16) << "" << std::setw(14) << report.total_flops << std::setw(12)
     << report.total_params << std::setw(10) << report.total_stats << "\n";
  return os.str();
}

std::string render_tsv(const AnalysisReport& report) {
  std::ostringstream os;
  for (const auto& l : report.layers) {
    os << l.name << "\t" << l.out.str() << "\t" << l.flops << "\t" << (l.params + l.stats)
       << "\n";
  }
  os << "TOTAL\t" << report.total_flops << "\t"
     << (report.total_params + report.total_stats) << "\n";
  return os.str();
}

}  // namespace detnet
