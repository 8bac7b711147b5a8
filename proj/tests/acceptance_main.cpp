// Acceptance suite: runs every criterion end to end and prints one
// PASS/FAIL line each. Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "detnet/analysis.hpp"
#include "detnet/fpn.hpp"
#include "detnet/gradcheck.hpp"
#include "detnet/trainer.hpp"

using namespace detnet;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass, const std::string& detail,
            double seconds) {
  std::printf("[%s] criterion %2d: %s (%s, %.1fs)\n", pass ? "PASS" : "FAIL", index,
              name.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void criterion(int index, const std::string& name,
               const std::function<bool(std::string&)>& body) {
  std::string detail;
  auto t0 = std::chrono::steady_clock::now();
  bool pass = false;
  try {
    pass = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(index, name, pass, detail, dt);
}

bool within(double value, double target, double tol) {
  return std::abs(value - target) <= tol * target;
}

std::string fmt_g(std::int64_t flops) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3fG", static_cast<double>(flops) / 1e9);
  return buf;
}

// ---- criterion bodies ----

bool flops_reproduction(std::string& detail) {
  struct Row {
    const char* arch;
    double paper;
  };
  const Row rows[] = {{"resnet50", 3.8e9},
                      {"detnet59", 4.8e9},
                      {"resnet101", 7.6e9},
                      {"detnet59_noproj", 4.6e9},
                      {"resnet50_dilated", 6.1e9}};
  bool ok = true;
  std::string parts;
  for (const Row& row : rows) {
    std::int64_t flops = analyze(named_arch(row.arch), 224, 224).total_flops;
    bool match = within(static_cast<double>(flops), row.paper, 0.05);
    ok = ok && match;
    parts += std::string(row.arch) + "=" + fmt_g(flops) + (match ? " " : "(MISS) ");
  }
  detail = parts;
  return ok;
}

bool depth_counts(std::string& detail) {
  int d50 = depth(resnet50_spec());
  int d59 = depth(detnet59_spec());
  int d101 = depth(resnet101_spec());
  detail = "resnet50=" + std::to_string(d50) + " detnet59=" + std::to_string(d59) +
           " resnet101=" + std::to_string(d101);
  return d50 == 50 && d59 == 59 && d101 == 101;
}

bool stride_maps_and_execution(std::string& detail) {
  const std::map<std::string, std::vector<int>> want = {
      {"detnet59", {2, 4, 8, 16, 16, 16}},
      {"resnet50", {2, 4, 8, 16, 32}},
      {"resnet50_dilated", {2, 4, 8, 16, 16}}};
  bool ok = true;
  for (const auto& [name, expected] : want) {
    if (stride_map(named_arch(name)) != expected) {
      ok = false;
      detail += name + "=map-mismatch ";
    }
  }

  // Execute all five architectures at full width and hold the analyzer to the
  // instrumented run: stage tap sizes against the stride map, and per-layer
  // conv/linear shapes and multiply-adds recomputed from the live tensors.
  int traced_layers = 0;
  for (const auto& name : builtin_arch_names()) {
    ArchSpec spec = named_arch(name);
    Network net = build_network(spec, spec.head_classes, 1);
    std::vector<int> strides = stride_map(spec);
    for (int input : {224, 64}) {
      ForwardTrace trace;
      auto taps = backbone_features(net, Tensor4(Shape4{1, 3, input, input}), &trace);
      auto pooled = global_avg_pool(taps.back().second);
      linear(pooled, net.fc_weight, net.fc_bias, &trace, "fc");

      for (size_t i = 0; i < taps.size(); ++i) {
        const int stride = strides[i + 1];
        if (taps[i].second->t.shape.h != input / stride ||
            taps[i].second->t.shape.w != input / stride) {
          ok = false;
          detail += name + "." + taps[i].first + "=shape-mismatch ";
        }
      }

      AnalysisReport predicted = analyze(net.spec, input, input);
      std::vector<LayerRecord> rows;
      for (const auto& l : predicted.layers) {
        if (l.kind == LayerKind::kConv || l.kind == LayerKind::kLinear) rows.push_back(l);
      }
      if (rows.size() != trace.entries.size()) {
        ok = false;
        detail += name + "=trace-row-count ";
        continue;
      }
      for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].name != trace.entries[i].name || !(rows[i].out == trace.entries[i].out) ||
            rows[i].flops != trace.entries[i].macs) {
          ok = false;
          detail += name + "." + rows[i].name + "=trace-mismatch ";
        }
      }
      traced_layers += static_cast<int>(rows.size());
    }
  }
  if (ok) {
    detail += "maps exact; executed shapes and " + std::to_string(traced_layers) +
              " traced layer rows agree at 224 and 64";
  }
  return ok;
}

bool ablation_fidelity(std::string& detail) {
  auto diffs = diff_specs(detnet59_spec(), detnet59_noproj_spec());
  bool one_diff = diffs.size() == 1 && diffs[0].path == "stage6.block1.kind" &&
                  diffs[0].left == "B" && diffs[0].right == "A";
  std::int64_t delta = count_params(detnet59_spec()).total_params_with_stats() -
                       count_params(detnet59_noproj_spec()).total_params_with_stats();
  detail = "diff entries=" + std::to_string(diffs.size()) +
           " param delta=" + std::to_string(delta);
  return one_diff && delta == 1024 * 1024 + 4 * 1024;
}

bool gradient_suite(std::string& detail) {
  bool ok = true;
  double worst = 0.0;
  std::string worst_op;
  for (const auto& name : gradcheck_op_names()) {
    OpCheckResult r = run_gradcheck(name, 0, 20, 1e-3);
    if (r.max_rel_err >= 1e-3) {
      ok = false;
      detail += name + "=" + std::to_string(r.max_rel_err) + " ";
    }
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_op = name;
    }
  }
  double net_err = network_grad_check(scale_widths(detnet59_spec(), 16), 3, 10, 1e-3);
  if (net_err >= 1e-2) {
    ok = false;
    detail += "detnet59-toy=" + std::to_string(net_err) + " ";
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "worst op %s=%.2e, end-to-end=%.2e",
                worst_op.c_str(), worst, net_err);
  detail += buf;
  return ok;
}

bool dilation_oracle(std::string& detail) {
  Rng rng(101);
  int configs = 0, mismatches = 0;
  for (int k : {2, 3}) {
    for (int d : {2, 3, 4}) {
      for (int s : {1, 2}) {
        for (int pad : {0, 1, 2, 3}) {
          for (int hw : {9, 12, 15}) {
            const int keff = (k - 1) * d + 1;
            if (keff > hw + 2 * pad) continue;
            Tensor4 x(Shape4{1, 2, hw, hw});
            for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
            Tensor4 w(Shape4{2, 2, k, k});
            for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
            Tensor4 inflated = Tensor4::zeros({2, 2, keff, keff});
            for (int oc = 0; oc < 2; ++oc)
              for (int ic = 0; ic < 2; ++ic)
                for (int i = 0; i < k; ++i)
                  for (int j = 0; j < k; ++j)
                    inflated.at(oc, ic, i * d, j * d) = w.at(oc, ic, i, j);
            Tensor4 a = conv2d_forward<float>(x, w, nullptr, ConvMeta{s, pad, d});
            Tensor4 b = conv2d_forward<float>(x, inflated, nullptr, ConvMeta{s, pad, 1});
            ++configs;
            if (std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) != 0) {
              ++mismatches;
            }
          }
        }
      }
    }
  }
  detail = std::to_string(configs) + " configs, " + std::to_string(mismatches) + " mismatches";
  return configs >= 50 && mismatches == 0;
}

bool fpn_topology(std::string& detail) {
  bool ok = true;

  // DetNet-59 pyramid at full width, 224 input.
  FpnNetwork dfpn = build_fpn(detnet59_spec(), 256, 1);
  auto levels = fpn_forward(dfpn, Tensor4(Shape4{1, 3, 224, 224}));
  const int want[] = {56, 28, 14, 14, 14};
  ok = ok && levels.size() == 5;
  for (size_t i = 0; i < levels.size() && ok; ++i) {
    ok = levels[i].second->t.shape.h == want[i] && levels[i].second->t.shape.w == want[i] &&
         levels[i].second->t.shape.c == 256;
  }
  // Exactly two equal-stride junctions, both in the dilated tail.
  int identity_merges = 0;
  for (size_t i = 1; i < dfpn.level_strides.size(); ++i) {
    if (dfpn.level_strides[i] == dfpn.level_strides[i - 1]) ++identity_merges;
  }
  ok = ok && identity_merges == 2 && dfpn.level_strides == std::vector<int>{4, 8, 16, 16, 16};

  // ResNet-50 pyramid: P6 pooled from P5 at 4x4.
  FpnNetwork rfpn = build_fpn(resnet50_spec(), 256, 1);
  auto rlevels = fpn_forward(rfpn, Tensor4(Shape4{1, 3, 224, 224}));
  ok = ok && rlevels.size() == 5 && rlevels[4].first == "P6" && rfpn.pooled_extra_level;
  ok = ok && rlevels[4].second->t.shape.h == 4 && rlevels[4].second->t.shape.w == 4;
  ok = ok && rlevels[3].second->t.shape.h == 7;

  detail = "detnet levels=(56,28,14,14,14) identity merges=" + std::to_string(identity_merges) +
           ", resnet P6=4x4 pooled";
  return ok;
}

bool toy_trainability(std::string& detail) {
  // lr schedule values pinned from the detector configuration.
  SgdConfig paper;
  paper.base_lr = 0.02f;
  paper.warmup_iters = 500;
  paper.warmup_factor = 0.3f;
  paper.decay_iters = {120000, 160000};
  paper.decay_factor = 0.1f;
  paper.total_iters = 180000;
  bool lr_ok = std::abs(lr_at(0, paper) - 0.006f) < 1e-7f &&
               std::abs(lr_at(1000, paper) - 0.02f) < 1e-7f &&
               std::abs(lr_at(130000, paper) - 0.002f) < 1e-7f;

  // Pinned toy-convergence configuration.
  ArchSpec spec = scale_widths(detnet59_spec(), 8);
  Network net = build_network(spec, 10, 1);
  SynthDataset data = synth_dataset(7, 2000, 10, 64);
  SgdConfig cfg;
  cfg.base_lr = 0.02f;
  cfg.warmup_iters = 200;
  cfg.warmup_factor = 0.3f;
  cfg.decay_iters = {};
  cfg.total_iters = 1200;
  TrainOptions opt;
  opt.iters = 1200;
  opt.batch_size = 16;
  opt.seed = 1;
  train_loop(net, data, cfg, opt);
  float acc = evaluate_accuracy(net, data, 0, data.size());

  char buf[128];
  std::snprintf(buf, sizeof(buf), "lr {0.006,0.02,0.002} %s; train acc %.4f after 1200 iters",
                lr_ok ? "exact" : "MISMATCH", static_cast<double>(acc));
  detail = buf;
  return lr_ok && acc >= 0.90f;
}

bool not_desk_reproducible(std::string& detail) {
  detail = "ImageNet top-1 (23.5/24.1/23.0) and COCO mAP/AP/AR are out of scope by design; "
           "criteria 1-8 stand in";
  return true;
}

bool checkpoint_round_trip(std::string& detail) {
  ArchSpec d59 = scale_widths(detnet59_spec(), 16);
  ArchSpec r50 = scale_widths(resnet50_spec(), 16);
  const std::string p1 = "/tmp/detnet_acceptance_1.ckpt";
  const std::string p2 = "/tmp/detnet_acceptance_2.ckpt";

  Network net = build_network(d59, 10, 5);
  save_checkpoint(net, p1);
  Network other = build_network(d59, 10, 77);
  load_checkpoint(other, p1);
  save_checkpoint(other, p2);

  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::vector<char>{std::istreambuf_iterator<char>(is),
                             std::istreambuf_iterator<char>()};
  };
  bool bytes_equal = !slurp(p1).empty() && slurp(p1) == slurp(p2);

  // Partial load: ResNet-50 stages 1-4 into DetNet-59, exactly the shared names.
  Network src = build_network(r50, 10, 6);
  save_checkpoint(src, p1);
  Network dst = build_network(d59, 10, 7);
  LoadResult result = load_checkpoint(dst, p1, true);
  bool names_ok = !result.loaded.empty();
  size_t shared_expected = 0;
  {
    std::map<std::string, Shape4> src_shapes;
    for (auto& [name, param, decay] : src.named_params()) src_shapes[name] = param->t.shape;
    std::map<std::string, size_t> src_bufs;
    for (auto& [name, buf] : src.named_buffers()) src_bufs[name] = buf->size();
    for (auto& [name, param, decay] : dst.named_params()) {
      auto it = src_shapes.find(name);
      if (it != src_shapes.end() && it->second == param->t.shape) ++shared_expected;
    }
    for (auto& [name, buf] : dst.named_buffers()) {
      auto it = src_bufs.find(name);
      if (it != src_bufs.end() && it->second == buf->size()) ++shared_expected;
    }
  }
  names_ok = names_ok && result.loaded.size() == shared_expected;
  for (const auto& name : result.loaded) {
    names_ok = names_ok && (name.rfind("stage1.", 0) == 0 || name.rfind("stage2.", 0) == 0 ||
                            name.rfind("stage3.", 0) == 0 || name.rfind("stage4.", 0) == 0 ||
                            name == "head.fc.bias");
  }

  std::remove(p1.c_str());
  std::remove(p2.c_str());
  detail = "round-trip " + std::string(bytes_equal ? "byte-identical" : "DIFFERS") +
           ", partial load " + std::to_string(result.loaded.size()) + " shared tensors";
  return bytes_equal && names_ok;
}

}  // namespace

int main() {
  std::printf("detnet acceptance suite\n");
  criterion(1, "FLOPs reproduction (3.8/4.8/7.6/4.6/6.1 G, +-5%)", flops_reproduction);
  criterion(2, "depth counts 50/59/101", depth_counts);
  criterion(3, "stride maps + executed shapes", stride_maps_and_execution);
  criterion(4, "ablation fidelity detnet59 vs noproj", ablation_fidelity);
  criterion(5, "gradient suite (ops, blocks, end-to-end)", gradient_suite);
  criterion(6, "dilated-conv zero-inflation oracle", dilation_oracle);
  criterion(7, "FPN topology", fpn_topology);
  criterion(8, "toy trainability + lr schedule", toy_trainability);
  criterion(9, "non-reproducible results stated, not claimed", not_desk_reproducible);
  criterion(10, "checkpoint round-trip + partial load", checkpoint_round_trip);

  std::printf("%d/10 criteria passed\n", 10 - g_failures);
  return g_failures;
}
