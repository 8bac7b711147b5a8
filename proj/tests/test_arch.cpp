#include <doctest.h>

#include <cstring>

#include "detnet/analysis.hpp"
#include "detnet/network.hpp"

using namespace detnet;

namespace {

Tensor4 random_input(std::uint64_t seed, Shape4 s) {
  Rng rng(seed);
  Tensor4 t(s);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("main-path depths match the architecture names") {
  CHECK(depth(resnet50_spec()) == 50);
  CHECK(depth(detnet59_spec()) == 59);
  CHECK(depth(resnet101_spec()) == 101);
  CHECK(depth(detnet59_noproj_spec()) == 59);
}

TEST_CASE("stride maps") {
  CHECK(stride_map(resnet50_spec()) == std::vector<int>{2, 4, 8, 16, 32});
  CHECK(stride_map(resnet101_spec()) == std::vector<int>{2, 4, 8, 16, 32});
  CHECK(stride_map(detnet59_spec()) == std::vector<int>{2, 4, 8, 16, 16, 16});
  CHECK(stride_map(detnet59_noproj_spec()) == std::vector<int>{2, 4, 8, 16, 16, 16});
  CHECK(stride_map(resnet50_dilated_spec()) == std::vector<int>{2, 4, 8, 16, 16});
}

TEST_CASE("stages 1-4 of DetNet-59 equal ResNet-50's exactly") {
  ArchSpec d = detnet59_spec();
  ArchSpec r = resnet50_spec();
  for (size_t i = 0; i < 4; ++i) CHECK(d.stages[i] == r.stages[i]);
  CHECK(d.stages.size() == r.stages.size() + 1);
}

TEST_CASE("DetNet stages 5 and 6 are dilated stride-1 throughout") {
  ArchSpec d = detnet59_spec();
  for (size_t si = 4; si < d.stages.size(); ++si) {
    for (const BlockSpec& b : d.stages[si].blocks) {
      CHECK(b.dilation == 2);
      CHECK(b.stride == 1);
    }
  }
}

TEST_CASE("the no-proj variant differs in exactly one block kind") {
  auto diffs = diff_specs(detnet59_spec(), detnet59_noproj_spec());
  REQUIRE(diffs.size() == 1);
  CHECK(diffs[0].path == "stage6.block1.kind");
  CHECK(diffs[0].left == "B");
  CHECK(diffs[0].right == "A");
}

TEST_CASE("builds are deterministic given the seed") {
  ArchSpec spec = scale_widths(detnet59_spec(), 16);
  Network a = build_network(spec, 10, 42);
  Network b = build_network(spec, 10, 42);
  auto pa = a.named_params();
  auto pb = b.named_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::get<0>(pa[i]) == std::get<0>(pb[i]));
    CHECK(std::memcmp(std::get<1>(pa[i])->t.data.data(), std::get<1>(pb[i])->t.data.data(),
                      std::get<1>(pa[i])->t.data.size() * sizeof(float)) == 0);
  }

  Network c = build_network(spec, 10, 43);
  bool all_equal = true;
  auto pc = c.named_params();
  for (size_t i = 0; i < pa.size(); ++i) {
    if (std::get<1>(pa[i])->t.data != std::get<1>(pc[i])->t.data) all_equal = false;
  }
  CHECK_FALSE(all_equal);
}

TEST_CASE("built parameter count matches the analyzer") {
  for (const auto& name : {"resnet50", "detnet59", "detnet59_noproj"}) {
    ArchSpec spec = named_arch(name);
    AnalysisReport report = count_params(spec);
    Network net = build_network(spec, spec.head_classes, 1);
    std::int64_t buffers = 0;
    for (auto& [n, buf] : net.named_buffers()) buffers += static_cast<std::int64_t>(buf->size());
    CHECK(net.param_count() == report.total_params);
    CHECK(buffers == report.total_stats);
  }
}

TEST_CASE("zero input through a fresh toy build stays finite") {
  ArchSpec spec = scale_widths(detnet59_spec(), 16);
  Network net = build_network(spec, 10, 3);
  net.set_bn_mode(BnMode::kTraining);
  Tensor4 zero(Shape4{2, 3, 32, 32});
  auto logits = forward_classifier(net, zero);
  for (float v : logits->t.data) CHECK(std::isfinite(v));
  net.set_bn_mode(BnMode::kFrozen);
  auto logits2 = forward_classifier(net, zero);
  for (float v : logits2->t.data) CHECK(std::isfinite(v));
}

TEST_CASE("classifier output shape and minimum input handling") {
  ArchSpec spec = scale_widths(detnet59_spec(), 16);
  Network net = build_network(spec, 10, 4);
  auto logits = forward_classifier(net, random_input(5, {2, 3, 64, 64}));
  CHECK(logits->t.shape == Shape4{2, 10, 1, 1});

  // 64 is divisible by 16. The padded stride chain tolerates any positive
  // extent; empty inputs and wrong channel counts fail with structured errors.
  CHECK_THROWS_WITH_AS(forward_classifier(net, Tensor4(Shape4{1, 3, 0, 0})),
                       doctest::Contains("exceeds padded input"), Error);
  CHECK_THROWS_WITH_AS(forward_classifier(net, random_input(7, {1, 2, 64, 64})),
                       doctest::Contains("3 input channels"), Error);
}

TEST_CASE("ResNet-50 and DetNet-59 toy builds produce different logits under a shared seed") {
  ArchSpec rs = scale_widths(resnet50_spec(), 16);
  ArchSpec ds = scale_widths(detnet59_spec(), 16);
  Network a = build_network(rs, 10, 11);
  Network b = build_network(ds, 10, 11);
  Tensor4 x = random_input(12, {1, 3, 64, 64});
  auto la = forward_classifier(a, x);
  auto lb = forward_classifier(b, x);
  CHECK(la->t.data != lb->t.data);
}

TEST_CASE("backbone features follow the stride map and stage widths") {
  ArchSpec spec = scale_widths(detnet59_spec(), 16);
  Network net = build_network(spec, 10, 13);
  auto taps = backbone_features(net, random_input(14, {1, 3, 64, 64}));
  REQUIRE(taps.size() == 5);
  std::vector<int> strides = stride_map(spec);
  for (size_t i = 0; i < taps.size(); ++i) {
    const int s = strides[i + 1];
    CHECK(taps[i].first == spec.stages[i + 1].name);
    CHECK(taps[i].second->t.shape.h == 64 / s);
    CHECK(taps[i].second->t.shape.w == 64 / s);
    CHECK(taps[i].second->t.shape.c == spec.stages[i + 1].blocks.back().c_out);
  }
}

TEST_CASE("spec text round-trips for every built-in architecture") {
  for (const auto& name : builtin_arch_names()) {
    ArchSpec spec = named_arch(name);
    std::string text = serialize_arch_spec(spec);
    ArchSpec again = parse_arch_spec(text);
    CHECK(again == spec);
  }
}

TEST_CASE("parser rejects malformed input with line numbers") {
  CHECK_THROWS_WITH_AS(parse_arch_spec("arch x\nstage stage1 stride_in=2 entry=conv7x7_pool "
                                       "channels=64\nstage s stride_in=4 entry=block\n"
                                       "block kind=D cin=64 cmid=64 cout=256 stride=1 dilation=1\n"),
                       doctest::Contains("line 4"), Error);
  CHECK_THROWS_WITH_AS(parse_arch_spec("arch x\nstage stage1 stride_in=2 entry=conv7x7_pool "
                                       "channels=64 frobnicate=3\n"),
                       doctest::Contains("unknown key"), Error);
  CHECK_THROWS_WITH_AS(parse_arch_spec("stage stage1 stride_in=2 entry=conv7x7_pool channels=64\n"),
                       doctest::Contains("missing arch line"), Error);
}

TEST_CASE("a declared depth is validated against the computed depth") {
  ArchSpec spec = detnet59_spec();
  std::string text = serialize_arch_spec(spec);
  REQUIRE(text.find("depth=59") != std::string::npos);
  std::string wrong = text;
  wrong.replace(wrong.find("depth=59"), 8, "depth=62");
  CHECK_THROWS_WITH_AS(parse_arch_spec(wrong), doctest::Contains("depth"), Error);
}

TEST_CASE("the stride-on-3x3 flag moves the downsampling without changing shapes") {
  ArchSpec base = resnet50_spec();
  ArchSpec moved = base;
  moved.stride_on_3x3 = true;

  AnalysisReport a = analyze(base, 224, 224);
  AnalysisReport b = analyze(moved, 224, 224);
  REQUIRE(a.layers.size() == b.layers.size());
  // Block outputs (and therefore stage taps) are identical; only the
  // intermediate reduce-conv activations change resolution.
  for (size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].name.find("conv3") != std::string::npos || a.layers[i].name == "fc") {
      CHECK(a.layers[i].out == b.layers[i].out);
    }
  }
  CHECK(a.total_params == b.total_params);
  CHECK(stride_map(base) == stride_map(moved));
  // Striding the 3x3 instead of the entry 1x1 runs the transition reduce
  // convs at full resolution, which is exactly the costlier variant.
  CHECK(b.total_flops > a.total_flops);

  // The executed network agrees with the moved-stride analysis as well.
  ArchSpec toy = scale_widths(moved, 16);
  Network net = build_network(toy, 10, 2);
  ForwardTrace trace;
  forward_classifier(net, Tensor4(Shape4{1, 3, 64, 64}), &trace);
  AnalysisReport predicted = analyze(net.spec, 64, 64);
  size_t ti = 0;
  for (const auto& l : predicted.layers) {
    if (l.kind != LayerKind::kConv && l.kind != LayerKind::kLinear) continue;
    REQUIRE(ti < trace.entries.size());
    CHECK(l.flops == trace.entries[ti].macs);
    ++ti;
  }
}

TEST_CASE("width scaling divides every channel count and validates divisibility") {
  ArchSpec toy = scale_widths(detnet59_spec(), 8);
  CHECK(toy.stages[0].stem_channels == 8);
  CHECK(toy.stages[5].blocks[0].c_out == 128);
  CHECK(depth(toy) == depth(detnet59_spec()));
  CHECK_THROWS_WITH_AS(scale_widths(detnet59_spec(), 7), doctest::Contains("divisible"), Error);
}
