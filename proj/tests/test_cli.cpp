#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "detnet/cli.hpp"
#include "detnet/trainer.hpp"

using namespace detnet;

namespace {

struct CliResult {
  int exit_code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("describe prints the stage table and depth") {
  CliResult r = run({"describe", "detnet59"});
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("stage6") != std::string::npos);
  CHECK(r.out.find("depth 59") != std::string::npos);
  CHECK(r.out.find("stages 6") != std::string::npos);

  CliResult depth_only = run({"describe", "resnet50", "--depth"});
  CHECK(depth_only.exit_code == 0);
  CHECK(depth_only.out == "50\n");
}

TEST_CASE("unknown architectures exit with code 2") {
  CliResult r = run({"describe", "resnet9000"});
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("unknown architecture") != std::string::npos);

  CliResult no_arch = run({"analyze"});
  CHECK(no_arch.exit_code == 2);

  CliResult bad_flag = run({"describe", "resnet50", "--frobnicate"});
  CHECK(bad_flag.exit_code == 2);
}

TEST_CASE("analyze tsv carries the totals line and round-trips") {
  CliResult r = run({"analyze", "detnet59", "--input", "224", "--format", "tsv"});
  REQUIRE(r.exit_code == 0);

  std::istringstream is(r.out);
  std::string line, total_line;
  std::int64_t flops_sum = 0;
  while (std::getline(is, line)) {
    if (line.rfind("TOTAL\t", 0) == 0) {
      total_line = line;
      continue;
    }
    std::istringstream ls(line);
    std::string field;
    std::getline(ls, field, '\t');
    std::getline(ls, field, '\t');
    std::getline(ls, field, '\t');
    flops_sum += std::stoll(field);
  }
  REQUIRE_FALSE(total_line.empty());
  std::istringstream ts(total_line);
  std::string field;
  std::getline(ts, field, '\t');
  std::getline(ts, field, '\t');
  CHECK(std::stoll(field) == flops_sum);
  CHECK(std::stoll(field) == 4846018560LL);
}

TEST_CASE("analyze output is stable across runs") {
  CliResult a = run({"analyze", "resnet50", "--format", "table"});
  CliResult b = run({"analyze", "resnet50", "--format", "table"});
  CHECK(a.exit_code == 0);
  CHECK(a.out == b.out);
}

TEST_CASE("gradcheck on a single op passes and prints one row") {
  CliResult r = run({"gradcheck", "--ops", "relu", "--seeds", "5"});
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("relu") != std::string::npos);
  CHECK(r.out.find("ok") != std::string::npos);
  CHECK(r.out.find("conv2d") == std::string::npos);
}

TEST_CASE("gradcheck exits 1 when the tolerance is made unattainable") {
  CliResult r = run({"gradcheck", "--ops", "conv2d", "--seeds", "2", "--tol", "1e-18"});
  CHECK(r.exit_code == 1);
  CHECK(r.out.find("FAIL") != std::string::npos);
}

TEST_CASE("gradcheck error grows with an absurd probe step") {
  // Method property: the reported error is monotone-ish in eps once the
  // probe dwarfs the curvature scale. batch_norm in training mode is
  // nonlinear, so a huge eps must inflate its error.
  std::ostringstream out1, err1, out2, err2;
  run_cli({"gradcheck", "--ops", "batch_norm_training", "--seeds", "2", "--eps", "1e-4"}, out1,
          err1);
  run_cli({"gradcheck", "--ops", "batch_norm_training", "--seeds", "2", "--eps", "0.5", "--tol",
           "1e9"},
          out2, err2);
  auto parse_err = [](const std::string& s) {
    std::istringstream is(s);
    std::string line;
    std::getline(is, line);  // header
    std::getline(is, line);
    std::istringstream ls(line);
    std::string op;
    double v;
    ls >> op >> v;
    return v;
  };
  CHECK(parse_err(out2.str()) > 100.0 * parse_err(out1.str()));
}

TEST_CASE("spec files load through --spec and reject combined sources") {
  const std::string path = "/tmp/detnet_cli_spec.txt";
  {
    std::ofstream os(path);
    os << serialize_arch_spec(detnet59_noproj_spec());
  }
  CliResult r = run({"describe", "--spec", path, "--depth"});
  CHECK(r.exit_code == 0);
  CHECK(r.out == "59\n");

  CliResult both = run({"describe", "detnet59", "--spec", path});
  CHECK(both.exit_code == 2);
  CHECK(both.err.find("not both") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("compare of an arch with itself shows zero deltas") {
  CliResult r = run({"compare", "detnet59", "detnet59"});
  REQUIRE(r.exit_code == 0);
  std::istringstream is(r.out);
  std::string line;
  int delta_rows = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string label, a, b, delta;
    ls >> label >> a >> b >> delta;
    if (label == "depth" || label == "flops" || label == "params" ||
        label == "params+stats") {
      CHECK(delta == "0");
      ++delta_rows;
    }
  }
  CHECK(delta_rows == 4);
}

TEST_CASE("compare detnet59 against detnet59_noproj shows the projection delta") {
  CliResult r = run({"compare", "detnet59", "detnet59_noproj"});
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find(std::to_string(-(1024 * 1024 + 4 * 1024))) != std::string::npos);
}

TEST_CASE("train writes a loadable checkpoint and a curve file") {
  const std::string ckpt = "/tmp/detnet_cli_train.ckpt";
  const std::string curve = "/tmp/detnet_cli_curve.csv";
  CliResult r = run({"train", "--arch", "detnet59", "--toy-width", "16", "--iters", "8",
                     "--batch", "4", "--samples", "32", "--hw", "32", "--out", ckpt, "--curve",
                     curve});
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("train_accuracy") != std::string::npos);

  Network net = build_network(scale_widths(detnet59_spec(), 16), 10, 1);
  LoadResult loaded = load_checkpoint(net, ckpt);
  CHECK(loaded.iteration == 8);

  std::ifstream cs(curve);
  REQUIRE(cs.good());
  std::string header;
  std::getline(cs, header);
  CHECK(header == "iter,lr,loss,batch_acc");
  int rows = 0;
  for (std::string line; std::getline(cs, line);) ++rows;
  CHECK(rows == 8);

  std::remove(ckpt.c_str());
  std::remove(curve.c_str());
}

TEST_CASE("train with lr 0 leaves the checkpoint at the seed initialization") {
  const std::string ckpt = "/tmp/detnet_cli_lr0.ckpt";
  CliResult r = run({"train", "--arch", "detnet59", "--toy-width", "16", "--iters", "4",
                     "--batch", "4", "--samples", "16", "--hw", "32", "--lr", "0", "--seed", "21",
                     "--out", ckpt, "--curve", ""});
  REQUIRE(r.exit_code == 0);

  Network fresh = build_network(scale_widths(detnet59_spec(), 16), 10, 21);
  std::vector<std::vector<float>> init;
  for (auto& [name, param, decay] : fresh.named_params()) init.push_back(param->t.data);
  LoadResult loaded = load_checkpoint(fresh, ckpt);
  CHECK(loaded.skipped.empty());
  size_t i = 0;
  for (auto& [name, param, decay] : fresh.named_params()) {
    CHECK(param->t.data == init[i]);
    ++i;
  }
  std::remove(ckpt.c_str());
}
