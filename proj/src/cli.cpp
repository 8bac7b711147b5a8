#include "detnet/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "detnet/analysis.hpp"
#include "detnet/fpn.hpp"
#include "detnet/gradcheck.hpp"
#include "detnet/trainer.hpp"

namespace detnet {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumeric = 1;
constexpr int kExitUsage = 2;

ArchSpec resolve_arch(const std::string& name, const std::string& spec_path) {
  if (!name.empty() && !spec_path.empty()) {
    throw Error("give either an architecture name or --spec FILE, not both");
  }
  if (!spec_path.empty()) {
    std::ifstream is(spec_path);
    if (!is) throw Error("cannot open spec file '" + spec_path + "'");
    std::stringstream buffer;
    buffer << is.rdbuf();
    return parse_arch_spec(buffer.str());
  }
  if (name.empty()) throw Error("an architecture name or --spec FILE is required");
  return named_arch(name);
}

std::string giga(std::int64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3fG", static_cast<double>(v) / 1e9);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out = "(";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out + ")";
}

int cmd_describe(const ArchSpec& spec, bool depth_only, std::ostream& out) {
  if (depth_only) {
    out << depth(spec) << "\n";
    return kExitOk;
  }
  AnalysisReport report = count_params(spec);
  out << "arch " << spec.name << "\n";
  out << std::left << std::setw(9) << "stage" << std::setw(7) << "block" << std::setw(6)
      << "kind" << std::right << std::setw(6) << "cin" << std::setw(6) << "cmid" << std::setw(6)
      << "cout" << std::setw(8) << "stride" << std::setw(10) << "dilation" << "\n";
  for (const auto& st : spec.stages) {
    if (st.entry == StageEntry::kStem) {
      out << std::left << std::setw(9) << st.name << std::setw(7) << "-" << std::setw(6)
          << "stem" << std::right << std::setw(6) << 3 << std::setw(6) << "-" << std::setw(6)
          << st.stem_channels << std::setw(8) << 2 << std::setw(10) << 1 << "\n";
      continue;
    }
    for (size_t bi = 0; bi < st.blocks.size(); ++bi) {
      const BlockSpec& b = st.blocks[bi];
      out << std::left << std::setw(9) << st.name << std::setw(7) << bi + 1 << std::setw(6)
          << to_string(b.kind) << std::right << std::setw(6) << b.c_in << std::setw(6) << b.c_mid
          << std::setw(6) << b.c_out << std::setw(8) << b.stride << std::setw(10) << b.dilation
          << "\n";
    }
  }
  out << "stages " << spec.stages.size() << "\n";
  out << "depth " << depth(spec) << "\n";
  out << "params " << report.total_params << "\n";
  out << "bn_stats " << report.total_stats << "\n";
  if (spec.has_head) out << "head gap+linear classes=" << spec.head_classes << "\n";
  return kExitOk;
}

int cmd_analyze(const ArchSpec& spec, int input, const std::string& format, std::ostream& out) {
  AnalysisReport report = analyze(spec, input, input);
  out << (format == "tsv" ? render_tsv(report) : render_table(report));
  return kExitOk;
}

int cmd_gradcheck(const std::string& ops, std::uint64_t seed, int seeds, double eps, double tol,
                  std::ostream& out) {
  std::vector<std::string> names;
  if (ops == "all") {
    names = gradcheck_op_names();
  } else {
    names.push_back(ops);
  }
  bool ok = true;
  out << std::left << std::setw(24) << "op" << std::right << std::setw(14) << "max_rel_err"
      << std::setw(8) << "seeds" << "  status\n";
  for (const auto& name : names) {
    OpCheckResult r = run_gradcheck(name, seed, seeds, eps);
    bool pass = r.max_rel_err < tol;
    ok = ok && pass;
    char err[32];
    std::snprintf(err, sizeof(err), "%.3e", r.max_rel_err);
    out << std::left << std::setw(24) << r.op << std::right << std::setw(14) << err
        << std::setw(8) << r.seeds << "  " << (pass ? "ok" : "FAIL") << "\n";
  }
  return ok ? kExitOk : kExitNumeric;
}

int cmd_train(const ArchSpec& base_spec, int toy_width, const SgdConfig& cfg, TrainOptions opt,
              int classes, int samples, int hw, std::uint64_t data_seed,
              const std::string& ckpt_path, const std::string& curve_path, std::ostream& out) {
  ArchSpec spec = toy_width > 1 ? scale_widths(base_spec, toy_width) : base_spec;
  Network net = build_network(spec, classes, opt.seed);
  SynthDataset data = synth_dataset(data_seed, samples, classes, hw);

  SgdState state;
  TrainReport report = train_loop(net, data, cfg, opt, &state);

  if (!curve_path.empty()) {
    std::ofstream cs(curve_path);
    if (!cs) throw Error("cannot open curve file '" + curve_path + "'");
    cs << "iter,lr,loss,batch_acc\n";
    for (int i = 0; i < report.iters; ++i) {
      char line[96];
      std::snprintf(line, sizeof(line), "%d,%.6g,%.6g,%.4g\n", i,
                    static_cast<double>(lr_at(std::min(i, cfg.total_iters - 1), cfg)),
                    static_cast<double>(report.loss[static_cast<size_t>(i)]),
                    static_cast<double>(report.batch_acc[static_cast<size_t>(i)]));
      cs << line;
    }
  }
  if (!ckpt_path.empty()) {
    save_checkpoint(net, ckpt_path, &state, static_cast<std::uint64_t>(report.iters));
  }

  float train_acc = evaluate_accuracy(net, data, 0, data.size());
  char buf[160];
  std::snprintf(buf, sizeof(buf), "final_loss %.6g\n",
                static_cast<double>(report.loss.back()));
  out << "arch " << spec.name << "\n";
  out << "iters " << report.iters << "\n";
  out << buf;
  std::snprintf(buf, sizeof(buf), "train_accuracy %.4f\n", static_cast<double>(train_acc));
  out << buf;
  if (!ckpt_path.empty()) out << "checkpoint " << ckpt_path << "\n";
  return kExitOk;
}

int cmd_compare(const ArchSpec& a, const ArchSpec& b, int input, std::ostream& out) {
  AnalysisReport ra = analyze(a, input, input);
  AnalysisReport rb = analyze(b, input, input);
  const int w = 24;
  auto row = [&](const std::string& label, std::int64_t va, std::int64_t vb) {
    out << std::left << std::setw(14) << label << std::right << std::setw(w) << va
        << std::setw(w) << vb << std::setw(16) << (vb - va) << "\n";
  };
  auto text_row = [&](const std::string& label, const std::string& va, const std::string& vb) {
    out << std::left << std::setw(14) << label << std::right << std::setw(w) << va
        << std::setw(w) << vb << "\n";
  };
  out << std::left << std::setw(14) << "metric" << std::right << std::setw(w) << a.name
      << std::setw(w) << b.name << std::setw(16) << "delta" << "\n";
  row("depth", depth(a), depth(b));
  row("flops", ra.total_flops, rb.total_flops);
  row("params", ra.total_params, rb.total_params);
  row("params+stats", ra.total_params_with_stats(), rb.total_params_with_stats());
  text_row("flops_g", giga(ra.total_flops), giga(rb.total_flops));
  text_row("stride_map", join_ints(stride_map(a)), join_ints(stride_map(b)));
  auto rf_str = [](const std::vector<RfEntry>& rf) {
    std::string s = "(";
    for (size_t i = 0; i < rf.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(rf[i].rf);
    }
    return s + ")";
  };
  text_row("rf", rf_str(receptive_field(a)), rf_str(receptive_field(b)));
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DetNet/ResNet backbone construction, analysis and toy training"};
  app.require_subcommand(1);

  std::string arch_name, spec_path, arch_b;
  int input = 224;
  bool depth_only = false;
  std::string format = "table";

  auto* describe = app.add_subcommand("describe", "print the stage/block table of an arch");
  describe->add_option("arch", arch_name, "built-in architecture name");
  describe->add_option("--spec", spec_path, "architecture spec file");
  describe->add_flag("--depth", depth_only, "print only the main-path depth");

  auto* analyze_cmd = app.add_subcommand("analyze", "per-layer FLOPs/params/shape report");
  analyze_cmd->add_option("arch", arch_name, "built-in architecture name");
  analyze_cmd->add_option("--spec", spec_path, "architecture spec file");
  analyze_cmd->add_option("--input", input, "input resolution (default 224)");
  analyze_cmd->add_option("--format", format, "table|tsv")
      ->check(CLI::IsMember({"table", "tsv"}));

  std::string ops = "all";
  std::uint64_t seed = 0;
  int n_seeds = 20;
  double eps = 1e-3, tol = 1e-3;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--ops", ops, "all or one op name");
  gradcheck->add_option("--seed", seed, "seed base");
  gradcheck->add_option("--seeds", n_seeds, "seeds per op (default 20)");
  gradcheck->add_option("--eps", eps, "probe step (default 1e-3)");
  gradcheck->add_option("--tol", tol, "max relative error (default 1e-3)");

  // Train defaults are the pinned toy-convergence configuration.
  std::string train_arch = "detnet59";
  int toy_width = 8, iters = 1200, batch = 16, classes = 10, samples = 2000, hw = 64;
  std::uint64_t train_seed = 1, data_seed = 7;
  double lr = 0.02;
  std::string ckpt_path = "toy.ckpt", curve_path = "loss_curve.csv";
  bool freeze_bn = false, freeze_stage1 = false, hflip = false;
  auto* train = app.add_subcommand("train", "toy training on the synthetic task");
  train->add_option("--arch", train_arch, "built-in architecture name");
  train->add_option("--spec", spec_path, "architecture spec file");
  train->add_option("--toy-width", toy_width, "divide all widths by this (default 8)");
  train->add_option("--iters", iters, "iterations (default 1200)");
  train->add_option("--batch", batch, "batch size (default 16)");
  train->add_option("--lr", lr, "base learning rate (default 0.02)");
  train->add_option("--classes", classes, "synthetic classes (default 10)");
  train->add_option("--samples", samples, "synthetic samples (default 2000)");
  train->add_option("--hw", hw, "synthetic image size (default 64)");
  train->add_option("--seed", train_seed, "training seed (default 1)");
  train->add_option("--data-seed", data_seed, "dataset seed (default 7)");
  train->add_option("--out", ckpt_path, "checkpoint path ('' disables)");
  train->add_option("--curve", curve_path, "loss curve csv path ('' disables)");
  train->add_flag("--freeze-bn", freeze_bn, "frozen batch-norm statistics and affine");
  train->add_flag("--freeze-stage1", freeze_stage1, "freeze conv1/bn1 parameters");
  train->add_flag("--hflip", hflip, "horizontal flip augmentation");

  auto* compare = app.add_subcommand("compare", "side-by-side comparison of two archs");
  compare->add_option("archA", arch_name, "first architecture")->required();
  compare->add_option("archB", arch_b, "second architecture")->required();
  compare->add_option("--input", input, "input resolution (default 224)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (describe->parsed()) {
      return cmd_describe(resolve_arch(arch_name, spec_path), depth_only, out);
    }
    if (analyze_cmd->parsed()) {
      return cmd_analyze(resolve_arch(arch_name, spec_path), input, format, out);
    }
    if (gradcheck->parsed()) {
      return cmd_gradcheck(ops, seed, n_seeds, eps, tol, out);
    }
    if (train->parsed()) {
      ArchSpec spec = resolve_arch(spec_path.empty() ? train_arch : "", spec_path);
      SgdConfig cfg;
      cfg.base_lr = static_cast<float>(lr);
      cfg.total_iters = std::max(iters, 1);
      cfg.warmup_iters = std::min(500, iters / 6);
      cfg.decay_iters = {};
      TrainOptions opt;
      opt.batch_size = batch;
      opt.iters = iters;
      opt.seed = train_seed;
      opt.freeze_bn = freeze_bn;
      opt.freeze_stage1 = freeze_stage1;
      opt.hflip = hflip;
      return cmd_train(spec, toy_width, cfg, opt, classes, samples, hw, data_seed, ckpt_path,
                       curve_path, out);
    }
    if (compare->parsed()) {
      return cmd_compare(resolve_arch(arch_name, ""), resolve_arch(arch_b, ""), input, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  err << "error: no subcommand\n";
  return kExitUsage;
}

}  // namespace detnet
