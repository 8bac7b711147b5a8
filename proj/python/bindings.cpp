#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "detnet/analysis.hpp"
#include "detnet/fpn.hpp"
#include "detnet/gradcheck.hpp"
#include "detnet/trainer.hpp"

namespace py = pybind11;
using namespace detnet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor4 tensor_from_array(const FloatArray& arr) {
  py::buffer_info info = arr.request();
  if (info.ndim != 4) {
    throw Error("expected a 4-d NCHW array, got " + std::to_string(info.ndim) + " dims");
  }
  Shape4 shape{static_cast<int>(info.shape[0]), static_cast<int>(info.shape[1]),
               static_cast<int>(info.shape[2]), static_cast<int>(info.shape[3])};
  Tensor4 t(shape);
  std::memcpy(t.data.data(), info.ptr, sizeof(float) * t.data.size());
  return t;
}

py::array_t<float> array_from_tensor(const Tensor4& t) {
  py::array_t<float> out({t.shape.n, t.shape.c, t.shape.h, t.shape.w});
  std::memcpy(out.mutable_data(), t.data.data(), sizeof(float) * t.data.size());
  return out;
}

BnMode parse_bn_mode(const std::string& mode) {
  if (mode == "training") return BnMode::kTraining;
  if (mode == "frozen") return BnMode::kFrozen;
  throw Error("bn mode must be 'training' or 'frozen', got '" + mode + "'");
}

// Keeps the network and its SGD state together on the python side.
struct PyNetwork {
  Network net;
  SgdState state;
};

SgdConfig config_from_kwargs(float base_lr, float momentum, float weight_decay,
                             int warmup_iters, float warmup_factor,
                             std::vector<int> decay_iters, float decay_factor,
                             int total_iters) {
  SgdConfig cfg;
  cfg.base_lr = base_lr;
  cfg.momentum = momentum;
  cfg.weight_decay = weight_decay;
  cfg.warmup_iters = warmup_iters;
  cfg.warmup_factor = warmup_factor;
  cfg.decay_iters = std::move(decay_iters);
  cfg.decay_factor = decay_factor;
  cfg.total_iters = total_iters;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DetNet/ResNet backbone construction, analysis, execution and toy training";

  py::register_exception<Error>(m, "DetnetError");

  py::class_<BlockSpec>(m, "BlockSpec")
      .def_property_readonly("kind", [](const BlockSpec& b) { return std::string(to_string(b.kind)); })
      .def_readonly("c_in", &BlockSpec::c_in)
      .def_readonly("c_mid", &BlockSpec::c_mid)
      .def_readonly("c_out", &BlockSpec::c_out)
      .def_readonly("stride", &BlockSpec::stride)
      .def_readonly("dilation", &BlockSpec::dilation);

  py::class_<StageSpec>(m, "StageSpec")
      .def_readonly("name", &StageSpec::name)
      .def_readonly("stride_in", &StageSpec::stride_in)
      .def_readonly("blocks", &StageSpec::blocks)
      .def_property_readonly("is_stem",
                             [](const StageSpec& s) { return s.entry == StageEntry::kStem; });

  py::class_<ArchSpec>(m, "ArchSpec")
      .def_readonly("name", &ArchSpec::name)
      .def_readonly("stages", &ArchSpec::stages)
      .def_readonly("head_classes", &ArchSpec::head_classes)
      .def("__eq__", [](const ArchSpec& a, const ArchSpec& b) { return a == b; })
      .def("__repr__", [](const ArchSpec& s) {
        return "<ArchSpec " + s.name + ", " + std::to_string(s.stages.size()) + " stages>";
      });

  m.def("named_arch", &named_arch, py::arg("name"));
  m.def("builtin_arch_names", &builtin_arch_names);
  m.def("scale_widths", &scale_widths, py::arg("spec"), py::arg("divisor"));
  m.def("parse_arch_spec", &parse_arch_spec, py::arg("text"));
  m.def("serialize_arch_spec", &serialize_arch_spec, py::arg("spec"));
  m.def("diff_specs", [](const ArchSpec& a, const ArchSpec& b) {
    std::vector<std::tuple<std::string, std::string, std::string>> out;
    for (const auto& d : diff_specs(a, b)) out.emplace_back(d.path, d.left, d.right);
    return out;
  });

  py::class_<AnalysisReport>(m, "AnalysisReport")
      .def_readonly("total_flops", &AnalysisReport::total_flops)
      .def_readonly("total_params", &AnalysisReport::total_params)
      .def_readonly("total_stats", &AnalysisReport::total_stats)
      .def_property_readonly("layers",
                             [](const AnalysisReport& r) {
                               std::vector<std::tuple<std::string, std::tuple<int, int, int, int>,
                                                      std::int64_t, std::int64_t, std::int64_t>>
                                   out;
                               for (const auto& l : r.layers) {
                                 out.emplace_back(l.name,
                                                  std::make_tuple(l.out.n, l.out.c, l.out.h,
                                                                  l.out.w),
                                                  l.flops, l.params, l.stats);
                               }
                               return out;
                             })
      .def("table", &render_table)
      .def("tsv", &render_tsv);

  m.def(
      "analyze",
      [](const ArchSpec& spec, int input) { return analyze(spec, input, input); },
      py::arg("spec"), py::arg("input") = 224);
  m.def("depth", &depth, py::arg("spec"));
  m.def("stride_map", &stride_map, py::arg("spec"));
  m.def(
      "receptive_field",
      [](const ArchSpec& spec) {
        std::vector<std::pair<std::int64_t, std::int64_t>> out;
        for (const auto& e : receptive_field(spec)) out.emplace_back(e.rf, e.jump);
        return out;
      },
      py::arg("spec"));

  py::class_<PyNetwork>(m, "Network")
      .def_property_readonly("spec", [](PyNetwork& n) { return n.net.spec; })
      .def_property_readonly("param_count", [](PyNetwork& n) { return n.net.param_count(); })
      .def("set_bn_mode",
           [](PyNetwork& n, const std::string& mode) { n.net.set_bn_mode(parse_bn_mode(mode)); })
      .def("forward",
           [](PyNetwork& n, const FloatArray& batch) {
             auto logits = forward_classifier(n.net, tensor_from_array(batch));
             return array_from_tensor(logits->t);
           })
      .def("features",
           [](PyNetwork& n, const FloatArray& batch) {
             py::dict out;
             for (auto& [name, value] : backbone_features(n.net, tensor_from_array(batch))) {
               out[py::str(name)] = array_from_tensor(value->t);
             }
             return out;
           })
      .def("param_names",
           [](PyNetwork& n) {
             std::vector<std::string> names;
             for (auto& [name, param, decay] : n.net.named_params()) names.push_back(name);
             return names;
           })
      .def("save",
           [](PyNetwork& n, const std::string& path, std::uint64_t iteration) {
             save_checkpoint(n.net, path, &n.state, iteration);
           },
           py::arg("path"), py::arg("iteration") = 0)
      .def("load",
           [](PyNetwork& n, const std::string& path, bool partial) {
             LoadResult r = load_checkpoint(n.net, path, partial, &n.state);
             return py::make_tuple(r.iteration, r.loaded, r.skipped);
           },
           py::arg("path"), py::arg("partial") = false)
      .def("train",
           [](PyNetwork& n, const FloatArray& images, const std::vector<int>& labels, int iters,
              int batch_size, std::uint64_t seed, float base_lr, float momentum,
              float weight_decay, int warmup_iters, float warmup_factor, bool freeze_bn,
              bool freeze_stage1, bool hflip) {
             py::buffer_info info = images.request();
             if (info.ndim != 4) throw Error("images must be (n, 3, h, w)");
             SynthDataset ds;
             ds.n_classes = n.net.n_classes();
             ds.image_shape = Shape4{1, static_cast<int>(info.shape[1]),
                                     static_cast<int>(info.shape[2]),
                                     static_cast<int>(info.shape[3])};
             ds.images.resize(static_cast<size_t>(info.size));
             std::memcpy(ds.images.data(), info.ptr, sizeof(float) * ds.images.size());
             ds.labels = labels;
             if (static_cast<std::int64_t>(labels.size()) != info.shape[0]) {
               throw Error("label count does not match the image count");
             }
             SgdConfig cfg = config_from_kwargs(base_lr, momentum, weight_decay, warmup_iters,
                                                warmup_factor, {}, 0.1f,
                                                std::max(iters, 1));
             TrainOptions opt;
             opt.iters = iters;
             opt.batch_size = batch_size;
             opt.seed = seed;
             opt.freeze_bn = freeze_bn;
             opt.freeze_stage1 = freeze_stage1;
             opt.hflip = hflip;
             TrainReport r = train_loop(n.net, ds, cfg, opt, &n.state);
             py::dict out;
             out["loss"] = r.loss;
             out["batch_acc"] = r.batch_acc;
             return out;
           },
           py::arg("images"), py::arg("labels"), py::arg("iters"), py::arg("batch_size") = 16,
           py::arg("seed") = 1, py::arg("base_lr") = 0.02f, py::arg("momentum") = 0.9f,
           py::arg("weight_decay") = 1e-4f, py::arg("warmup_iters") = 0,
           py::arg("warmup_factor") = 0.3f, py::arg("freeze_bn") = false,
           py::arg("freeze_stage1") = false, py::arg("hflip") = false)
      .def("accuracy", [](PyNetwork& n, const FloatArray& images, const std::vector<int>& labels) {
        py::buffer_info info = images.request();
        SynthDataset ds;
        ds.n_classes = n.net.n_classes();
        ds.image_shape = Shape4{1, static_cast<int>(info.shape[1]),
                                static_cast<int>(info.shape[2]),
                                static_cast<int>(info.shape[3])};
        ds.images.resize(static_cast<size_t>(info.size));
        std::memcpy(ds.images.data(), info.ptr, sizeof(float) * ds.images.size());
        ds.labels = labels;
        return evaluate_accuracy(n.net, ds, 0, ds.size());
      });

  m.def(
      "build_network",
      [](const ArchSpec& spec, int n_classes, std::uint64_t seed) {
        return PyNetwork{build_network(spec, n_classes, seed), {}};
      },
      py::arg("spec"), py::arg("n_classes") = 1000, py::arg("seed") = 0);

  py::class_<FpnNetwork>(m, "Fpn")
      .def_readonly("channels", &FpnNetwork::channels)
      .def_readonly("level_names", &FpnNetwork::level_names)
      .def_readonly("level_strides", &FpnNetwork::level_strides)
      .def("forward", [](FpnNetwork& fpn, const FloatArray& batch) {
        py::dict out;
        for (auto& [name, value] : fpn_forward(fpn, tensor_from_array(batch))) {
          out[py::str(name)] = array_from_tensor(value->t);
        }
        return out;
      });

  m.def("build_fpn", &build_fpn, py::arg("spec"), py::arg("channels") = 256, py::arg("seed") = 0);

  m.def(
      "synth_dataset",
      [](std::uint64_t seed, int n_samples, int n_classes, int hw) {
        SynthDataset ds = synth_dataset(seed, n_samples, n_classes, hw);
        py::array_t<float> images({n_samples, 3, hw, hw});
        std::memcpy(images.mutable_data(), ds.images.data(), sizeof(float) * ds.images.size());
        py::array_t<int> labels(n_samples);
        std::memcpy(labels.mutable_data(), ds.labels.data(), sizeof(int) * ds.labels.size());
        return py::make_tuple(images, labels);
      },
      py::arg("seed"), py::arg("n_samples"), py::arg("n_classes"), py::arg("hw"));

  m.def(
      "lr_at",
      [](int iter, float base_lr, float momentum, float weight_decay, int warmup_iters,
         float warmup_factor, std::vector<int> decay_iters, float decay_factor,
         int total_iters) {
        return lr_at(iter, config_from_kwargs(base_lr, momentum, weight_decay, warmup_iters,
                                              warmup_factor, std::move(decay_iters),
                                              decay_factor, total_iters));
      },
      py::arg("iter"), py::arg("base_lr") = 0.02f, py::arg("momentum") = 0.9f,
      py::arg("weight_decay") = 1e-4f, py::arg("warmup_iters") = 500,
      py::arg("warmup_factor") = 0.3f,
      py::arg("decay_iters") = std::vector<int>{120000, 160000},
      py::arg("decay_factor") = 0.1f, py::arg("total_iters") = 180000);

  m.def("gradcheck_ops", &gradcheck_op_names);
  m.def(
      "gradcheck",
      [](const std::string& op, std::uint64_t seed, int seeds, double eps) {
        return run_gradcheck(op, seed, seeds, eps).max_rel_err;
      },
      py::arg("op"), py::arg("seed") = 0, py::arg("seeds") = 20, py::arg("eps") = 1e-3);
  m.def(
      "network_gradcheck",
      [](const ArchSpec& spec, std::uint64_t seed, int n_params, double eps) {
        return network_grad_check(spec, seed, n_params, eps);
      },
      py::arg("spec"), py::arg("seed") = 3, py::arg("n_params") = 10, py::arg("eps") = 1e-3);
}
