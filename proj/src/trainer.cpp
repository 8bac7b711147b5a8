#include "detnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "detnet/rng.hpp"

namespace detnet {

void SgdConfig::validate() const {
  if (total_iters <= 0) throw Error("sgd: total_iters must be positive");
  if (warmup_iters < 0) throw Error("sgd: warmup_iters must be non-negative");
  for (size_t i = 0; i < decay_iters.size(); ++i) {
    if (i > 0 && decay_iters[i] <= decay_iters[i - 1]) {
      throw Error("sgd: decay_iters must be strictly increasing");
    }
    if (decay_iters[i] >= total_iters) {
      throw Error("sgd: decay iteration " + std::to_string(decay_iters[i]) +
                  " is not below total_iters " + std::to_string(total_iters));
    }
  }
}

float lr_at(int iter, const SgdConfig& cfg) {
  cfg.validate();
  if (iter < 0 || iter >= cfg.total_iters) {
    throw Error("lr_at: iteration " + std::to_string(iter) + " outside [0, " +
                std::to_string(cfg.total_iters) + ")");
  }
  if (iter < cfg.warmup_iters) return cfg.warmup_factor * cfg.base_lr;
  float lr = cfg.base_lr;
  for (int milestone : cfg.decay_iters) {
    if (iter >= milestone) lr *= cfg.decay_factor;
  }
  return lr;
}

void sgd_step(std::vector<float>& param, const std::vector<float>& grad,
              std::vector<float>& momentum_state, float lr, float momentum,
              float weight_decay) {
  if (param.size() != grad.size() || param.size() != momentum_state.size()) {
    throw Error("sgd_step: size mismatch (param " + std::to_string(param.size()) + ", grad " +
                std::to_string(grad.size()) + ", momentum " +
                std::to_string(momentum_state.size()) + ")");
  }
  for (size_t i = 0; i < param.size(); ++i) {
    float g = grad[i] + weight_decay * param[i];
    momentum_state[i] = momentum * momentum_state[i] + g;
    param[i] -= lr * momentum_state[i];
  }
}

SynthDataset synth_dataset(std::uint64_t seed, int n_samples, int n_classes, int hw) {
  if (n_samples <= 0 || n_classes <= 0) {
    throw Error("synth_dataset: sample and class counts must be positive");
  }
  if (hw % 32 != 0) {
    throw Error("synth_dataset: image size must be divisible by 32, got " + std::to_string(hw));
  }
  SynthDataset ds;
  ds.n_classes = n_classes;
  ds.image_shape = Shape4{1, 3, hw, hw};
  ds.images.resize(static_cast<size_t>(n_samples) * ds.image_shape.numel());
  ds.labels.resize(static_cast<size_t>(n_samples));

  Rng rng(seed);
  const double two_pi = 6.283185307179586476925286766559;
  const float channel_gain[3] = {1.0f, 0.8f, 0.6f};
  for (int s = 0; s < n_samples; ++s) {
    const int label = s % n_classes;
    ds.labels[static_cast<size_t>(s)] = label;
    // Class identity picks a (frequency, orientation) pair; the two mirrored
    // components get independent random phases per sample.
    const double freq = 2.0 + static_cast<double>(label % 5);
    const double theta = 0.35 + 0.7 * static_cast<double>(label / 5);
    const double ax = two_pi * freq * std::cos(theta) / hw;
    const double by = two_pi * freq * std::sin(theta) / hw;
    const double phase1 = rng.uniform(0.0, two_pi);
    const double phase2 = rng.uniform(0.0, two_pi);
    const double amplitude = rng.uniform(0.8, 1.2);

    float* img = ds.images.data() + static_cast<std::int64_t>(s) * ds.image_shape.numel();
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
          double xc = x - hw / 2.0;
          double yc = y - hw / 2.0;
          double v = std::cos(ax * xc + by * yc + phase1) + std::cos(ax * xc - by * yc + phase2);
          double noisy = amplitude * channel_gain[c] * v + rng.normal(0.0, 0.3);
          img[(static_cast<std::int64_t>(c) * hw + y) * hw + x] = static_cast<float>(noisy);
        }
      }
    }
  }
  return ds;
}

namespace {

Tensor4 assemble_batch(const SynthDataset& ds, const std::vector<int>& indices,
                       const std::vector<bool>& flip, std::vector<int>* labels) {
  const int hw = ds.image_shape.h;
  Tensor4 batch(Shape4{static_cast<int>(indices.size()), 3, hw, hw});
  labels->clear();
  for (size_t bi = 0; bi < indices.size(); ++bi) {
    const float* src = ds.image(indices[bi]);
    labels->push_back(ds.labels[static_cast<size_t>(indices[bi])]);
    float* dst = batch.data.data() + static_cast<std::int64_t>(bi) * ds.image_shape.numel();
    if (!flip.empty() && flip[bi]) {
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < hw; ++y) {
          const float* row = src + (static_cast<std::int64_t>(c) * hw + y) * hw;
          float* out = dst + (static_cast<std::int64_t>(c) * hw + y) * hw;
          for (int x = 0; x < hw; ++x) out[x] = row[hw - 1 - x];
        }
      }
    } else {
      std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(ds.image_shape.numel()));
    }
  }
  return batch;
}

int argmax_row(const Tensor4& logits, int row) {
  int best = 0;
  float best_v = logits.at(row, 0, 0, 0);
  for (int j = 1; j < logits.shape.c; ++j) {
    if (logits.at(row, j, 0, 0) > best_v) {
      best_v = logits.at(row, j, 0, 0);
      best = j;
    }
  }
  return best;
}

}  // namespace

TrainReport train_loop(Network& net, const SynthDataset& dataset, const SgdConfig& cfg,
                       const TrainOptions& opt, SgdState* state) {
  cfg.validate();
  if (opt.batch_size <= 0) throw Error("train_loop: batch size must be positive");
  if (dataset.size() == 0) throw Error("train_loop: empty dataset");

  net.set_bn_mode(opt.freeze_bn ? BnMode::kFrozen : BnMode::kTraining);
  auto params = net.named_params();

  SgdState local_state;
  SgdState* sgd = state ? state : &local_state;
  if (sgd->momentum.empty()) {
    for (auto& [name, param, decay] : params) {
      sgd->momentum.emplace_back(name, std::vector<float>(param->t.data.size(), 0.0f));
    }
  }

  auto frozen = [&](const std::string& name, bool bn_param) {
    if (opt.freeze_stage1 && name.rfind("stage1.", 0) == 0) return true;
    if (opt.freeze_bn && bn_param) return true;
    return false;
  };

  Rng rng(opt.seed);
  std::vector<int> order(static_cast<size_t>(dataset.size()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  size_t cursor = 0;

  TrainReport report;
  report.iters = opt.iters;
  std::vector<int> batch_indices;
  std::vector<bool> flips;
  std::vector<int> labels;

  for (int it = 0; it < opt.iters; ++it) {
    batch_indices.clear();
    flips.clear();
    for (int b = 0; b < opt.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch_indices.push_back(order[cursor++]);
      flips.push_back(opt.hflip && rng.uniform() < 0.5);
    }
    Tensor4 batch = assemble_batch(dataset, batch_indices, flips, &labels);

    net.zero_grad();
    auto logits = forward_classifier(net, batch);
    auto loss = softmax_cross_entropy(logits, labels);
    const float loss_v = loss->t.data[0];
    if (!std::isfinite(loss_v)) {
      throw Error("train_loop: non-finite loss " + std::to_string(loss_v) + " at iteration " +
                  std::to_string(it) + "; aborting");
    }
    backward(loss);

    const float lr = lr_at(std::min(opt.start_iter + it, cfg.total_iters - 1), cfg);
    for (size_t pi = 0; pi < params.size(); ++pi) {
      auto& [name, param, decay_ok] = params[pi];
      if (frozen(name, !decay_ok)) continue;
      const float wd = (decay_ok || cfg.decay_bn_params) ? cfg.weight_decay : 0.0f;
      sgd_step(param->t.data, param->t.grad, sgd->momentum[pi].second, lr, cfg.momentum, wd);
    }

    int correct = 0;
    for (int b = 0; b < opt.batch_size; ++b) {
      if (argmax_row(logits->t, b) == labels[static_cast<size_t>(b)]) ++correct;
    }
    report.loss.push_back(loss_v);
    report.batch_acc.push_back(static_cast<float>(correct) / static_cast<float>(opt.batch_size));
  }
  return report;
}

float evaluate_accuracy(Network& net, const SynthDataset& dataset, int begin, int end,
                        int batch_size) {
  if (begin < 0 || end > dataset.size() || begin >= end) {
    throw Error("evaluate_accuracy: bad range");
  }
  BnMode prev = net.bn1.mode;
  net.set_bn_mode(BnMode::kFrozen);
  int correct = 0;
  std::vector<int> labels;
  for (int start = begin; start < end; start += batch_size) {
    std::vector<int> indices;
    for (int i = start; i < std::min(end, start + batch_size); ++i) indices.push_back(i);
    Tensor4 batch = assemble_batch(dataset, indices, {}, &labels);
    auto logits = forward_classifier(net, batch);
    for (size_t b = 0; b < indices.size(); ++b) {
      if (argmax_row(logits->t, static_cast<int>(b)) == labels[b]) ++correct;
    }
  }
  net.set_bn_mode(prev);
  return static_cast<float>(correct) / static_cast<float>(end - begin);
}

// ---- checkpoint I/O ----

namespace {

constexpr char kMagic[8] = {'D', 'N', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32s(std::ostream& os, const std::vector<float>& v) {
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * 4));
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

struct SavedTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

void write_tensor(std::ostream& os, const std::string& name,
                  const std::vector<std::uint32_t>& dims, const std::vector<float>& values) {
  if (name.size() > 0xffff) throw Error("checkpoint: tensor name too long: " + name);
  put_u16(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  os.put(static_cast<char>(dims.size()));
  for (auto d : dims) put_u32(os, d);
  put_f32s(os, values);
}

std::vector<std::uint32_t> shape_dims(const Shape4& s) {
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
          static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
}

}  // namespace

void save_checkpoint(Network& net, const std::string& path, const SgdState* state,
                     std::uint64_t iteration) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("checkpoint: cannot open '" + path + "' for writing");

  auto params = net.named_params();
  auto buffers = net.named_buffers();
  std::uint32_t count = static_cast<std::uint32_t>(params.size() + buffers.size() +
                                                   (state ? state->momentum.size() : 0));

  os.write(kMagic, 8);
  put_u32(os, kVersion);
  put_u32(os, count);
  for (auto& [name, param, decay] : params) {
    write_tensor(os, name, shape_dims(param->t.shape), param->t.data);
  }
  for (auto& [name, buf] : buffers) {
    write_tensor(os, name, {static_cast<std::uint32_t>(buf->size())}, *buf);
  }
  if (state) {
    for (auto& [name, buf] : state->momentum) {
      write_tensor(os, "momentum/" + name, {static_cast<std::uint32_t>(buf.size())}, buf);
    }
  }
  put_u64(os, iteration);
  if (!os) throw Error("checkpoint: write failed for '" + path + "'");
}

LoadResult load_checkpoint(Network& net, const std::string& path, bool partial, SgdState* state) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open '" + path + "'");

  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw Error("checkpoint: bad magic in '" + path + "' (not a DNETCKPT file)");
  }
  std::uint32_t version = get_u32(is);
  if (version != kVersion) {
    throw Error("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                std::to_string(kVersion) + ")");
  }
  std::uint32_t count = get_u32(is);

  std::unordered_map<std::string, SavedTensor> saved;
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = get_u16(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    int rank = is.get();
    if (rank < 0) throw Error("checkpoint: truncated file '" + path + "'");
    SavedTensor t;
    std::uint64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      t.dims.push_back(get_u32(is));
      numel *= t.dims.back();
    }
    t.values.resize(numel);
    is.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(numel * 4));
    if (!is) throw Error("checkpoint: truncated tensor '" + name + "' in '" + path + "'");
    order.push_back(name);
    saved.emplace(std::move(name), std::move(t));
  }
  LoadResult result;
  result.iteration = get_u64(is);

  auto params = net.named_params();
  auto buffers = net.named_buffers();

  auto fetch = [&](const std::string& name, const std::vector<std::uint32_t>& want_dims,
                   std::vector<float>* dst) {
    auto it = saved.find(name);
    if (it == saved.end()) {
      if (partial) return false;
      throw Error("checkpoint: missing tensor '" + name + "' in '" + path + "'");
    }
    if (it->second.dims != want_dims) {
      if (partial) return false;
      std::string got = "(", want = "(";
      for (auto d : it->second.dims) got += std::to_string(d) + ",";
      for (auto d : want_dims) want += std::to_string(d) + ",";
      throw Error("checkpoint: shape mismatch for '" + name + "': file " + got + ") vs network " +
                  want + ")");
    }
    *dst = it->second.values;
    return true;
  };

  std::vector<float> tmp;
  for (auto& [name, param, decay] : params) {
    if (fetch(name, shape_dims(param->t.shape), &tmp)) {
      param->t.data = tmp;
      result.loaded.push_back(name);
    } else {
      result.skipped.push_back(name);
    }
  }
  for (auto& [name, buf] : buffers) {
    if (fetch(name, {static_cast<std::uint32_t>(buf->size())}, &tmp)) {
      *buf = tmp;
      result.loaded.push_back(name);
    } else {
      result.skipped.push_back(name);
    }
  }
  if (state) {
    // Momentum buffers are optional; absent ones resume from zero.
    state->momentum.clear();
    for (auto& [name, param, decay] : params) {
      std::vector<float> m(param->t.data.size(), 0.0f);
      auto it = saved.find("momentum/" + name);
      if (it != saved.end() && it->second.values.size() == m.size()) m = it->second.values;
      state->momentum.emplace_back(name, std::move(m));
    }
  }

  if (!partial) {
    // Reject stray tensors so a wrong-architecture checkpoint fails loudly.
    std::unordered_map<std::string, bool> known;
    for (auto& [name, param, decay] : params) known[name] = true;
    for (auto& [name, buf] : buffers) known[name] = true;
    for (const auto& name : order) {
      if (name.rfind("momentum/", 0) == 0) continue;
      if (!known.count(name)) {
        throw Error("checkpoint: unexpected tensor '" + name + "' for this architecture");
      }
    }
  }
  return result;
}

}  // namespace detnet
