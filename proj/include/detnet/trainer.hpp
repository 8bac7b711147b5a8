#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detnet/network.hpp"

namespace detnet {

// Schedule structure: constant warmup factor for the first warmup_iters,
// then the base rate decayed by decay_factor at each milestone.
struct SgdConfig {
  float base_lr = 0.02f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  int warmup_iters = 500;
  float warmup_factor = 0.3f;
  std::vector<int> decay_iters{120000, 160000};
  float decay_factor = 0.1f;
  int total_iters = 180000;
  bool decay_bn_params = false;  // weight decay normally skips BN affine terms

  void validate() const;
};

float lr_at(int iter, const SgdConfig& cfg);

// g' = grad + weight_decay * param; v' = momentum * v + g';
// param' = param - lr * v'.
void sgd_step(std::vector<float>& param, const std::vector<float>& grad,
              std::vector<float>& momentum_state, float lr, float momentum,
              float weight_decay);

// Procedural classification task: each class is a distinct
// frequency/orientation plaid with per-sample random phases, amplitude
// jitter and pixel noise. Labels are assigned round-robin, so the histogram
// is uniform up to one sample. Patterns are mirror-symmetric in distribution,
// which keeps horizontal-flip augmentation label-preserving.
struct SynthDataset {
  int n_classes = 0;
  Shape4 image_shape;  // (1, 3, hw, hw)
  std::vector<float> images;  // n_samples contiguous images
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  const float* image(int i) const {
    return images.data() + static_cast<std::int64_t>(i) * image_shape.numel();
  }
};

SynthDataset synth_dataset(std::uint64_t seed, int n_samples, int n_classes, int hw);

struct TrainOptions {
  int batch_size = 16;
  std::uint64_t seed = 1;
  int iters = 3000;
  bool freeze_bn = false;      // frozen statistics, BN affine excluded from updates
  bool freeze_stage1 = false;  // conv1 + bn1 excluded from updates
  bool hflip = false;          // horizontal flip augmentation, p = 1/2
  int start_iter = 0;          // resumes the lr schedule at this point
};

struct TrainReport {
  std::vector<float> loss;       // one entry per iteration
  std::vector<float> batch_acc;  // training accuracy of each batch
  int iters = 0;
};

// Momentum buffers keyed by parameter name in network order.
struct SgdState {
  std::vector<std::pair<std::string, std::vector<float>>> momentum;
};

TrainReport train_loop(Network& net, const SynthDataset& dataset, const SgdConfig& cfg,
                       const TrainOptions& opt, SgdState* state = nullptr);

// Accuracy of `net` on the dataset slice [begin, end), batched inference
// with frozen batch norm.
float evaluate_accuracy(Network& net, const SynthDataset& dataset, int begin, int end,
                        int batch_size = 32);

// Checkpoint file: little-endian, magic "DNETCKPT", u32 version 1,
// u32 tensor count, then per tensor u16 name length + UTF-8 name, u8 rank,
// u32 dims, raw f32 data; trailing u64 iteration counter. Momentum buffers
// are stored as tensors named "momentum/<param>".
void save_checkpoint(Network& net, const std::string& path, const SgdState* state = nullptr,
                     std::uint64_t iteration = 0);

inline void save_weights(Network& net, const std::string& path) {
  save_checkpoint(net, path);
}

struct LoadResult {
  std::uint64_t iteration = 0;
  std::vector<std::string> loaded;
  std::vector<std::string> skipped;  // partial loads only
};

// Strict mode requires names and shapes to match exactly and reports the
// first offender; partial mode loads the name+shape intersection and lists
// the rest in `skipped`.
LoadResult load_checkpoint(Network& net, const std::string& path, bool partial = false,
                           SgdState* state = nullptr);

inline LoadResult load_weights(Network& net, const std::string& path) {
  return load_checkpoint(net, path);
}

}  // namespace detnet
