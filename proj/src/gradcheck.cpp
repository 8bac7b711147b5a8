#include "detnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "detnet/rng.hpp"

namespace detnet {

namespace {

using DValue = ValuePtrT<double>;
using DTensor = Tensor4T<double>;

// Scalar = sum_i w[i] * x[i]; keeps the full Jacobian visible to the check.
DValue weighted_sum(const DValue& x, const std::vector<double>& w) {
  DTensor out(Shape4{1, 1, 1, 1});
  double acc = 0.0;
  for (size_t i = 0; i < x->t.data.size(); ++i) acc += x->t.data[i] * w[i];
  out.data[0] = acc;
  auto node = std::make_shared<ValueT<double>>();
  node->t = std::move(out);
  node->parents = {x};
  node->requires_grad = x->requires_grad;
  if (node->requires_grad) {
    node->backprop = [x, w](ValueT<double>& self) {
      if (!x->requires_grad) return;
      x->t.ensure_grad();
      for (size_t i = 0; i < w.size(); ++i) x->t.grad[i] += w[i] * self.t.grad[0];
    };
  }
  return node;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

DTensor random_tensor(Rng& rng, Shape4 shape, double lo = -1.0, double hi = 1.0) {
  DTensor t(shape);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Uniform values that stay away from zero, for ops with a kink at the origin.
DTensor random_tensor_off_zero(Rng& rng, Shape4 shape, double band = 0.05) {
  DTensor t(shape);
  for (auto& v : t.data) {
    double mag = rng.uniform(band, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Shuffled distinct levels with sub-level jitter; guarantees the pairwise
// gaps stay far above 2*eps so max-pool argmaxes are stable under the probe.
DTensor random_tensor_separated(Rng& rng, Shape4 shape) {
  DTensor t(shape);
  std::vector<std::int64_t> order(t.data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  rng.shuffle(order);
  for (size_t i = 0; i < t.data.size(); ++i) {
    t.data[i] = 0.1 * static_cast<double>(order[i]) + rng.uniform(0.0, 0.02);
  }
  return t;
}

}  // namespace

GradCheckReport finite_diff_check(const DiffOp& op, std::vector<DTensor> inputs, double eps) {
  // Analytic pass.
  std::vector<DValue> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(ValueT<double>::leaf(t, true));
  DValue out = op(leaves);

  Rng wrng(0x5eedf00d);
  std::vector<double> weights(out->t.data.size());
  for (auto& w : weights) w = wrng.uniform(-1.0, 1.0);
  DValue scalar = weighted_sum(out, weights);
  backward(scalar);

  auto eval = [&](const std::vector<DTensor>& probe) {
    std::vector<DValue> fresh;
    fresh.reserve(probe.size());
    for (const auto& t : probe) fresh.push_back(ValueT<double>::leaf(t, false));
    DValue y = op(fresh);
    double acc = 0.0;
    for (size_t i = 0; i < y->t.data.size(); ++i) acc += y->t.data[i] * weights[i];
    return acc;
  };

  GradCheckReport report;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    for (size_t i = 0; i < inputs[ti].data.size(); ++i) {
      std::vector<DTensor> probe = inputs;
      probe[ti].data[i] += eps;
      double f_plus = eval(probe);
      probe[ti].data[i] -= 2.0 * eps;
      double f_minus = eval(probe);
      double numeric = (f_plus - f_minus) / (2.0 * eps);
      double analytic = leaves[ti]->t.grad[i];
      report.max_rel_err = std::max(report.max_rel_err, rel_err(analytic, numeric));
      ++report.checked;
    }
  }
  return report;
}

namespace {

double check_conv(std::uint64_t seed, int k, int stride, int padding, int dilation,
                  bool bias, double eps) {
  Rng rng(seed);
  DTensor x = random_tensor(rng, {1, 2, 5, 5});
  DTensor w = random_tensor(rng, {3, 2, k, k});
  std::vector<DTensor> inputs{x, w};
  if (bias) inputs.push_back(random_tensor(rng, {1, 3, 1, 1}));
  auto op = [=](const std::vector<DValue>& in) {
    ConvParamsT<double> p;
    p.weight = in[1];
    if (bias) p.bias = in[2];
    p.stride = stride;
    p.padding = padding;
    p.dilation = dilation;
    return conv2d(in[0], p);
  };
  return finite_diff_check(op, std::move(inputs), eps).max_rel_err;
}

double check_batch_norm(std::uint64_t seed, BnMode mode, double eps) {
  Rng rng(seed);
  DTensor x = random_tensor(rng, {2, 3, 4, 4});
  DTensor gamma = random_tensor(rng, {1, 3, 1, 1}, 0.5, 1.5);
  DTensor beta = random_tensor(rng, {1, 3, 1, 1});
  std::vector<double> mean{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
  std::vector<double> var{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
  auto op = [=](const std::vector<DValue>& in) {
    BatchNormParamsT<double> p;
    p.gamma = in[1];
    p.beta = in[2];
    p.running_mean = mean;  // fresh copies per call keep the op pure
    p.running_var = var;
    p.mode = mode;
    return batch_norm(in[0], p);
  };
  return finite_diff_check(op, {x, gamma, beta}, eps).max_rel_err;
}

// Smallest |pre-activation| over the block's three ReLUs. Central differences
// are only meaningful where the composition is differentiable, so block seeds
// whose activations sit closer to a ReLU kink than the probe can reach are
// resampled. Runs on a copy; training-mode stat updates stay local.
double relu_margin(const BlockT<double>& proto, BnMode mode, const DValue& x) {
  BlockT<double> block = proto;
  block.set_bn_mode(mode);
  double margin = std::numeric_limits<double>::infinity();
  auto visit = [&margin](const DValue& v) {
    for (double d : v->t.data) margin = std::min(margin, std::abs(d));
  };
  auto pre1 = batch_norm(conv2d(x, block.conv1), block.bn1);
  visit(pre1);
  auto pre2 = batch_norm(conv2d(relu(pre1), block.conv2), block.bn2);
  visit(pre2);
  auto main = batch_norm(conv2d(relu(pre2), block.conv3), block.bn3);
  DValue shortcut = x;
  if (block.spec.has_projection()) {
    shortcut = batch_norm(conv2d(x, block.proj_conv), block.proj_bn);
  }
  visit(add(main, shortcut));
  return margin;
}

double check_block(std::uint64_t seed, BlockKind kind, BnMode mode, double eps) {
  BlockSpec spec;
  spec.kind = kind;
  spec.c_in = 4;
  spec.c_mid = 2;
  spec.c_out = kind == BlockKind::A ? 4 : 6;
  spec.stride = kind == BlockKind::C ? 2 : 1;
  spec.dilation = kind == BlockKind::C ? 1 : 2;

  // Small, smooth probe step; kinks are handled by the margin resampling.
  const double block_eps = std::min(eps, 1e-4);
  const double min_margin = 50.0 * block_eps;

  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(seed * 1000003ull + attempt * 7919ull + 1ull);
    BlockT<double> proto = make_block_t<double>(spec, rng);
    for (auto& [name, buf] : proto.named_buffers()) {
      for (auto& v : *buf) {
        v = name.find("var") != std::string::npos ? rng.uniform(0.5, 2.0)
                                                  : rng.uniform(-0.5, 0.5);
      }
    }
    std::vector<DTensor> inputs{random_tensor(rng, {1, spec.c_in, 4, 4})};
    auto params = proto.named_params();
    for (auto& [name, param, decay] : params) inputs.push_back(param->t);

    if (relu_margin(proto, mode, ValueT<double>::leaf(inputs[0])) < min_margin &&
        attempt < 64) {
      continue;
    }

    // Each call runs on a copy of the prototype: running-stat vectors are
    // copied (training mode stays pure) and every parameter node is rebound
    // to the harness leaves so gradients land on the checked inputs.
    auto op = [spec, proto, mode](const std::vector<DValue>& in) {
      BlockT<double> block = proto;
      block.set_bn_mode(mode);
      size_t j = 1;
      block.conv1.weight = in[j++];
      block.bn1.gamma = in[j++];
      block.bn1.beta = in[j++];
      block.conv2.weight = in[j++];
      block.bn2.gamma = in[j++];
      block.bn2.beta = in[j++];
      block.conv3.weight = in[j++];
      block.bn3.gamma = in[j++];
      block.bn3.beta = in[j++];
      if (spec.kind != BlockKind::A) {
        block.proj_conv.weight = in[j++];
        block.proj_bn.gamma = in[j++];
        block.proj_bn.beta = in[j++];
      }
      return block.forward(in[0]);
    };
    return finite_diff_check(op, std::move(inputs), block_eps).max_rel_err;
  }
}

struct NamedCheck {
  const char* name;
  double (*fn)(std::uint64_t seed, double eps);
};

const NamedCheck kChecks[] = {
    {"conv2d",
     [](std::uint64_t s, double e) { return check_conv(s, 3, 1, 1, 1, true, e); }},
    {"conv2d_dilated",
     [](std::uint64_t s, double e) { return check_conv(s, 3, 1, 2, 2, false, e); }},
    {"conv2d_strided",
     [](std::uint64_t s, double e) { return check_conv(s, 3, 2, 1, 1, true, e); }},
    {"conv2d_1x1",
     [](std::uint64_t s, double e) { return check_conv(s, 1, 1, 0, 1, false, e); }},
    {"batch_norm_frozen",
     [](std::uint64_t s, double e) { return check_batch_norm(s, BnMode::kFrozen, e); }},
    {"batch_norm_training",
     [](std::uint64_t s, double e) { return check_batch_norm(s, BnMode::kTraining, e); }},
    {"relu",
     [](std::uint64_t s, double e) {
       Rng rng(s);
       DTensor x = random_tensor_off_zero(rng, {1, 2, 4, 4});
       return finite_diff_check([](const std::vector<DValue>& in) { return relu(in[0]); },
                                {x}, e)
           .max_rel_err;
     }},
    {"max_pool",
     [](std::uint64_t s, double e) {
       Rng rng(s);
       DTensor x = random_tensor_separated(rng, {1, 2, 6, 6});
       double a = finite_diff_check(
                      [](const std::vector<DValue>& in) { return max_pool(in[0], 2, 2, 0); },
                      {x}, e)
                      .max_rel_err;
       DTensor y = random_tensor_separated(rng, {1, 1, 7, 7});
       double b = finite_diff_check(
                      [](const std::vector<DValue>& in) { return max_pool(in[0], 3, 2, 1); },
                      {y}, e)
                      .max_rel_err;
       return std::max(a, b);
     }},
    {"global_avg_pool",
     [](std::uint64_t s, double e) {
       Rng rng(s);
       DTensor x = random_tensor(rng, {2, 3, 4, 4});
       return finite_diff_check(
                  [](const std::vector<DValue>& in) { return global_avg_pool(in[0]); }, {x}, e)
           .max_rel_err;
     }},
    {"linear",
     [](std::uint64_t s, double e) {
       Rng rng(s);
       DTensor x = random_tensor(rng, {3, 4, 1, 1});
       DTensor w = random_tensor(rng, {5, 4, 1, 1});
       DTensor b = random_tensor(rng, {1, 5, 1, 1});
       return finite_diff_check(
                  [](const std::vector<DValue>& in) { return linear(in[0], in[1], in[2]); },
                  {x, w, b}, e)
           .max_rel_err;
     }},
    {"add",
     [](std::uint64_t s, double e) {
       Rng rng(s);
       DTensor a = random_tensor(rng, {1, 2, 3, 3});
       DTensor b = random_tensor(rng, {1, 2, 3, 3});
       return finite_diff_check(
                  [](const std::vector<DValue>& in) { return add(in[0], in[1]); }, {a, b}, e)
           .max_rel_err;
     }},
    {"upsample_nearest2x",
     [](std::uint64_t s, double e) {
       Rng rng(s);
       DTensor x = random_tensor(rng, {1, 2, 3, 3});
       return finite_diff_check(
                  [](const std::vector<DValue>& in) { return upsample_nearest2x(in[0]); }, {x},
                  e)
           .max_rel_err;
     }},
    {"softmax_cross_entropy",
     [](std::uint64_t s, double e) {
       Rng rng(s);
       DTensor logits = random_tensor(rng, {4, 5, 1, 1}, -2.0, 2.0);
       std::vector<int> labels;
       for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.below(5)));
       return finite_diff_check(
                  [labels](const std::vector<DValue>& in) {
                    return softmax_cross_entropy(in[0], labels);
                  },
                  {logits}, e)
           .max_rel_err;
     }},
    {"block_A",
     [](std::uint64_t s, double e) { return check_block(s, BlockKind::A, BnMode::kFrozen, e); }},
    {"block_B",
     [](std::uint64_t s, double e) { return check_block(s, BlockKind::B, BnMode::kFrozen, e); }},
    {"block_C",
     [](std::uint64_t s, double e) { return check_block(s, BlockKind::C, BnMode::kFrozen, e); }},
    {"block_A_training",
     [](std::uint64_t s, double e) { return check_block(s, BlockKind::A, BnMode::kTraining, e); }},
    {"block_B_training",
     [](std::uint64_t s, double e) { return check_block(s, BlockKind::B, BnMode::kTraining, e); }},
    {"block_C_training",
     [](std::uint64_t s, double e) { return check_block(s, BlockKind::C, BnMode::kTraining, e); }},
};

}  // namespace

std::vector<std::string> gradcheck_op_names() {
  std::vector<std::string> names;
  for (const auto& c : kChecks) names.emplace_back(c.name);
  return names;
}

OpCheckResult run_gradcheck(const std::string& op, std::uint64_t seed_base, int n_seeds,
                            double eps) {
  for (const auto& c : kChecks) {
    if (op == c.name) {
      OpCheckResult result{op, 0.0, n_seeds};
      for (int i = 0; i < n_seeds; ++i) {
        result.max_rel_err = std::max(result.max_rel_err, c.fn(seed_base + i, eps));
      }
      return result;
    }
  }
  throw Error("gradcheck: unknown op '" + op + "'");
}

double network_grad_check(const ArchSpec& spec, std::uint64_t seed, int n_params, double eps) {
  Rng rng(seed);
  NetworkT<double> net = build_network_t<double>(spec, 5, seed);
  net.set_bn_mode(BnMode::kFrozen);
  for (auto& [name, buf] : net.named_buffers()) {
    for (auto& v : *buf) {
      v = name.find("var") != std::string::npos ? rng.uniform(0.5, 2.0) : rng.uniform(-0.5, 0.5);
    }
  }
  // Sub-unit gammas keep the residual chain from inflating the logits; a
  // saturated softmax would zero every gradient and make the comparison
  // vacuous under the relative-error floor.
  for (auto& [name, param, decay] : net.named_params()) {
    if (name.find("gamma") != std::string::npos) {
      for (auto& v : param->t.data) v = rng.uniform(0.3, 0.7);
    } else if (name.find("beta") != std::string::npos) {
      for (auto& v : param->t.data) v = rng.uniform(-0.3, 0.3);
    }
  }

  DTensor input = random_tensor(rng, {2, 3, 32, 32});
  std::vector<int> labels{static_cast<int>(rng.below(5)), static_cast<int>(rng.below(5))};

  auto loss_of = [&]() {
    auto logits = forward_classifier(net, ValueT<double>::leaf(input));
    return softmax_cross_entropy(logits, labels);
  };

  net.zero_grad();
  auto loss = loss_of();
  backward(loss);

  auto params = net.named_params();
  double max_err = 0.0;
  double max_analytic = 0.0;
  for (int i = 0; i < n_params; ++i) {
    auto& [name, param, decay] = params[rng.below(params.size())];
    size_t j = static_cast<size_t>(rng.below(param->t.data.size()));
    double analytic = param->t.grad[j];
    double saved = param->t.data[j];
    param->t.data[j] = saved + eps;
    double f_plus = loss_of()->t.data[0];
    param->t.data[j] = saved - eps;
    double f_minus = loss_of()->t.data[0];
    param->t.data[j] = saved;
    double numeric = (f_plus - f_minus) / (2.0 * eps);
    max_err = std::max(max_err, rel_err(analytic, numeric));
    max_analytic = std::max(max_analytic, std::abs(analytic));
  }
  if (max_analytic < 1e-7) {
    throw Error("network_grad_check: sampled gradients all vanish (max |g| = " +
                std::to_string(max_analytic) + "); the comparison would be vacuous");
  }
  return max_err;
}

}  // namespace detnet
