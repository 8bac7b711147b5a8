#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "detnet/kernels.hpp"
#include "detnet/tensor.hpp"

// Reverse-mode autodiff over the kernels. Each operation returns a new graph
// node holding its output tensor; backward() replays the recorded nodes in
// reverse topological order and accumulates gradients into every node that
// asked for them (values used twice receive the sum of both contributions).

namespace detnet {

template <typename T>
struct ValueT;

template <typename T>
using ValuePtrT = std::shared_ptr<ValueT<T>>;

template <typename T>
struct ValueT {
  Tensor4T<T> t;
  bool requires_grad = false;
  std::vector<ValuePtrT<T>> parents;
  std::function<void(ValueT<T>&)> backprop;

  static ValuePtrT<T> leaf(Tensor4T<T> tensor, bool requires_grad = false) {
    auto v = std::make_shared<ValueT<T>>();
    v->t = std::move(tensor);
    v->requires_grad = requires_grad;
    if (requires_grad) v->t.ensure_grad();
    return v;
  }
};

using Value = ValueT<float>;
using ValuePtr = ValuePtrT<float>;

// One record per FLOPs-bearing layer (conv/linear) executed in a forward
// pass; multiply-add counts are recomputed from the actual tensor shapes.
struct TraceEntry {
  std::string name;
  Shape4 out;
  std::int64_t macs = 0;
};

struct ForwardTrace {
  std::vector<TraceEntry> entries;
};

template <typename T>
struct ConvParamsT {
  ValuePtrT<T> weight;  // (c_out, c_in, kh, kw)
  ValuePtrT<T> bias;    // optional, numel == c_out; null disables
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

using ConvParams = ConvParamsT<float>;

template <typename T>
struct BatchNormParamsT {
  ValuePtrT<T> gamma;  // (1, c, 1, 1)
  ValuePtrT<T> beta;   // (1, c, 1, 1)
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.9);
  BnMode mode = BnMode::kFrozen;
};

using BatchNormParams = BatchNormParamsT<float>;

namespace graph_detail {

template <typename T>
ValuePtrT<T> make_node(Tensor4T<T> out, std::vector<ValuePtrT<T>> parents,
                       std::function<void(ValueT<T>&)> backprop) {
  auto v = std::make_shared<ValueT<T>>();
  v->t = std::move(out);
  v->parents = std::move(parents);
  for (const auto& p : v->parents) {
    if (p->requires_grad) {
      v->requires_grad = true;
      break;
    }
  }
  if (v->requires_grad) v->backprop = std::move(backprop);
  return v;
}

}  // namespace graph_detail

template <typename T>
ValuePtrT<T> conv2d(const ValuePtrT<T>& x, const ConvParamsT<T>& p,
                    ForwardTrace* trace = nullptr, const std::string& name = {}) {
  ConvMeta m{p.stride, p.padding, p.dilation};
  Tensor4T<T> out = conv2d_forward<T>(x->t, p.weight->t, p.bias ? &p.bias->t : nullptr, m);
  if (trace) {
    const Shape4& ws = p.weight->t.shape;
    trace->entries.push_back({name, out.shape,
                              static_cast<std::int64_t>(out.shape.h) * out.shape.w *
                                  ws.n * ws.c * ws.h * ws.w});
  }
  std::vector<ValuePtrT<T>> parents{x, p.weight};
  if (p.bias) parents.push_back(p.bias);
  ValuePtrT<T> weight = p.weight, bias = p.bias;
  auto node = graph_detail::make_node<T>(
      std::move(out), std::move(parents), [x, weight, bias, m](ValueT<T>& self) {
        std::vector<T>* gx = nullptr;
        if (x->requires_grad) {
          x->t.ensure_grad();
          gx = &x->t.grad;
        }
        std::vector<T>* gw = nullptr;
        if (weight->requires_grad) {
          weight->t.ensure_grad();
          gw = &weight->t.grad;
        }
        std::vector<T>* gb = nullptr;
        if (bias && bias->requires_grad) {
          bias->t.ensure_grad();
          gb = &bias->t.grad;
        }
        conv2d_backward<T>(x->t, weight->t, m, self.t.shape, self.t.grad.data(), gx, gw, gb);
      });
  return node;
}

template <typename T>
ValuePtrT<T> batch_norm(const ValuePtrT<T>& x, BatchNormParamsT<T>& p) {
  auto saved = std::make_shared<BnSaved<T>>();
  Tensor4T<T> out = batch_norm_forward<T>(x->t, p.gamma->t.data, p.beta->t.data,
                                          p.running_mean, p.running_var, p.eps, p.momentum,
                                          p.mode, saved.get());
  ValuePtrT<T> gamma = p.gamma, beta = p.beta;
  BnMode mode = p.mode;
  return graph_detail::make_node<T>(
      std::move(out), {x, gamma, beta}, [x, gamma, beta, saved, mode](ValueT<T>& self) {
        std::vector<T>* gx = nullptr;
        if (x->requires_grad) {
          x->t.ensure_grad();
          gx = &x->t.grad;
        }
        std::vector<T>* gg = nullptr;
        if (gamma->requires_grad) {
          gamma->t.ensure_grad();
          gg = &gamma->t.grad;
        }
        std::vector<T>* gb = nullptr;
        if (beta->requires_grad) {
          beta->t.ensure_grad();
          gb = &beta->t.grad;
        }
        batch_norm_backward<T>(x->t, gamma->t.data, *saved, mode, self.t.grad.data(), gx, gg,
                               gb);
      });
}

template <typename T>
ValuePtrT<T> relu(const ValuePtrT<T>& x) {
  Tensor4T<T> out = relu_forward<T>(x->t);
  return graph_detail::make_node<T>(std::move(out), {x}, [x](ValueT<T>& self) {
    if (!x->requires_grad) return;
    x->t.ensure_grad();
    for (size_t i = 0; i < self.t.grad.size(); ++i) {
      if (x->t.data[i] > T(0)) x->t.grad[i] += self.t.grad[i];
    }
  });
}

template <typename T>
ValuePtrT<T> max_pool(const ValuePtrT<T>& x, int k, int stride, int padding) {
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  Tensor4T<T> out = max_pool_forward<T>(x->t, k, stride, padding, argmax.get());
  return graph_detail::make_node<T>(std::move(out), {x}, [x, argmax](ValueT<T>& self) {
    if (!x->requires_grad) return;
    x->t.ensure_grad();
    for (size_t i = 0; i < self.t.grad.size(); ++i) {
      x->t.grad[static_cast<size_t>((*argmax)[i])] += self.t.grad[i];
    }
  });
}

template <typename T>
ValuePtrT<T> global_avg_pool(const ValuePtrT<T>& x) {
  Tensor4T<T> out = global_avg_pool_forward<T>(x->t);
  const std::int64_t plane = static_cast<std::int64_t>(x->t.shape.h) * x->t.shape.w;
  return graph_detail::make_node<T>(std::move(out), {x}, [x, plane](ValueT<T>& self) {
    if (!x->requires_grad) return;
    x->t.ensure_grad();
    const T inv = T(1) / static_cast<T>(plane);
    std::int64_t o = 0;
    for (int n = 0; n < x->t.shape.n; ++n) {
      for (int c = 0; c < x->t.shape.c; ++c, ++o) {
        const T g = self.t.grad[static_cast<size_t>(o)] * inv;
        T* dst = x->t.grad.data() + x->t.index(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) dst[i] += g;
      }
    }
  });
}

template <typename T>
ValuePtrT<T> linear(const ValuePtrT<T>& x, const ValuePtrT<T>& w, const ValuePtrT<T>& b,
                    ForwardTrace* trace = nullptr, const std::string& name = {}) {
  Tensor4T<T> out = linear_forward<T>(x->t, w->t, b ? &b->t : nullptr);
  if (trace) {
    trace->entries.push_back({name, out.shape,
                              static_cast<std::int64_t>(w->t.shape.n) * w->t.shape.c});
  }
  std::vector<ValuePtrT<T>> parents{x, w};
  if (b) parents.push_back(b);
  return graph_detail::make_node<T>(std::move(out), std::move(parents), [x, w, b](ValueT<T>& self) {
    std::vector<T>* gx = nullptr;
    if (x->requires_grad) {
      x->t.ensure_grad();
      gx = &x->t.grad;
    }
    std::vector<T>* gw = nullptr;
    if (w->requires_grad) {
      w->t.ensure_grad();
      gw = &w->t.grad;
    }
    std::vector<T>* gb = nullptr;
    if (b && b->requires_grad) {
      b->t.ensure_grad();
      gb = &b->t.grad;
    }
    linear_backward<T>(x->t, w->t, self.t.grad.data(), gx, gw, gb);
  });
}

template <typename T>
ValuePtrT<T> add(const ValuePtrT<T>& a, const ValuePtrT<T>& b) {
  Tensor4T<T> out = add_forward<T>(a->t, b->t);
  return graph_detail::make_node<T>(std::move(out), {a, b}, [a, b](ValueT<T>& self) {
    for (const auto& side : {a, b}) {
      if (!side->requires_grad) continue;
      side->t.ensure_grad();
      for (size_t i = 0; i < self.t.grad.size(); ++i) side->t.grad[i] += self.t.grad[i];
    }
  });
}

template <typename T>
ValuePtrT<T> upsample_nearest2x(const ValuePtrT<T>& x) {
  Tensor4T<T> out = upsample_nearest2x_forward<T>(x->t);
  return graph_detail::make_node<T>(std::move(out), {x}, [x](ValueT<T>& self) {
    if (!x->requires_grad) return;
    x->t.ensure_grad();
    Tensor4T<T> gout(self.t.shape, self.t.grad);
    for (int n = 0; n < x->t.shape.n; ++n) {
      for (int c = 0; c < x->t.shape.c; ++c) {
        for (int h = 0; h < x->t.shape.h; ++h) {
          for (int w = 0; w < x->t.shape.w; ++w) {
            x->t.grad[static_cast<size_t>(x->t.index(n, c, h, w))] +=
                gout.at(n, c, 2 * h, 2 * w) + gout.at(n, c, 2 * h, 2 * w + 1) +
                gout.at(n, c, 2 * h + 1, 2 * w) + gout.at(n, c, 2 * h + 1, 2 * w + 1);
          }
        }
      }
    }
  });
}

template <typename T>
ValuePtrT<T> softmax_cross_entropy(const ValuePtrT<T>& logits, const std::vector<int>& labels) {
  auto probs = std::make_shared<std::vector<T>>();
  T loss = softmax_cross_entropy_forward<T>(logits->t, labels, probs.get());
  Tensor4T<T> out(Shape4{1, 1, 1, 1});
  out.data[0] = loss;
  const int n = logits->t.shape.n, classes = logits->t.shape.c;
  return graph_detail::make_node<T>(
      std::move(out), {logits}, [logits, probs, labels, n, classes](ValueT<T>& self) {
        if (!logits->requires_grad) return;
        logits->t.ensure_grad();
        const T g = self.t.grad[0] / static_cast<T>(n);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < classes; ++j) {
            T p = (*probs)[static_cast<size_t>(i) * classes + j];
            if (j == labels[static_cast<size_t>(i)]) p -= T(1);
            logits->t.grad[static_cast<size_t>(logits->t.index(i, j, 0, 0))] += p * g;
          }
        }
      });
}

// Seeds d(loss)/d(loss) = 1 and propagates in reverse topological order.
// The loss must be scalar and must come out of a recorded forward pass.
template <typename T>
void backward(const ValuePtrT<T>& loss) {
  if (!loss) throw Error("backward: null loss node");
  if (loss->t.numel() != 1) {
    throw Error("backward: loss must be scalar, got shape " + loss->t.shape.str());
  }
  if (!loss->backprop && loss->parents.empty()) {
    throw Error("backward: no recorded forward pass (loss is a leaf)");
  }

  std::vector<ValueT<T>*> order;
  std::unordered_set<ValueT<T>*> seen;
  std::vector<std::pair<ValueT<T>*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      ValueT<T>* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // `order` is post-order: parents before consumers. Walk it backwards so each
  // node's gradient is complete before its backprop pushes to parents.
  loss->t.ensure_grad();
  loss->t.grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    ValueT<T>* node = *it;
    if (node->backprop && node->t.has_grad()) node->backprop(*node);
  }
}

}  // namespace detnet
