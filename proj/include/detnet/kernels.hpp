#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "detnet/parallel.hpp"
#include "detnet/tensor.hpp"

// Pure operator kernels: forward functions of (inputs, parameters) and the
// matching explicit backward passes. The autodiff graph in graph.hpp is a thin
// layer over these. Every kernel accumulates in the tensor's scalar type with
// a fixed (c_in, kh, kw) summation order per output element, so results are
// bit-reproducible and independent of the thread count.

namespace detnet {

struct ConvMeta {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

inline int effective_kernel(int k, int dilation) { return (k - 1) * dilation + 1; }

// floor((extent + 2*pad - ((k-1)*d + 1)) / stride) + 1
inline int conv_out_extent(int extent, int k, int stride, int padding, int dilation) {
  return (extent + 2 * padding - effective_kernel(k, dilation)) / stride + 1;
}

inline void check_conv_geometry(const char* op, int extent, int k, int stride,
                                int padding, int dilation, const char* axis) {
  if (k <= 0) throw Error(std::string(op) + ": kernel size must be positive on " + axis);
  if (stride <= 0) throw Error(std::string(op) + ": stride must be positive");
  if (dilation <= 0) throw Error(std::string(op) + ": dilation must be positive");
  if (padding < 0) throw Error(std::string(op) + ": padding must be non-negative");
  int eff = effective_kernel(k, dilation);
  if (eff > extent + 2 * padding) {
    throw Error(std::string(op) + ": effective kernel " + std::to_string(eff) +
                " exceeds padded input extent " + std::to_string(extent + 2 * padding) +
                " on " + axis);
  }
}

template <typename T>
Shape4 conv2d_output_shape(const Shape4& x, const Tensor4T<T>& weight, const ConvMeta& m) {
  if (weight.shape.c != x.c) {
    throw Error("conv2d: input channels (" + std::to_string(x.c) +
                ") do not match kernel input channels (" + std::to_string(weight.shape.c) + ")");
  }
  check_conv_geometry("conv2d", x.h, weight.shape.h, m.stride, m.padding, m.dilation, "h");
  check_conv_geometry("conv2d", x.w, weight.shape.w, m.stride, m.padding, m.dilation, "w");
  return Shape4{x.n, weight.shape.n,
                conv_out_extent(x.h, weight.shape.h, m.stride, m.padding, m.dilation),
                conv_out_extent(x.w, weight.shape.w, m.stride, m.padding, m.dilation)};
}

template <typename T>
void check_conv_bias(const Tensor4T<T>* bias, int c_out) {
  if (!bias) return;
  if (bias->numel() != c_out) {
    throw Error("conv2d: bias length " + std::to_string(bias->numel()) +
                " does not match output channels (" + std::to_string(c_out) + ")");
  }
}

// Reference path: explicit window gather, one output element at a time.
template <typename T>
Tensor4T<T> conv2d_forward_naive(const Tensor4T<T>& x, const Tensor4T<T>& w,
                                 const Tensor4T<T>* bias, const ConvMeta& m) {
  Shape4 os = conv2d_output_shape(x.shape, w, m);
  check_conv_bias(bias, os.c);
  Tensor4T<T> out(os);
  const int kh = w.shape.h, kw = w.shape.w, cin = x.shape.c;
  for (int n = 0; n < os.n; ++n) {
    for (int oc = 0; oc < os.c; ++oc) {
      for (int oh = 0; oh < os.h; ++oh) {
        for (int ow = 0; ow < os.w; ++ow) {
          T acc = T(0);
          for (int ic = 0; ic < cin; ++ic) {
            for (int i = 0; i < kh; ++i) {
              int ih = oh * m.stride - m.padding + i * m.dilation;
              if (ih < 0 || ih >= x.shape.h) continue;
              for (int j = 0; j < kw; ++j) {
                int iw = ow * m.stride - m.padding + j * m.dilation;
                if (iw < 0 || iw >= x.shape.w) continue;
                acc += x.at(n, ic, ih, iw) * w.at(oc, ic, i, j);
              }
            }
          }
          if (bias) acc += bias->data[static_cast<size_t>(oc)];
          out.at(n, oc, oh, ow) = acc;
        }
      }
    }
  }
  return out;
}

// Fast path: im2col into a (K, P) buffer with K = c_in*kh*kw rows in the same
// (c_in, kh, kw) order the naive path sums in, then a saxpy-style GEMM that
// keeps one running accumulator per output element. Out-of-bounds taps are
// gathered as zeros; adding them preserves the accumulator bit-for-bit, so
// this path equals the naive path exactly.
template <typename T>
Tensor4T<T> conv2d_forward(const Tensor4T<T>& x, const Tensor4T<T>& w,
                           const Tensor4T<T>* bias, const ConvMeta& m) {
  Shape4 os = conv2d_output_shape(x.shape, w, m);
  check_conv_bias(bias, os.c);
  Tensor4T<T> out(os);
  const int kh = w.shape.h, kw = w.shape.w, cin = x.shape.c;
  const std::int64_t K = static_cast<std::int64_t>(cin) * kh * kw;
  const std::int64_t P = static_cast<std::int64_t>(os.h) * os.w;
  const bool pointwise = (kh == 1 && kw == 1 && m.stride == 1 && m.padding == 0);

  std::vector<T> col;
  if (!pointwise) col.resize(static_cast<size_t>(K * P));

  for (int n = 0; n < os.n; ++n) {
    const T* colp;
    if (pointwise) {
      colp = x.data.data() + static_cast<std::int64_t>(n) * cin * P;
    } else {
      T* c = col.data();
      for (int ic = 0; ic < cin; ++ic) {
        for (int i = 0; i < kh; ++i) {
          for (int j = 0; j < kw; ++j) {
            T* row = c + ((static_cast<std::int64_t>(ic) * kh + i) * kw + j) * P;
            for (int oh = 0; oh < os.h; ++oh) {
              int ih = oh * m.stride - m.padding + i * m.dilation;
              if (ih < 0 || ih >= x.shape.h) {
                std::fill(row, row + os.w, T(0));
                row += os.w;
                continue;
              }
              const T* src = &x.at(n, ic, ih, 0);
              for (int ow = 0; ow < os.w; ++ow) {
                int iw = ow * m.stride - m.padding + j * m.dilation;
                row[ow] = (iw >= 0 && iw < x.shape.w) ? src[iw] : T(0);
              }
              row += os.w;
            }
          }
        }
      }
      colp = col.data();
    }

    T* outbase = out.data.data() + static_cast<std::int64_t>(n) * os.c * P;
    parallel_for(os.c, [&, colp, outbase](std::int64_t oc0, std::int64_t oc1) {
      for (std::int64_t oc = oc0; oc < oc1; ++oc) {
        T* dst = outbase + oc * P;
        const T* wrow = w.data.data() + oc * K;
        for (std::int64_t k = 0; k < K; ++k) {
          const T wk = wrow[k];
          const T* src = colp + k * P;
          for (std::int64_t p = 0; p < P; ++p) dst[p] += wk * src[p];
        }
        if (bias) {
          const T b = bias->data[static_cast<size_t>(oc)];
          for (std::int64_t p = 0; p < P; ++p) dst[p] += b;
        }
      }
    }, std::max<std::int64_t>(1, (1 << 18) / std::max<std::int64_t>(1, K * P)));
  }
  return out;
}

// Accumulates input/weight/bias gradients; null output pointers skip that
// leg. `grad_out` points at os.numel() values. Each gradient element keeps a
// fixed accumulation order and the parallel partitions write disjoint planes,
// so results stay independent of the thread count.
template <typename T>
void conv2d_backward(const Tensor4T<T>& x, const Tensor4T<T>& w, const ConvMeta& m,
                     const Shape4& os, const T* grad_out, std::vector<T>* grad_x,
                     std::vector<T>* grad_w, std::vector<T>* grad_bias) {
  const int kh = w.shape.h, kw = w.shape.w, cin = x.shape.c;
  const std::int64_t P = static_cast<std::int64_t>(os.h) * os.w;
  const std::int64_t in_plane = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
  auto gptr = [&](int n, int oc) {
    return grad_out + (static_cast<std::int64_t>(n) * os.c + oc) * P;
  };

  if (grad_x) {
    // dX[n,ic,ih,iw] += sum over (oc,i,j) of W[oc,ic,i,j] * dY[n,oc,oh,ow].
    parallel_for(cin, [&](std::int64_t ic0, std::int64_t ic1) {
      for (std::int64_t ic = ic0; ic < ic1; ++ic) {
        for (int n = 0; n < os.n; ++n) {
          T* dplane = grad_x->data() + (static_cast<std::int64_t>(n) * cin + ic) * in_plane;
          for (int oc = 0; oc < os.c; ++oc) {
            const T* g = gptr(n, oc);
            for (int i = 0; i < kh; ++i) {
              for (int j = 0; j < kw; ++j) {
                const T wv = w.at(oc, static_cast<int>(ic), i, j);
                const int woff = j * m.dilation - m.padding;
                for (int oh = 0; oh < os.h; ++oh) {
                  const int ih = oh * m.stride - m.padding + i * m.dilation;
                  if (ih < 0 || ih >= x.shape.h) continue;
                  T* drow = dplane + static_cast<std::int64_t>(ih) * x.shape.w;
                  const T* grow = g + static_cast<std::int64_t>(oh) * os.w;
                  if (m.stride == 1) {
                    const int lo = std::max(0, -woff);
                    const int hi = std::min(os.w, x.shape.w - woff);
                    for (int ow = lo; ow < hi; ++ow) drow[ow + woff] += wv * grow[ow];
                  } else {
                    for (int ow = 0; ow < os.w; ++ow) {
                      const int iw = ow * m.stride + woff;
                      if (iw >= 0 && iw < x.shape.w) drow[iw] += wv * grow[ow];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }, 1);
  }

  if (grad_w) {
    // dW[oc,ic,i,j] += sum over (n,oh,ow) of X[n,ic,ih,iw] * dY[n,oc,oh,ow].
    parallel_for(os.c, [&](std::int64_t oc0, std::int64_t oc1) {
      for (std::int64_t oc = oc0; oc < oc1; ++oc) {
        for (int ic = 0; ic < cin; ++ic) {
          for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
              T acc = T(0);
              const int woff = j * m.dilation - m.padding;
              for (int n = 0; n < os.n; ++n) {
                const T* g = gptr(n, static_cast<int>(oc));
                const T* xplane = x.data.data() +
                                  (static_cast<std::int64_t>(n) * cin + ic) * in_plane;
                for (int oh = 0; oh < os.h; ++oh) {
                  const int ih = oh * m.stride - m.padding + i * m.dilation;
                  if (ih < 0 || ih >= x.shape.h) continue;
                  const T* xrow = xplane + static_cast<std::int64_t>(ih) * x.shape.w;
                  const T* grow = g + static_cast<std::int64_t>(oh) * os.w;
                  if (m.stride == 1) {
                    const int lo = std::max(0, -woff);
                    const int hi = std::min(os.w, x.shape.w - woff);
                    for (int ow = lo; ow < hi; ++ow) acc += xrow[ow + woff] * grow[ow];
                  } else {
                    for (int ow = 0; ow < os.w; ++ow) {
                      const int iw = ow * m.stride + woff;
                      if (iw >= 0 && iw < x.shape.w) acc += xrow[iw] * grow[ow];
                    }
                  }
                }
              }
              (*grad_w)[static_cast<size_t>(
                  w.index(static_cast<int>(oc), ic, i, j))] += acc;
            }
          }
        }
      }
    }, 1);
  }

  if (grad_bias) {
    for (int oc = 0; oc < os.c; ++oc) {
      T acc = T(0);
      for (int n = 0; n < os.n; ++n) {
        const T* g = gptr(n, oc);
        for (std::int64_t p = 0; p < P; ++p) acc += g[p];
      }
      (*grad_bias)[static_cast<size_t>(oc)] += acc;
    }
  }
}

enum class BnMode { kTraining, kFrozen };

// Per-channel statistics captured by the forward pass for reuse in backward.
template <typename T>
struct BnSaved {
  std::vector<T> mean;
  std::vector<T> inv_std;
};

template <typename T>
void check_bn_channels(const Shape4& x, std::int64_t param_len) {
  if (param_len != x.c) {
    throw Error("batch_norm: parameter length " + std::to_string(param_len) +
                " does not match input channels (" + std::to_string(x.c) + ")");
  }
}

// Training mode uses biased batch statistics and updates the running buffers
// in place as new = momentum*old + (1-momentum)*batch. Frozen mode reads the
// running buffers and leaves them untouched.
template <typename T>
Tensor4T<T> batch_norm_forward(const Tensor4T<T>& x, const std::vector<T>& gamma,
                               const std::vector<T>& beta, std::vector<T>& running_mean,
                               std::vector<T>& running_var, T eps, T momentum,
                               BnMode mode, BnSaved<T>* saved) {
  check_bn_channels<T>(x.shape, static_cast<std::int64_t>(gamma.size()));
  check_bn_channels<T>(x.shape, static_cast<std::int64_t>(beta.size()));
  check_bn_channels<T>(x.shape, static_cast<std::int64_t>(running_mean.size()));
  check_bn_channels<T>(x.shape, static_cast<std::int64_t>(running_var.size()));

  Tensor4T<T> out(x.shape);
  const int C = x.shape.c;
  const std::int64_t plane = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
  const std::int64_t count = static_cast<std::int64_t>(x.shape.n) * plane;
  if (saved) {
    saved->mean.assign(static_cast<size_t>(C), T(0));
    saved->inv_std.assign(static_cast<size_t>(C), T(0));
  }

  for (int c = 0; c < C; ++c) {
    T mean, inv_std;
    if (mode == BnMode::kTraining) {
      T sum = T(0);
      for (int n = 0; n < x.shape.n; ++n) {
        const T* p = &x.at(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / static_cast<T>(count);
      T var_sum = T(0);
      for (int n = 0; n < x.shape.n; ++n) {
        const T* p = &x.at(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
          T d = p[i] - mean;
          var_sum += d * d;
        }
      }
      T var = var_sum / static_cast<T>(count);
      running_mean[static_cast<size_t>(c)] =
          momentum * running_mean[static_cast<size_t>(c)] + (T(1) - momentum) * mean;
      running_var[static_cast<size_t>(c)] =
          momentum * running_var[static_cast<size_t>(c)] + (T(1) - momentum) * var;
      inv_std = T(1) / std::sqrt(var + eps);
    } else {
      if (running_var[static_cast<size_t>(c)] < T(0)) {
        throw Error("batch_norm: running_var[" + std::to_string(c) + "] is negative (" +
                    std::to_string(static_cast<double>(running_var[static_cast<size_t>(c)])) +
                    ")");
      }
      mean = running_mean[static_cast<size_t>(c)];
      inv_std = T(1) / std::sqrt(running_var[static_cast<size_t>(c)] + eps);
    }
    if (saved) {
      saved->mean[static_cast<size_t>(c)] = mean;
      saved->inv_std[static_cast<size_t>(c)] = inv_std;
    }
    const T g = gamma[static_cast<size_t>(c)], b = beta[static_cast<size_t>(c)];
    for (int n = 0; n < x.shape.n; ++n) {
      const T* p = &x.at(n, c, 0, 0);
      T* q = &out.at(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mean) * inv_std + b;
    }
  }
  return out;
}

template <typename T>
void batch_norm_backward(const Tensor4T<T>& x, const std::vector<T>& gamma,
                         const BnSaved<T>& saved, BnMode mode, const T* grad_out,
                         std::vector<T>* grad_x, std::vector<T>* grad_gamma,
                         std::vector<T>* grad_beta) {
  const int C = x.shape.c;
  const std::int64_t plane = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
  const std::int64_t count = static_cast<std::int64_t>(x.shape.n) * plane;

  for (int c = 0; c < C; ++c) {
    const T mean = saved.mean[static_cast<size_t>(c)];
    const T inv_std = saved.inv_std[static_cast<size_t>(c)];
    const T g = gamma[static_cast<size_t>(c)];

    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (int n = 0; n < x.shape.n; ++n) {
      const T* xp = &x.at(n, c, 0, 0);
      const T* gp = grad_out + x.index(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        sum_dy += gp[i];
        sum_dy_xhat += gp[i] * (xp[i] - mean) * inv_std;
      }
    }
    if (grad_gamma) (*grad_gamma)[static_cast<size_t>(c)] += sum_dy_xhat;
    if (grad_beta) (*grad_beta)[static_cast<size_t>(c)] += sum_dy;

    if (grad_x) {
      const T inv_count = T(1) / static_cast<T>(count);
      for (int n = 0; n < x.shape.n; ++n) {
        const T* xp = &x.at(n, c, 0, 0);
        const T* gp = grad_out + x.index(n, c, 0, 0);
        T* dst = grad_x->data() + x.index(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
          if (mode == BnMode::kTraining) {
            T xhat = (xp[i] - mean) * inv_std;
            dst[i] += g * inv_std * (gp[i] - sum_dy * inv_count - xhat * sum_dy_xhat * inv_count);
          } else {
            dst[i] += g * inv_std * gp[i];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor4T<T> relu_forward(const Tensor4T<T>& x) {
  Tensor4T<T> out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return out;
}

// Max pooling with -inf padding semantics. Ties route the gradient to the
// lowest linear input index in the window.
template <typename T>
Tensor4T<T> max_pool_forward(const Tensor4T<T>& x, int k, int stride, int padding,
                             std::vector<std::int64_t>* argmax) {
  if (k <= 0) throw Error("max_pool: kernel size must be positive");
  if (stride <= 0) throw Error("max_pool: stride must be positive");
  if (padding < 0) throw Error("max_pool: padding must be non-negative");
  if (padding >= k) {
    throw Error("max_pool: padding " + std::to_string(padding) +
                " must be smaller than the window (" + std::to_string(k) + ")");
  }
  check_conv_geometry("max_pool", x.shape.h, k, stride, padding, 1, "h");
  check_conv_geometry("max_pool", x.shape.w, k, stride, padding, 1, "w");
  Shape4 os{x.shape.n, x.shape.c, conv_out_extent(x.shape.h, k, stride, padding, 1),
            conv_out_extent(x.shape.w, k, stride, padding, 1)};
  Tensor4T<T> out(os);
  if (argmax) argmax->assign(static_cast<size_t>(os.numel()), -1);

  std::int64_t o = 0;
  for (int n = 0; n < os.n; ++n) {
    for (int c = 0; c < os.c; ++c) {
      for (int oh = 0; oh < os.h; ++oh) {
        for (int ow = 0; ow < os.w; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (int i = 0; i < k; ++i) {
            int ih = oh * stride - padding + i;
            if (ih < 0 || ih >= x.shape.h) continue;
            for (int j = 0; j < k; ++j) {
              int iw = ow * stride - padding + j;
              if (iw < 0 || iw >= x.shape.w) continue;
              T v = x.at(n, c, ih, iw);
              if (v > best) {
                best = v;
                best_idx = x.index(n, c, ih, iw);
              }
            }
          }
          out.data[static_cast<size_t>(o)] = best;
          if (argmax) (*argmax)[static_cast<size_t>(o)] = best_idx;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor4T<T> global_avg_pool_forward(const Tensor4T<T>& x) {
  if (x.shape.h < 1 || x.shape.w < 1) {
    throw Error("global_avg_pool: spatial extent must be at least 1x1, got " + x.shape.str());
  }
  Tensor4T<T> out(Shape4{x.shape.n, x.shape.c, 1, 1});
  const std::int64_t plane = static_cast<std::int64_t>(x.shape.h) * x.shape.w;
  for (int n = 0; n < x.shape.n; ++n) {
    for (int c = 0; c < x.shape.c; ++c) {
      const T* p = &x.at(n, c, 0, 0);
      T sum = T(0);
      for (std::int64_t i = 0; i < plane; ++i) sum += p[i];
      out.at(n, c, 0, 0) = sum / static_cast<T>(plane);
    }
  }
  return out;
}

// x: (n, d, 1, 1), weight: (classes, d, 1, 1), bias: (1, classes, 1, 1).
template <typename T>
Tensor4T<T> linear_forward(const Tensor4T<T>& x, const Tensor4T<T>& w, const Tensor4T<T>* bias) {
  if (x.shape.h != 1 || x.shape.w != 1) {
    throw Error("linear: expected flat input (h=w=1), got " + x.shape.str());
  }
  if (w.shape.c != x.shape.c) {
    throw Error("linear: input width (" + std::to_string(x.shape.c) +
                ") does not match weight width (" + std::to_string(w.shape.c) + ")");
  }
  if (bias && bias->numel() != w.shape.n) {
    throw Error("linear: bias length " + std::to_string(bias->numel()) +
                " does not match output width (" + std::to_string(w.shape.n) + ")");
  }
  const int d = x.shape.c, classes = w.shape.n;
  Tensor4T<T> out(Shape4{x.shape.n, classes, 1, 1});
  for (int n = 0; n < x.shape.n; ++n) {
    const T* xp = &x.at(n, 0, 0, 0);
    for (int j = 0; j < classes; ++j) {
      const T* wp = w.data.data() + static_cast<std::int64_t>(j) * d;
      T acc = T(0);
      for (int kidx = 0; kidx < d; ++kidx) acc += xp[kidx] * wp[kidx];
      if (bias) acc += bias->data[static_cast<size_t>(j)];
      out.at(n, j, 0, 0) = acc;
    }
  }
  return out;
}

template <typename T>
void linear_backward(const Tensor4T<T>& x, const Tensor4T<T>& w, const T* grad_out,
                     std::vector<T>* grad_x, std::vector<T>* grad_w, std::vector<T>* grad_bias) {
  const int d = x.shape.c, classes = w.shape.n;
  for (int n = 0; n < x.shape.n; ++n) {
    const T* gp = grad_out + static_cast<std::int64_t>(n) * classes;
    const T* xp = &x.at(n, 0, 0, 0);
    if (grad_x) {
      T* dx = grad_x->data() + x.index(n, 0, 0, 0);
      for (int j = 0; j < classes; ++j) {
        const T g = gp[j];
        const T* wp = w.data.data() + static_cast<std::int64_t>(j) * d;
        for (int kidx = 0; kidx < d; ++kidx) dx[kidx] += g * wp[kidx];
      }
    }
    if (grad_w) {
      for (int j = 0; j < classes; ++j) {
        const T g = gp[j];
        T* dw = grad_w->data() + static_cast<std::int64_t>(j) * d;
        for (int kidx = 0; kidx < d; ++kidx) dw[kidx] += g * xp[kidx];
      }
    }
    if (grad_bias) {
      for (int j = 0; j < classes; ++j) (*grad_bias)[static_cast<size_t>(j)] += gp[j];
    }
  }
}

template <typename T>
Tensor4T<T> add_forward(const Tensor4T<T>& a, const Tensor4T<T>& b) {
  if (!(a.shape == b.shape)) {
    throw Error("add: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
  }
  Tensor4T<T> out(a.shape);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

template <typename T>
Tensor4T<T> upsample_nearest2x_forward(const Tensor4T<T>& x) {
  Tensor4T<T> out(Shape4{x.shape.n, x.shape.c, 2 * x.shape.h, 2 * x.shape.w});
  for (int n = 0; n < x.shape.n; ++n) {
    for (int c = 0; c < x.shape.c; ++c) {
      for (int h = 0; h < x.shape.h; ++h) {
        for (int w = 0; w < x.shape.w; ++w) {
          T v = x.at(n, c, h, w);
          out.at(n, c, 2 * h, 2 * w) = v;
          out.at(n, c, 2 * h, 2 * w + 1) = v;
          out.at(n, c, 2 * h + 1, 2 * w) = v;
          out.at(n, c, 2 * h + 1, 2 * w + 1) = v;
        }
      }
    }
  }
  return out;
}

// Mean over the batch of -log softmax(logits)[label], max-subtracted for
// stability. Fills `probs` (n x classes, row-major) for the backward pass.
template <typename T>
T softmax_cross_entropy_forward(const Tensor4T<T>& logits, const std::vector<int>& labels,
                                std::vector<T>* probs) {
  if (logits.shape.h != 1 || logits.shape.w != 1) {
    throw Error("softmax_cross_entropy: expected flat logits (h=w=1), got " + logits.shape.str());
  }
  const int n = logits.shape.n, classes = logits.shape.c;
  if (static_cast<int>(labels.size()) != n) {
    throw Error("softmax_cross_entropy: batch size " + std::to_string(n) + " but " +
                std::to_string(labels.size()) + " labels");
  }
  if (probs) probs->assign(static_cast<size_t>(n) * classes, T(0));
  T loss = T(0);
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= classes) {
      throw Error("softmax_cross_entropy: label " + std::to_string(labels[static_cast<size_t>(i)]) +
                  " out of range [0, " + std::to_string(classes) + ") at row " + std::to_string(i));
    }
    const T* row = &logits.at(i, 0, 0, 0);
    T mx = row[0];
    for (int j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int j = 0; j < classes; ++j) sum += std::exp(row[j] - mx);
    const T log_sum = std::log(sum);
    loss += log_sum - (row[labels[static_cast<size_t>(i)]] - mx);
    if (probs) {
      for (int j = 0; j < classes; ++j) {
        (*probs)[static_cast<size_t>(i) * classes + j] = std::exp(row[j] - mx) / sum;
      }
    }
  }
  return loss / static_cast<T>(n);
}

}  // namespace detnet
