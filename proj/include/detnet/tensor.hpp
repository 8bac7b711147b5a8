#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace detnet {

// All structured failures (shape mismatches, bad specs, format errors) throw
// this; the message names the offending dimension or rule.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  friend bool operator==(const Shape4&, const Shape4&) = default;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

// Dense NCHW tensor. `grad` is either empty (no gradient requested) or has
// the same length as `data`.
template <typename T>
struct Tensor4T {
  Shape4 shape{};
  std::vector<T> data;
  std::vector<T> grad;

  Tensor4T() = default;

  explicit Tensor4T(Shape4 s) : shape(s), data(static_cast<size_t>(s.numel()), T(0)) {}

  Tensor4T(Shape4 s, std::vector<T> values) : shape(s), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != shape.numel()) {
      throw Error("tensor: data length " + std::to_string(data.size()) +
                  " does not match shape " + shape.str());
    }
  }

  static Tensor4T zeros(Shape4 s) { return Tensor4T(s); }

  static Tensor4T full(Shape4 s, T value) {
    Tensor4T t(s);
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  std::int64_t numel() const { return shape.numel(); }

  std::int64_t index(int in, int ic, int ih, int iw) const {
    return ((static_cast<std::int64_t>(in) * shape.c + ic) * shape.h + ih) *
               shape.w + iw;
  }

  T& at(int in, int ic, int ih, int iw) { return data[static_cast<size_t>(index(in, ic, ih, iw))]; }
  const T& at(int in, int ic, int ih, int iw) const {
    return data[static_cast<size_t>(index(in, ic, ih, iw))];
  }

  bool has_grad() const { return !grad.empty(); }

  // Allocates a zeroed gradient buffer if none is present.
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  template <typename U>
  Tensor4T<U> cast() const {
    Tensor4T<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor4 = Tensor4T<float>;

}  // namespace detnet
