#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "glyphnet/errors.hpp"

namespace glyphnet {

// Batch/channel/height/width extents of 4-D data (N,C,H,W layout).
struct Shape4 {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  bool operator==(const Shape4&) const = default;

  std::size_t count() const { return n * c * h * w; }

  void validate() const {
    if (n < 1 || c < 1 || h < 1 || w < 1) {
      throw ShapeMismatch("Shape4 extents must all be >= 1");
    }
  }
};

inline std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Dense row-major array of doubles. Buffers produced by the free-function
// operations are never mutated afterwards; holders may share them freely.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(count_(), 0.0);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != count_()) {
      throw ShapeMismatch("data size " + std::to_string(data_.size()) +
                          " does not match shape " + shape_to_string(shape_));
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  Shape4 shape4() const {
    if (rank() != 4) {
      throw ShapeMismatch("expected rank-4 tensor, got shape " + shape_string());
    }
    return Shape4{shape_[0], shape_[1], shape_[2], shape_[3]};
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  std::string shape_string() const { return shape_to_string(shape_); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Reinterprets the buffer under a new shape with equal element count.
  Tensor reshape(std::vector<std::size_t> new_shape) const {
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.validate_shape();
    if (out.count_() != data_.size()) {
      throw ShapeMismatch("reshape from " + shape_string() + " to " +
                          shape_to_string(out.shape_) + " changes element count");
    }
    out.data_ = data_;
    return out;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::size_t count_() const {
    std::size_t c = 1;
    for (std::size_t e : shape_) c *= e;
    return c;
  }

  void validate_shape() const {
    if (shape_.empty()) throw ShapeMismatch("tensor shape must have rank >= 1");
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeMismatch("tensor extents must be positive, got " + shape_string());
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline void ensure_finite(const Tensor& t, const std::string& context) {
  if (!t.all_finite()) {
    throw NonFiniteValue("non-finite value in " + context);
  }
}

enum class BinaryOp { add, sub, mul };

inline Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch("elementwise operands differ: " + a.shape_string() + " vs " +
                        b.shape_string());
  }
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t n = a.size();
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      break;
  }
  return out;
}

inline Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = pa[i] * factor;
  return out;
}

// C = A(m x k) * B(k x n), accumulated in row-major ikj order. The loop
// order keeps both B and C rows hot and lets the compiler vectorize the
// inner update.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeMismatch("matmul expects rank-2 operands, got " + a.shape_string() + " and " +
                        b.shape_string());
  }
  const std::size_t m = a.extent(0), k = a.extent(1);
  const std::size_t k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    throw ShapeMismatch("matmul inner extents differ: " + a.shape_string() + " vs " +
                        b.shape_string());
  }
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        orow[j] += av * brow[j];
      }
    }
  }
  return out;
}

// Stacks 4-D parts along the channel axis; part i owns the contiguous
// channel slice starting at the running sum of earlier widths.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw EmptyInput("concat_channels on empty list");
  const Shape4 first = parts[0].shape4();
  std::size_t total_c = 0;
  for (const Tensor& p : parts) {
    const Shape4 s = p.shape4();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeMismatch("concat_channels parts disagree on N/H/W: " + parts[0].shape_string() +
                          " vs " + p.shape_string());
    }
    total_c += s.c;
  }
  Tensor out({first.n, total_c, first.h, first.w});
  const std::size_t plane = first.h * first.w;
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t c_off = 0;
    for (const Tensor& p : parts) {
      const std::size_t pc = p.extent(1);
      const double* src = p.data() + n * pc * plane;
      double* dst = out.data() + (n * total_c + c_off) * plane;
      std::copy(src, src + pc * plane, dst);
      c_off += pc;
    }
  }
  return out;
}

// Channels [c_begin, c_end) of a 4-D tensor, copied out contiguously.
inline Tensor slice_channels(const Tensor& x, std::size_t c_begin, std::size_t c_end) {
  const Shape4 s = x.shape4();
  if (c_begin >= c_end || c_end > s.c) {
    throw ShapeMismatch("bad channel slice [" + std::to_string(c_begin) + "," +
                        std::to_string(c_end) + ") of " + x.shape_string());
  }
  const std::size_t out_c = c_end - c_begin;
  Tensor out({s.n, out_c, s.h, s.w});
  const std::size_t plane = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* src = x.data() + (n * s.c + c_begin) * plane;
    double* dst = out.data() + n * out_c * plane;
    std::copy(src, src + out_c * plane, dst);
  }
  return out;
}

enum class ReduceOp { sum, mean, max };

namespace detail {

inline void check_axes(const std::vector<std::size_t>& axes, std::size_t rank) {
  if (axes.empty()) throw InvalidAxis("reduce needs at least one axis");
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= rank) {
      throw InvalidAxis("axis " + std::to_string(axes[i]) + " out of range for rank " +
                        std::to_string(rank));
    }
    for (std::size_t j = i + 1; j < axes.size(); ++j) {
      if (axes[i] == axes[j]) throw InvalidAxis("duplicate reduce axis");
    }
  }
}

}  // namespace detail

struct ReduceResult {
  Tensor values;
  // Flat index (row-major, into the input) of the first maximizing element
  // for each output position; populated for max only.
  std::vector<std::size_t> argmax;
};

// Reduces over `axes`. keepdims=true keeps reduced extents as 1, else they
// are removed (a full reduction collapses to shape [1]).
inline ReduceResult reduce(const Tensor& a, const std::vector<std::size_t>& axes, ReduceOp op,
                           bool keepdims = false) {
  detail::check_axes(axes, a.rank());
  const std::size_t rank = a.rank();
  std::vector<bool> reduced(rank, false);
  for (std::size_t ax : axes) reduced[ax] = true;

  std::vector<std::size_t> out_shape_kept(rank);
  std::size_t reduced_count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape_kept[i] = reduced[i] ? 1 : a.extent(i);
    if (reduced[i]) reduced_count *= a.extent(i);
  }

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) {
    in_strides[i - 1] = in_strides[i] * a.extent(i);
  }
  std::vector<std::size_t> out_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) {
    out_strides[i - 1] = out_strides[i] * out_shape_kept[i];
  }

  std::size_t out_count = 1;
  for (std::size_t e : out_shape_kept) out_count *= e;

  ReduceResult res;
  res.values = Tensor(out_shape_kept);
  const bool is_max = op == ReduceOp::max;
  if (is_max) res.argmax.assign(out_count, 0);
  std::vector<bool> seen;
  if (is_max) seen.assign(out_count, false);

  const double* in = a.data();
  double* out = res.values.data();
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < a.size(); ++flat) {
    std::size_t out_flat = 0;
    for (std::size_t i = 0; i < rank; ++i) {
      if (!reduced[i]) out_flat += idx[i] * out_strides[i];
    }
    const double v = in[flat];
    if (is_max) {
      if (!seen[out_flat] || v > out[out_flat]) {
        seen[out_flat] = true;
        out[out_flat] = v;
        res.argmax[out_flat] = flat;
      }
    } else {
      out[out_flat] += v;
    }
    // row-major increment
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < a.extent(i)) break;
      idx[i] = 0;
    }
  }

  if (op == ReduceOp::mean) {
    const double inv = 1.0 / static_cast<double>(reduced_count);
    for (std::size_t i = 0; i < out_count; ++i) out[i] *= inv;
  }

  if (!keepdims) {
    std::vector<std::size_t> squeezed;
    for (std::size_t i = 0; i < rank; ++i) {
      if (!reduced[i]) squeezed.push_back(a.extent(i));
    }
    if (squeezed.empty()) squeezed.push_back(1);
    res.values = res.values.reshape(squeezed);
  }
  return res;
}

}  // namespace glyphnet
