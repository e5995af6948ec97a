#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "glyphnet/arith.hpp"
#include "glyphnet/errors.hpp"
#include "glyphnet/tensor.hpp"

namespace glyphnet {

namespace detail {

// C(m x n) (+)= A(m x k) * B(k x n)
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
                    const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(m x n) (+)= A(m x k) * B(n x k)^T
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
                    const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      if (accumulate) {
        crow[j] += acc;
      } else {
        crow[j] = acc;
      }
    }
  }
}

// C(m x n) (+)= A(k x m)^T * B(k x n)
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
                    const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// One sample's patches laid out for gemm: cols is (C*F*F) x (Mh*Mw),
// out-of-bounds taps are zero.
inline void im2col(const double* x, std::size_t channels, std::size_t height, std::size_t width,
                   std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t out_h,
                   std::size_t out_w, double* cols) {
  const std::size_t out_plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = x + c * height * width;
    for (std::size_t fy = 0; fy < kernel; ++fy) {
      for (std::size_t fx = 0; fx < kernel; ++fx) {
        double* row = cols + ((c * kernel + fy) * kernel + fx) * out_plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long long iy =
              static_cast<long long>(oy * stride + fy) - static_cast<long long>(padding);
          if (iy < 0 || iy >= static_cast<long long>(height)) {
            std::fill(row + oy * out_w, row + (oy + 1) * out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long long ix =
                static_cast<long long>(ox * stride + fx) - static_cast<long long>(padding);
            row[oy * out_w + ox] =
                (ix < 0 || ix >= static_cast<long long>(width)) ? 0.0
                                                                : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Scatter-add of a cols gradient back onto the input plane.
inline void col2im(const double* cols, std::size_t channels, std::size_t height,
                   std::size_t width, std::size_t kernel, std::size_t stride, std::size_t padding,
                   std::size_t out_h, std::size_t out_w, double* x) {
  const std::size_t out_plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = x + c * height * width;
    for (std::size_t fy = 0; fy < kernel; ++fy) {
      for (std::size_t fx = 0; fx < kernel; ++fx) {
        const double* row = cols + ((c * kernel + fy) * kernel + fx) * out_plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long long iy =
              static_cast<long long>(oy * stride + fy) - static_cast<long long>(padding);
          if (iy < 0 || iy >= static_cast<long long>(height)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long long ix =
                static_cast<long long>(ox * stride + fx) - static_cast<long long>(padding);
            if (ix < 0 || ix >= static_cast<long long>(width)) continue;
            dst[static_cast<std::size_t>(ix)] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Learnable state of one convolution. Weights are [out, in, F, F].
struct ConvParams {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool use_bias = false;
  Tensor weights;
  Tensor bias;

  void validate() const {
    const std::vector<std::size_t> want{out_channels, in_channels, kernel, kernel};
    if (weights.shape() != want) {
      throw ShapeMismatch("conv weights " + weights.shape_string() + " but fields say " +
                          shape_to_string(want));
    }
    if (use_bias && weights.size() > 0) {
      if (bias.rank() != 1 || bias.extent(0) != out_channels) {
        throw ShapeMismatch("conv bias shape " + bias.shape_string() + " for " +
                            std::to_string(out_channels) + " maps");
      }
    }
  }
};

inline Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
  const Shape4 s = x.shape4();
  if (s.c != p.in_channels) {
    throw ShapeMismatch("conv input has " + std::to_string(s.c) + " channels, layer expects " +
                        std::to_string(p.in_channels));
  }
  p.validate();
  const std::size_t out_h = output_dim(s.h, p.kernel, p.stride, p.padding);
  const std::size_t out_w = output_dim(s.w, p.kernel, p.stride, p.padding);
  const std::size_t patch = p.in_channels * p.kernel * p.kernel;
  const std::size_t out_plane = out_h * out_w;

  Tensor y({s.n, p.out_channels, out_h, out_w});
  std::vector<double> cols(patch * out_plane);
  for (std::size_t n = 0; n < s.n; ++n) {
    detail::im2col(x.data() + n * s.c * s.h * s.w, s.c, s.h, s.w, p.kernel, p.stride, p.padding,
                   out_h, out_w, cols.data());
    double* out = y.data() + n * p.out_channels * out_plane;
    detail::gemm_nn(p.out_channels, patch, out_plane, p.weights.data(), cols.data(), out, false);
    if (p.use_bias) {
      for (std::size_t co = 0; co < p.out_channels; ++co) {
        const double b = p.bias[co];
        double* row = out + co * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i) row[i] += b;
      }
    }
  }
  return y;
}

struct ConvGrads {
  Tensor grad_x;
  Tensor grad_w;
  Tensor grad_b;  // empty when the layer has no bias
};

inline ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out) {
  const Shape4 s = x.shape4();
  const std::size_t out_h = output_dim(s.h, p.kernel, p.stride, p.padding);
  const std::size_t out_w = output_dim(s.w, p.kernel, p.stride, p.padding);
  const std::vector<std::size_t> want{s.n, p.out_channels, out_h, out_w};
  if (grad_out.shape() != want) {
    throw TapeMismatch("conv grad_out " + grad_out.shape_string() + ", forward produced " +
                       shape_to_string(want));
  }
  const std::size_t patch = p.in_channels * p.kernel * p.kernel;
  const std::size_t out_plane = out_h * out_w;

  ConvGrads g;
  g.grad_x = Tensor(x.shape());
  g.grad_w = Tensor(p.weights.shape());
  if (p.use_bias) g.grad_b = Tensor({p.out_channels});

  std::vector<double> cols(patch * out_plane);
  std::vector<double> grad_cols(patch * out_plane);
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* xn = x.data() + n * s.c * s.h * s.w;
    const double* gn = grad_out.data() + n * p.out_channels * out_plane;
    detail::im2col(xn, s.c, s.h, s.w, p.kernel, p.stride, p.padding, out_h, out_w, cols.data());
    // dW += g_n * cols^T ; dcols = W^T * g_n
    detail::gemm_nt(p.out_channels, out_plane, patch, gn, cols.data(), g.grad_w.data(), true);
    detail::gemm_tn(patch, p.out_channels, out_plane, p.weights.data(), gn, grad_cols.data(),
                    false);
    detail::col2im(grad_cols.data(), s.c, s.h, s.w, p.kernel, p.stride, p.padding, out_h, out_w,
                   g.grad_x.data() + n * s.c * s.h * s.w);
    if (p.use_bias) {
      for (std::size_t co = 0; co < p.out_channels; ++co) {
        const double* row = gn + co * out_plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < out_plane; ++i) acc += row[i];
        g.grad_b[co] += acc;
      }
    }
  }
  return g;
}

struct MaxPoolResult {
  Tensor y;
  // Flat input index of each window's maximum, first in row-major order on
  // ties; one entry per output element, in output order.
  std::vector<std::size_t> argmax;
};

inline MaxPoolResult maxpool2x2_forward(const Tensor& x) {
  const Shape4 s = x.shape4();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeMismatch("maxpool2x2 needs even extents, got " + x.shape_string());
  }
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  MaxPoolResult res;
  res.y = Tensor({s.n, s.c, oh, ow});
  res.argmax.resize(res.y.size());
  const double* in = x.data();
  double* out = res.y.data();
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * s.h * s.w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::size_t i00 = base + (2 * oy) * s.w + 2 * ox;
          std::size_t best = i00;
          double v = in[i00];
          const std::size_t taps[3] = {i00 + 1, i00 + s.w, i00 + s.w + 1};
          for (std::size_t t : taps) {
            if (in[t] > v) {
              v = in[t];
              best = t;
            }
          }
          out[o] = v;
          res.argmax[o] = best;
          ++o;
        }
      }
    }
  }
  return res;
}

inline Tensor maxpool2x2_backward(const std::vector<std::size_t>& argmax,
                                  const std::vector<std::size_t>& input_shape,
                                  const Tensor& grad_out) {
  if (grad_out.size() != argmax.size()) {
    throw TapeMismatch("maxpool grad_out has " + std::to_string(grad_out.size()) +
                       " elements, tape recorded " + std::to_string(argmax.size()));
  }
  Tensor grad_x(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) {
    grad_x[argmax[o]] += grad_out[o];
  }
  return grad_x;
}

inline Tensor avgpool2x2_forward(const Tensor& x) {
  const Shape4 s = x.shape4();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeMismatch("avgpool2x2 needs even extents, got " + x.shape_string());
  }
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor y({s.n, s.c, oh, ow});
  const double* in = x.data();
  double* out = y.data();
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * s.h * s.w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::size_t i00 = base + (2 * oy) * s.w + 2 * ox;
          out[o++] = 0.25 * (in[i00] + in[i00 + 1] + in[i00 + s.w] + in[i00 + s.w + 1]);
        }
      }
    }
  }
  return y;
}

inline Tensor avgpool2x2_backward(const std::vector<std::size_t>& input_shape,
                                  const Tensor& grad_out) {
  Tensor grad_x(input_shape);
  const Shape4 s = grad_x.shape4();
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  if (grad_out.size() != s.n * s.c * oh * ow) {
    throw TapeMismatch("avgpool grad_out shape " + grad_out.shape_string());
  }
  const double* in = grad_out.data();
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * s.h * s.w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double v = 0.25 * in[o++];
          const std::size_t i00 = base + (2 * oy) * s.w + 2 * ox;
          grad_x[i00] += v;
          grad_x[i00 + 1] += v;
          grad_x[i00 + s.w] += v;
          grad_x[i00 + s.w + 1] += v;
        }
      }
    }
  }
  return grad_x;
}

// Mean over H and W: [N,C,H,W] -> [N,C].
inline Tensor global_avg_pool_forward(const Tensor& x) {
  const Shape4 s = x.shape4();
  Tensor y({s.n, s.c});
  const double inv = 1.0 / static_cast<double>(s.h * s.w);
  const double* in = x.data();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* plane = in + (n * s.c + c) * s.h * s.w;
      double acc = 0.0;
      for (std::size_t i = 0; i < s.h * s.w; ++i) acc += plane[i];
      y.at2(n, c) = acc * inv;
    }
  }
  return y;
}

inline Tensor global_avg_pool_backward(const std::vector<std::size_t>& input_shape,
                                       const Tensor& grad_out) {
  Tensor grad_x(input_shape);
  const Shape4 s = grad_x.shape4();
  if (grad_out.rank() != 2 || grad_out.extent(0) != s.n || grad_out.extent(1) != s.c) {
    throw TapeMismatch("gap grad_out shape " + grad_out.shape_string());
  }
  const double inv = 1.0 / static_cast<double>(s.h * s.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double v = grad_out.at2(n, c) * inv;
      double* plane = grad_x.data() + (n * s.c + c) * s.h * s.w;
      for (std::size_t i = 0; i < s.h * s.w; ++i) plane[i] = v;
    }
  }
  return grad_x;
}

// Per-channel normalization state. Running statistics feed eval mode and
// are updated as running = momentum*running + (1-momentum)*batch.
struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  static BatchNormState make(std::size_t channels, double momentum = 0.9,
                             double epsilon = 1e-5) {
    BatchNormState s;
    s.gamma = Tensor::full({channels}, 1.0);
    s.beta = Tensor({channels});
    s.running_mean = Tensor({channels});
    s.running_var = Tensor::full({channels}, 1.0);
    s.momentum = momentum;
    s.epsilon = epsilon;
    return s;
  }

  std::size_t channels() const { return gamma.extent(0); }
};

struct BatchNormCache {
  Tensor xhat;                  // normalized input, train mode
  std::vector<double> inv_std;  // per channel 1/sqrt(var + eps)
};

// Train mode normalizes with batch statistics over N,H,W per channel and
// updates the running statistics in `state`; eval mode is a fixed affine
// map from the running statistics and fills no cache.
inline Tensor batchnorm_forward(const Tensor& x, BatchNormState& state, bool train,
                                BatchNormCache* cache = nullptr) {
  const Shape4 s = x.shape4();
  if (s.c != state.channels()) {
    throw ShapeMismatch("batchnorm over " + std::to_string(state.channels()) +
                        " channels applied to " + x.shape_string());
  }
  Tensor y(x.shape());
  const std::size_t plane = s.h * s.w;
  const double count = static_cast<double>(s.n * plane);

  if (!train) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double inv_std = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
      const double g = state.gamma[c], b = state.beta[c], m = state.running_mean[c];
      for (std::size_t n = 0; n < s.n; ++n) {
        const double* in = x.data() + (n * s.c + c) * plane;
        double* out = y.data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) out[i] = g * (in[i] - m) * inv_std + b;
      }
    }
    return y;
  }

  if (cache) {
    cache->xhat = Tensor(x.shape());
    cache->inv_std.assign(s.c, 0.0);
  }
  for (std::size_t c = 0; c < s.c; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* in = x.data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum += in[i];
        sq += in[i] * in[i];
      }
    }
    const double mean = sum / count;
    double var = sq / count - mean * mean;
    if (var < 0.0) var = 0.0;  // cancellation guard
    const double inv_std = 1.0 / std::sqrt(var + state.epsilon);
    const double g = state.gamma[c], b = state.beta[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* in = x.data() + (n * s.c + c) * plane;
      double* out = y.data() + (n * s.c + c) * plane;
      double* xh = cache ? cache->xhat.data() + (n * s.c + c) * plane : nullptr;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (in[i] - mean) * inv_std;
        if (xh) xh[i] = h;
        out[i] = g * h + b;
      }
    }
    if (cache) cache->inv_std[c] = inv_std;
    state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean;
    state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * var;
  }
  return y;
}

struct BatchNormGrads {
  Tensor grad_x;
  Tensor grad_gamma;
  Tensor grad_beta;
};

inline BatchNormGrads batchnorm_backward(const BatchNormState& state, const BatchNormCache& cache,
                                         const Tensor& grad_out) {
  const Shape4 s = grad_out.shape4();
  if (cache.xhat.shape() != grad_out.shape()) {
    throw TapeMismatch("batchnorm grad_out " + grad_out.shape_string() + ", cached " +
                       cache.xhat.shape_string());
  }
  BatchNormGrads g;
  g.grad_x = Tensor(grad_out.shape());
  g.grad_gamma = Tensor({s.c});
  g.grad_beta = Tensor({s.c});
  const std::size_t plane = s.h * s.w;
  const double count = static_cast<double>(s.n * plane);

  for (std::size_t c = 0; c < s.c; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* go = grad_out.data() + (n * s.c + c) * plane;
      const double* xh = cache.xhat.data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += go[i];
        sum_gx += go[i] * xh[i];
      }
    }
    g.grad_beta[c] = sum_g;
    g.grad_gamma[c] = sum_gx;
    const double mean_g = sum_g / count;
    const double mean_gx = sum_gx / count;
    const double scale = state.gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      const double* go = grad_out.data() + (n * s.c + c) * plane;
      const double* xh = cache.xhat.data() + (n * s.c + c) * plane;
      double* gx = g.grad_x.data() + (n * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        gx[i] = scale * (go[i] - mean_g - xh[i] * mean_gx);
      }
    }
  }
  return g;
}

inline Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  const double* in = x.data();
  double* out = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return y;
}

// Subgradient at 0 is 0.
inline Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  if (!x.same_shape(grad_out)) {
    throw TapeMismatch("relu grad_out " + grad_out.shape_string() + ", input " +
                       x.shape_string());
  }
  Tensor grad_x(x.shape());
  const double* in = x.data();
  const double* go = grad_out.data();
  double* gx = grad_x.data();
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = in[i] > 0.0 ? go[i] : 0.0;
  return grad_x;
}

struct DenseParams {
  bool use_bias = false;
  Tensor weights;  // [in, units]
  Tensor bias;     // [units]
};

inline Tensor dense_forward(const Tensor& x, const DenseParams& p) {
  Tensor y = matmul(x, p.weights);
  if (p.use_bias) {
    const std::size_t n = y.extent(0), k = y.extent(1);
    if (p.bias.rank() != 1 || p.bias.extent(0) != k) {
      throw ShapeMismatch("dense bias " + p.bias.shape_string() + " for " + std::to_string(k) +
                          " units");
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) y.at2(i, j) += p.bias[j];
    }
  }
  return y;
}

struct DenseGrads {
  Tensor grad_x;
  Tensor grad_w;
  Tensor grad_b;
};

inline DenseGrads dense_backward(const Tensor& x, const DenseParams& p, const Tensor& grad_out) {
  const std::size_t n = x.extent(0), d = x.extent(1), k = p.weights.extent(1);
  if (grad_out.rank() != 2 || grad_out.extent(0) != n || grad_out.extent(1) != k) {
    throw TapeMismatch("dense grad_out " + grad_out.shape_string());
  }
  DenseGrads g;
  g.grad_x = Tensor({n, d});
  g.grad_w = Tensor({d, k});
  detail::gemm_nt(n, k, d, grad_out.data(), p.weights.data(), g.grad_x.data(), false);
  detail::gemm_tn(d, n, k, x.data(), grad_out.data(), g.grad_w.data(), false);
  if (p.use_bias) {
    g.grad_b = Tensor({k});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) g.grad_b[j] += grad_out.at2(i, j);
    }
  }
  return g;
}

// Row softmax with max subtraction, so adding a constant to a row of
// logits cannot overflow and does not change the result.
inline Tensor softmax_forward(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw ShapeMismatch("softmax expects [N,K] logits, got " + logits.shape_string());
  }
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  Tensor y({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    double m = row[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    double* out = y.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      out[j] = std::exp(row[j] - m);
      sum += out[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < k; ++j) out[j] *= inv;
  }
  return y;
}

// Full softmax Jacobian-vector product: dz_i = p_i * (g_i - sum_j g_j p_j).
inline Tensor softmax_backward(const Tensor& probs, const Tensor& grad_out) {
  if (!probs.same_shape(grad_out)) {
    throw TapeMismatch("softmax grad_out " + grad_out.shape_string() + ", probs " +
                       probs.shape_string());
  }
  const std::size_t n = probs.extent(0), k = probs.extent(1);
  Tensor grad_z({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = probs.data() + i * k;
    const double* g = grad_out.data() + i * k;
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) dot += g[j] * p[j];
    double* out = grad_z.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) out[j] = p[j] * (g[j] - dot);
  }
  return grad_z;
}

inline void check_labels(const std::vector<int>& labels, std::size_t class_count,
                         std::size_t batch) {
  if (labels.size() != batch) {
    throw ShapeMismatch("batch of " + std::to_string(batch) + " with " +
                        std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw LabelOutOfRange("label " + std::to_string(y) + " outside [0," +
                            std::to_string(class_count) + ")");
    }
  }
}

// Mean negative log likelihood over the batch: -(1/N) * sum log p[y].
inline double cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  const std::size_t n = probs.extent(0), k = probs.extent(1);
  check_labels(labels, k, n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = probs.at2(i, static_cast<std::size_t>(labels[i]));
    if (!(p > 0.0)) {
      throw NonFiniteValue("zero probability for label " + std::to_string(labels[i]) +
                           " in row " + std::to_string(i));
    }
    loss -= std::log(p);
  }
  return loss / static_cast<double>(n);
}

// Combined softmax + cross-entropy gradient w.r.t. the logits:
// (p - onehot(y)) / N.
inline Tensor cross_entropy_logit_grad(const Tensor& probs, const std::vector<int>& labels) {
  const std::size_t n = probs.extent(0), k = probs.extent(1);
  check_labels(labels, k, n);
  Tensor grad({n, k});
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      grad.at2(i, j) = probs.at2(i, j) * inv_n;
    }
    grad.at2(i, static_cast<std::size_t>(labels[i])) -= inv_n;
  }
  return grad;
}

}  // namespace glyphnet
