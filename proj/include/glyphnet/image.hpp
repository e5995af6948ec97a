#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "glyphnet/errors.hpp"
#include "glyphnet/tensor.hpp"

namespace glyphnet {

// Bilinear resample of a [C,H,W] image to [C,32,32] with half-pixel
// centers: source coordinate of output pixel x is (x+0.5)*W/32 - 0.5,
// clamped to the border. A 32x32 input maps onto itself exactly. Output is
// clamped to [0,1].
inline Tensor rescale_to_32(const Tensor& image) {
  if (image.rank() != 3) {
    throw ShapeMismatch("rescale_to_32 expects [C,H,W], got " + image.shape_string());
  }
  const std::size_t c = image.extent(0), h = image.extent(1), w = image.extent(2);
  const std::size_t out_hw = 32;
  Tensor out({c, out_hw, out_hw});
  const double sy = static_cast<double>(h) / static_cast<double>(out_hw);
  const double sx = static_cast<double>(w) / static_cast<double>(out_hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = image.data() + ch * h * w;
    double* dst = out.data() + ch * out_hw * out_hw;
    for (std::size_t oy = 0; oy < out_hw; ++oy) {
      double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
      fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
      const std::size_t y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t ox = 0; ox < out_hw; ++ox) {
        double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
        fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
        const std::size_t x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
        const double bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
        dst[oy * out_hw + ox] = std::clamp(top * (1.0 - wy) + bot * wy, 0.0, 1.0);
      }
    }
  }
  return out;
}

// Decodes a raster file to a [channels,H,W] tensor in [0,1]. channels is
// 1 (luminance) or 3 (RGB; gray sources are replicated).
inline Tensor decode_image(const std::string& path, std::size_t channels) {
  if (channels != 1 && channels != 3) {
    throw ValidationError("image channels must be 1 or 3");
  }
  cv::Mat mat = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (mat.empty()) {
    throw UnreadableImage("cannot decode image '" + path + "'");
  }
  if (mat.depth() != CV_8U) {
    mat.convertTo(mat, CV_8U);
  }
  const std::size_t h = static_cast<std::size_t>(mat.rows);
  const std::size_t w = static_cast<std::size_t>(mat.cols);
  Tensor out({channels, h, w});
  const double inv = 1.0 / 255.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double r, g, b;
      if (mat.channels() == 1) {
        r = g = b = mat.at<unsigned char>(static_cast<int>(y), static_cast<int>(x)) * inv;
      } else {
        // OpenCV decodes in BGR(A) order
        const unsigned char* px = mat.ptr<unsigned char>(static_cast<int>(y)) +
                                  static_cast<std::size_t>(mat.channels()) * x;
        b = px[0] * inv;
        g = px[1] * inv;
        r = px[2] * inv;
      }
      if (channels == 3) {
        out.data()[0 * h * w + y * w + x] = r;
        out.data()[1 * h * w + y * w + x] = g;
        out.data()[2 * h * w + y * w + x] = b;
      } else {
        out.data()[y * w + x] = 0.299 * r + 0.587 * g + 0.114 * b;
      }
    }
  }
  return out;
}

}  // namespace glyphnet
