#pragma once

// Independent reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <vector>

#include "iotids/featurizer.hpp"
#include "iotids/nn/tensor.hpp"

namespace oracle {

/// Half-pixel-centre bilinear sample of a 16x16x3 byte image, one output
/// pixel at a time, divided by 255.
inline double bilinear_pixel(const iotids::ImageTensor& img, std::size_t side, std::size_t r, std::size_t c,
                             std::size_t ch) {
  const double scale = 16.0 / static_cast<double>(side);
  const double sy = std::max(0.0, (static_cast<double>(r) + 0.5) * scale - 0.5);
  const double sx = std::max(0.0, (static_cast<double>(c) + 0.5) * scale - 0.5);
  const auto y0 = static_cast<std::size_t>(std::floor(sy));
  const auto x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min<std::size_t>(y0 + 1, 15);
  const std::size_t x1 = std::min<std::size_t>(x0 + 1, 15);
  const double wy = sy - static_cast<double>(y0);
  const double wx = sx - static_cast<double>(x0);
  const double p00 = img.pixels[(y0 * 16 + x0) * 3 + ch];
  const double p01 = img.pixels[(y0 * 16 + x1) * 3 + ch];
  const double p10 = img.pixels[(y1 * 16 + x0) * 3 + ch];
  const double p11 = img.pixels[(y1 * 16 + x1) * 3 + ch];
  const double v = (1.0 - wy) * ((1.0 - wx) * p00 + wx * p01) + wy * ((1.0 - wx) * p10 + wx * p11);
  return v / 255.0;
}

using T = iotids::nn::Tensor<double>;
using iotids::nn::Index;

inline double at(const T& t, Index n, Index h, Index w, Index c) { return t.at(n, h, w, c); }

/// Direct-loop NHWC x HWIO convolution with explicit padding offsets.
inline T conv2d(const T& x, const T& k, const T* bias, Index stride, Index pad_top, Index pad_left, Index oh,
                Index ow) {
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const Index kh = k.dim(0), kw = k.dim(1), cout = k.dim(3);
  T y({n, oh, ow, cout});
  for (Index b = 0; b < n; ++b)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j)
        for (Index o = 0; o < cout; ++o) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (Index u = 0; u < kh; ++u)
            for (Index v = 0; v < kw; ++v) {
              const Index yy = i * stride + u - pad_top;
              const Index xx = j * stride + v - pad_left;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              for (Index c = 0; c < cin; ++c) acc += x.at(b, yy, xx, c) * k[((u * kw + v) * cin + c) * cout + o];
            }
          y.at(b, i, j, o) = acc;
        }
  return y;
}

/// Stride-1 "same" convolution (odd kernel).
inline T conv_same(const T& x, const T& k, const T* bias = nullptr) {
  return conv2d(x, k, bias, 1, k.dim(0) / 2, k.dim(1) / 2, x.dim(1), x.dim(2));
}

/// Per-channel [kh, kw, C] depthwise "same" convolution, stride 1.
inline T depthwise_same(const T& x, const T& k) {
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), ch = x.dim(3);
  const Index kh = k.dim(0), kw = k.dim(1);
  T y({n, h, w, ch});
  for (Index b = 0; b < n; ++b)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        for (Index c = 0; c < ch; ++c) {
          double acc = 0;
          for (Index u = 0; u < kh; ++u)
            for (Index v = 0; v < kw; ++v) {
              const Index yy = i + u - kh / 2, xx = j + v - kw / 2;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              acc += x.at(b, yy, xx, c) * k[(u * kw + v) * ch + c];
            }
          y.at(b, i, j, c) = acc;
        }
  return y;
}

inline T relu(T x) {
  for (Index i = 0; i < x.size(); ++i) x[i] = std::max(0.0, x[i]);
  return x;
}

inline T add(T a, const T& b) {
  for (Index i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline T concat(const std::vector<T>& parts) {
  const Index n = parts[0].dim(0), h = parts[0].dim(1), w = parts[0].dim(2);
  Index total = 0;
  for (const auto& p : parts) total += p.dim(3);
  T y({n, h, w, total});
  for (Index b = 0; b < n; ++b)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        Index off = 0;
        for (const auto& p : parts) {
          for (Index c = 0; c < p.dim(3); ++c) y.at(b, i, j, off + c) = p.at(b, i, j, c);
          off += p.dim(3);
        }
      }
  return y;
}

/// Inverse-frequency class weights written out longhand.
inline std::array<double, 3> class_weights(std::array<double, 3> counts) {
  const double total = counts[0] + counts[1] + counts[2];
  return {total / counts[0], total / counts[1], total / counts[2]};
}

}  // namespace oracle
