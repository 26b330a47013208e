#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "iotids/nn/tape.hpp"

namespace iotids::nn {

// ---------------------------------------------------------------------------
// Shape checks

namespace detail {

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(fmt::format("{}: incompatible shapes {} and {}", op, shape_string(a), shape_string(b)));
}

inline void expect_rank(const char* op, const Shape& s, Index rank) {
  if (static_cast<Index>(s.size()) != rank) {
    throw std::invalid_argument(fmt::format("{}: expected rank {}, got shape {}", op, rank, shape_string(s)));
  }
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return Scalar(1) / (Scalar(1) + std::exp(-z));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution geometry

enum class Padding { Valid, Same };

struct Conv2dOptions {
  Index stride = 1;
  Padding padding = Padding::Same;
};

struct ConvGeometry {
  Index in_h = 0, in_w = 0;
  Index kernel_h = 0, kernel_w = 0;
  Index stride = 1;
  Index out_h = 0, out_w = 0;
  Index pad_top = 0, pad_left = 0;
};

/// "same": out = ceil(in / stride), padding split with the extra row/column
/// at the bottom/right. "valid": out = (in - k) / stride + 1.
inline ConvGeometry conv_geometry(Index in_h, Index in_w, Index kernel_h, Index kernel_w, Conv2dOptions options) {
  if (options.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvGeometry g{in_h, in_w, kernel_h, kernel_w, options.stride, 0, 0, 0, 0};
  if (options.padding == Padding::Same) {
    g.out_h = (in_h + options.stride - 1) / options.stride;
    g.out_w = (in_w + options.stride - 1) / options.stride;
    g.pad_top = std::max<Index>((g.out_h - 1) * options.stride + kernel_h - in_h, 0) / 2;
    g.pad_left = std::max<Index>((g.out_w - 1) * options.stride + kernel_w - in_w, 0) / 2;
  } else {
    if (in_h < kernel_h || in_w < kernel_w) {
      throw std::invalid_argument(
          fmt::format("conv2d: {}x{} kernel does not fit a {}x{} input", kernel_h, kernel_w, in_h, in_w));
    }
    g.out_h = (in_h - kernel_h) / options.stride + 1;
    g.out_w = (in_w - kernel_w) / options.stride + 1;
  }
  return g;
}

namespace detail {

/// Unfold one HWC image into rows of receptive fields, (ky, kx, c) order.
template <typename Scalar>
void im2col(const Scalar* image, Index channels, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.resize(g.out_h * g.out_w, g.kernel_h * g.kernel_w * channels);
  for (Index oy = 0; oy < g.out_h; ++oy) {
    for (Index ox = 0; ox < g.out_w; ++ox) {
      Scalar* dst = cols.row(oy * g.out_w + ox).data();
      for (Index ky = 0; ky < g.kernel_h; ++ky) {
        const Index iy = oy * g.stride - g.pad_top + ky;
        for (Index kx = 0; kx < g.kernel_w; ++kx, dst += channels) {
          const Index ix = ox * g.stride - g.pad_left + kx;
          if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) {
            std::fill(dst, dst + channels, Scalar(0));
          } else {
            std::copy_n(image + (iy * g.in_w + ix) * channels, channels, dst);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Index channels, const ConvGeometry& g, Scalar* image) {
  for (Index oy = 0; oy < g.out_h; ++oy) {
    for (Index ox = 0; ox < g.out_w; ++ox) {
      const Scalar* src = cols.row(oy * g.out_w + ox).data();
      for (Index ky = 0; ky < g.kernel_h; ++ky) {
        const Index iy = oy * g.stride - g.pad_top + ky;
        for (Index kx = 0; kx < g.kernel_w; ++kx, src += channels) {
          const Index ix = ox * g.stride - g.pad_left + kx;
          if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
          Scalar* dst = image + (iy * g.in_w + ix) * channels;
          for (Index c = 0; c < channels; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad_top == 0 && g.pad_left == 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolutions

/// Cross-correlation of an NHWC input with an HWIO kernel, optional bias.
template <typename Scalar>
Var conv2d(Tape<Scalar>& tape, Var input, Var kernel, Var bias = Var::none(), Conv2dOptions options = {}) {
  using TensorT = Tensor<Scalar>;
  using Mat = RowMatrix<Scalar>;
  const TensorT& x = tape.value(input);
  const TensorT& w = tape.value(kernel);
  detail::expect_rank("conv2d", x.shape(), 4);
  detail::expect_rank("conv2d", w.shape(), 4);
  if (w.dim(2) != x.dim(3)) detail::shape_mismatch("conv2d", x.shape(), w.shape());
  const Index n_batch = x.dim(0), channels = x.dim(3), out_channels = w.dim(3);
  if (bias.valid() && tape.value(bias).size() != out_channels) {
    detail::shape_mismatch("conv2d bias", w.shape(), tape.value(bias).shape());
  }
  const ConvGeometry g = conv_geometry(x.dim(1), x.dim(2), w.dim(0), w.dim(1), options);
  const Index patch = g.kernel_h * g.kernel_w * channels;
  const Index pixels_in = g.in_h * g.in_w, pixels_out = g.out_h * g.out_w;

  TensorT y({n_batch, g.out_h, g.out_w, out_channels});
  Eigen::Map<const Mat> wm(w.raw(), patch, out_channels);
  const bool pointwise = detail::is_pointwise(g);
  Mat cols;
  for (Index n = 0; n < n_batch; ++n) {
    Eigen::Map<Mat> yn(y.raw() + n * pixels_out * out_channels, pixels_out, out_channels);
    if (pointwise) {
      yn.noalias() = Eigen::Map<const Mat>(x.raw() + n * pixels_in * channels, pixels_in, channels) * wm;
    } else {
      detail::im2col(x.raw() + n * pixels_in * channels, channels, g, cols);
      yn.noalias() = cols * wm;
    }
    if (bias.valid()) yn.rowwise() += tape.value(bias).data().transpose();
  }

  return tape.record(std::move(y), {input, kernel, bias}, [=](Tape<Scalar>& t, const TensorT& dy) {
    const TensorT& xv = t.value(input);
    const TensorT& wv = t.value(kernel);
    Eigen::Map<const Mat> wmat(wv.raw(), patch, out_channels);
    const bool want_x = t.requires_grad(input);
    const bool want_w = t.requires_grad(kernel);
    const bool want_b = bias.valid() && t.requires_grad(bias);
    Scalar* dx = want_x ? t.grad(input).raw() : nullptr;
    Mat dw_acc = Mat::Zero(patch, out_channels);
    Mat col_buf, dcols;
    for (Index n = 0; n < n_batch; ++n) {
      Eigen::Map<const Mat> dyn(dy.raw() + n * pixels_out * out_channels, pixels_out, out_channels);
      if (pointwise) {
        Eigen::Map<const Mat> xn(xv.raw() + n * pixels_in * channels, pixels_in, channels);
        if (want_w) dw_acc.noalias() += xn.transpose() * dyn;
        if (want_x) Eigen::Map<Mat>(dx + n * pixels_in * channels, pixels_in, channels).noalias() += dyn * wmat.transpose();
        continue;
      }
      if (want_w) {
        detail::im2col(xv.raw() + n * pixels_in * channels, channels, g, col_buf);
        dw_acc.noalias() += col_buf.transpose() * dyn;
      }
      if (want_x) {
        dcols.noalias() = dyn * wmat.transpose();
        detail::col2im_add(dcols, channels, g, dx + n * pixels_in * channels);
      }
    }
    if (want_w) Eigen::Map<Mat>(t.grad(kernel).raw(), patch, out_channels) += dw_acc;
    if (want_b) t.grad(bias).data() += dy.matrix().colwise().sum().transpose();
  });
}

/// Per-channel convolution with a [kh, kw, channels] kernel.
template <typename Scalar>
Var depthwise_conv2d(Tape<Scalar>& tape, Var input, Var kernel, Var bias = Var::none(), Conv2dOptions options = {}) {
  using TensorT = Tensor<Scalar>;
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const TensorT& x = tape.value(input);
  const TensorT& w = tape.value(kernel);
  detail::expect_rank("depthwise_conv2d", x.shape(), 4);
  detail::expect_rank("depthwise_conv2d", w.shape(), 3);
  if (w.dim(2) != x.dim(3)) detail::shape_mismatch("depthwise_conv2d", x.shape(), w.shape());
  const Index n_batch = x.dim(0), channels = x.dim(3);
  if (bias.valid() && tape.value(bias).size() != channels) {
    detail::shape_mismatch("depthwise_conv2d bias", w.shape(), tape.value(bias).shape());
  }
  const ConvGeometry g = conv_geometry(x.dim(1), x.dim(2), w.dim(0), w.dim(1), options);

  // Calls fn(input pixel offset, output pixel offset, kernel tap offset) for every valid tap.
  auto for_each_tap = [g, channels](Index n, auto&& fn) {
    for (Index oy = 0; oy < g.out_h; ++oy) {
      for (Index ox = 0; ox < g.out_w; ++ox) {
        const Index out_off = ((n * g.out_h + oy) * g.out_w + ox) * channels;
        for (Index ky = 0; ky < g.kernel_h; ++ky) {
          const Index iy = oy * g.stride - g.pad_top + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index kx = 0; kx < g.kernel_w; ++kx) {
            const Index ix = ox * g.stride - g.pad_left + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            fn(((n * g.in_h + iy) * g.in_w + ix) * channels, out_off, (ky * g.kernel_w + kx) * channels);
          }
        }
      }
    }
  };

  TensorT y({n_batch, g.out_h, g.out_w, channels});
  for (Index n = 0; n < n_batch; ++n) {
    for_each_tap(n, [&](Index in_off, Index out_off, Index k_off) {
      Eigen::Map<Arr>(y.raw() + out_off, channels) +=
          Eigen::Map<const Arr>(x.raw() + in_off, channels) * Eigen::Map<const Arr>(w.raw() + k_off, channels);
    });
  }
  if (bias.valid()) y.matrix().rowwise() += tape.value(bias).data().transpose();

  return tape.record(std::move(y), {input, kernel, bias}, [=](Tape<Scalar>& t, const TensorT& dy) {
    const TensorT& xv = t.value(input);
    const TensorT& wv = t.value(kernel);
    const bool want_x = t.requires_grad(input);
    const bool want_w = t.requires_grad(kernel);
    Scalar* dx = want_x ? t.grad(input).raw() : nullptr;
    Scalar* dw = want_w ? t.grad(kernel).raw() : nullptr;
    for (Index n = 0; n < n_batch; ++n) {
      for_each_tap(n, [&](Index in_off, Index out_off, Index k_off) {
        Eigen::Map<const Arr> g_out(dy.raw() + out_off, channels);
        if (want_x) Eigen::Map<Arr>(dx + in_off, channels) += g_out * Eigen::Map<const Arr>(wv.raw() + k_off, channels);
        if (want_w) Eigen::Map<Arr>(dw + k_off, channels) += g_out * Eigen::Map<const Arr>(xv.raw() + in_off, channels);
      });
    }
    if (bias.valid() && t.requires_grad(bias)) t.grad(bias).data() += dy.matrix().colwise().sum().transpose();
  });
}

/// Depthwise 3x3 (or any k x k) followed by a 1x1 channel-mixing convolution.
template <typename Scalar>
Var separable_conv(Tape<Scalar>& tape, Var input, Var depthwise_kernel, Var pointwise_kernel,
                   Var pointwise_bias = Var::none(), Conv2dOptions options = {}) {
  const auto& pw = tape.value(pointwise_kernel);
  if (pw.rank() != 4 || pw.dim(0) != 1 || pw.dim(1) != 1) {
    throw std::invalid_argument(fmt::format("separable_conv: pointwise kernel must be 1x1xCxO, got {}",
                                            shape_string(pw.shape())));
  }
  const Var depthwise = depthwise_conv2d(tape, input, depthwise_kernel, Var::none(), options);
  return conv2d(tape, depthwise, pointwise_kernel, pointwise_bias, Conv2dOptions{1, Padding::Same});
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <typename Scalar>
Var relu(Tape<Scalar>& tape, Var input) {
  using TensorT = Tensor<Scalar>;
  TensorT y = tape.value(input);
  y.data() = y.data().cwiseMax(Scalar(0));
  return tape.record(std::move(y), {input}, [=](Tape<Scalar>& t, const TensorT& dy) {
    const auto& x = t.value(input).data();
    t.grad(input).data().array() += (x.array() > Scalar(0)).select(dy.data().array(), Scalar(0));
  });
}

template <typename Scalar>
Var add(Tape<Scalar>& tape, Var a, Var b) {
  using TensorT = Tensor<Scalar>;
  const TensorT& va = tape.value(a);
  const TensorT& vb = tape.value(b);
  if (va.shape() != vb.shape()) detail::shape_mismatch("add", va.shape(), vb.shape());
  TensorT y(va.shape(), va.data() + vb.data());
  return tape.record(std::move(y), {a, b}, [=](Tape<Scalar>& t, const TensorT& dy) {
    if (t.requires_grad(a)) t.grad(a).data() += dy.data();
    if (t.requires_grad(b)) t.grad(b).data() += dy.data();
  });
}

/// Concatenate along the last (channel) axis; leading axes must agree.
template <typename Scalar>
Var concat_channels(Tape<Scalar>& tape, const std::vector<Var>& inputs) {
  using TensorT = Tensor<Scalar>;
  if (inputs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  Shape lead = tape.value(inputs.front()).shape();
  lead.pop_back();
  Index total = 0;
  std::vector<Index> widths;
  for (Var v : inputs) {
    Shape s = tape.value(v).shape();
    const Index c = s.back();
    s.pop_back();
    if (s != lead) detail::shape_mismatch("concat_channels", tape.value(inputs.front()).shape(), tape.value(v).shape());
    widths.push_back(c);
    total += c;
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  TensorT y(out_shape);
  Index offset = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    y.matrix().middleCols(offset, widths[i]) = tape.value(inputs[i]).matrix();
    offset += widths[i];
  }
  return tape.record(std::move(y), inputs, [=](Tape<Scalar>& t, const TensorT& dy) {
    Index off = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (t.requires_grad(inputs[i])) t.grad(inputs[i]).matrix() += dy.matrix().middleCols(off, widths[i]);
      off += widths[i];
    }
  });
}

/// 2x2 average pooling, stride 2, no padding (odd trailing row/column dropped).
template <typename Scalar>
Var avg_pool2d(Tape<Scalar>& tape, Var input) {
  using TensorT = Tensor<Scalar>;
  const TensorT& x = tape.value(input);
  detail::expect_rank("avg_pool2d", x.shape(), 4);
  const Index n_batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h < 2 || w < 2) throw std::invalid_argument(fmt::format("avg_pool2d: input {} too small", shape_string(x.shape())));
  const Index oh = h / 2, ow = w / 2;
  TensorT y({n_batch, oh, ow, c});
  for (Index n = 0; n < n_batch; ++n)
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox)
        for (Index k = 0; k < c; ++k)
          y.at(n, oy, ox, k) = Scalar(0.25) * (x.at(n, 2 * oy, 2 * ox, k) + x.at(n, 2 * oy, 2 * ox + 1, k) +
                                               x.at(n, 2 * oy + 1, 2 * ox, k) + x.at(n, 2 * oy + 1, 2 * ox + 1, k));
  return tape.record(std::move(y), {input}, [=](Tape<Scalar>& t, const TensorT& dy) {
    TensorT& dx = t.grad(input);
    for (Index n = 0; n < n_batch; ++n)
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox)
          for (Index k = 0; k < c; ++k) {
            const Scalar g = Scalar(0.25) * dy.at(n, oy, ox, k);
            dx.at(n, 2 * oy, 2 * ox, k) += g;
            dx.at(n, 2 * oy, 2 * ox + 1, k) += g;
            dx.at(n, 2 * oy + 1, 2 * ox, k) += g;
            dx.at(n, 2 * oy + 1, 2 * ox + 1, k) += g;
          }
  });
}

/// [N, H, W, C] -> [N, C]
template <typename Scalar>
Var global_avg_pool(Tape<Scalar>& tape, Var input) {
  using TensorT = Tensor<Scalar>;
  const TensorT& x = tape.value(input);
  detail::expect_rank("global_avg_pool", x.shape(), 4);
  const Index n_batch = x.dim(0), pixels = x.dim(1) * x.dim(2), c = x.dim(3);
  TensorT y({n_batch, c});
  for (Index n = 0; n < n_batch; ++n) {
    Eigen::Map<const RowMatrix<Scalar>> xn(x.raw() + n * pixels * c, pixels, c);
    y.matrix().row(n) = xn.colwise().mean();
  }
  return tape.record(std::move(y), {input}, [=](Tape<Scalar>& t, const TensorT& dy) {
    Scalar* dx = t.grad(input).raw();
    const Scalar scale = Scalar(1) / static_cast<Scalar>(pixels);
    for (Index n = 0; n < n_batch; ++n) {
      Eigen::Map<RowMatrix<Scalar>> dxn(dx + n * pixels * c, pixels, c);
      dxn.rowwise() += scale * dy.matrix().row(n);
    }
  });
}

/// Rows [begin, begin + count) along the leading axis.
template <typename Scalar>
Var slice_rows(Tape<Scalar>& tape, Var input, Index begin, Index count) {
  using TensorT = Tensor<Scalar>;
  const TensorT& x = tape.value(input);
  if (begin < 0 || count <= 0 || begin + count > x.dim(0)) {
    throw std::invalid_argument(fmt::format("slice_rows: [{}, {}) out of range for {}", begin, begin + count,
                                            shape_string(x.shape())));
  }
  const Index stride = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  TensorT y(shape, x.data().segment(begin * stride, count * stride));
  return tape.record(std::move(y), {input}, [=](Tape<Scalar>& t, const TensorT& dy) {
    t.grad(input).data().segment(begin * stride, count * stride) += dy.data();
  });
}

/// out[i] = input[indices[i]] along the leading axis; rows may repeat.
template <typename Scalar>
Var gather_rows(Tape<Scalar>& tape, Var input, std::vector<Index> indices) {
  using TensorT = Tensor<Scalar>;
  const TensorT& x = tape.value(input);
  if (indices.empty()) throw std::invalid_argument("gather_rows: no indices");
  const Index rows = x.dim(0);
  const Index stride = x.size() / rows;
  Shape shape = x.shape();
  shape[0] = static_cast<Index>(indices.size());
  TensorT y(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= rows) {
      throw std::invalid_argument(fmt::format("gather_rows: index {} out of range for {}", indices[i],
                                              shape_string(x.shape())));
    }
    y.data().segment(static_cast<Index>(i) * stride, stride) = x.data().segment(indices[i] * stride, stride);
  }
  return tape.record(std::move(y), {input}, [=, indices = std::move(indices)](Tape<Scalar>& t, const TensorT& dy) {
    auto& dx = t.grad(input).data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      dx.segment(indices[i] * stride, stride) += dy.data().segment(static_cast<Index>(i) * stride, stride);
    }
  });
}

/// Columns [begin, begin + count) of a [N, K] tensor.
template <typename Scalar>
Var slice_columns(Tape<Scalar>& tape, Var input, Index begin, Index count) {
  using TensorT = Tensor<Scalar>;
  const TensorT& x = tape.value(input);
  detail::expect_rank("slice_columns", x.shape(), 2);
  if (begin < 0 || count <= 0 || begin + count > x.dim(1)) {
    throw std::invalid_argument(fmt::format("slice_columns: [{}, {}) out of range for {}", begin, begin + count,
                                            shape_string(x.shape())));
  }
  TensorT y({x.dim(0), count});
  y.matrix() = x.matrix().middleCols(begin, count);
  return tape.record(std::move(y), {input}, [=](Tape<Scalar>& t, const TensorT& dy) {
    t.grad(input).matrix().middleCols(begin, count) += dy.matrix();
  });
}

/// x [N, D] * w [D, O] + b [O]
template <typename Scalar>
Var dense(Tape<Scalar>& tape, Var input, Var weights, Var bias = Var::none()) {
  using TensorT = Tensor<Scalar>;
  const TensorT& x = tape.value(input);
  const TensorT& w = tape.value(weights);
  detail::expect_rank("dense", x.shape(), 2);
  detail::expect_rank("dense", w.shape(), 2);
  if (x.dim(1) != w.dim(0)) detail::shape_mismatch("dense", x.shape(), w.shape());
  if (bias.valid() && tape.value(bias).size() != w.dim(1)) {
    detail::shape_mismatch("dense bias", w.shape(), tape.value(bias).shape());
  }
  TensorT y({x.dim(0), w.dim(1)});
  y.matrix().noalias() = x.matrix() * w.matrix();
  if (bias.valid()) y.matrix().rowwise() += tape.value(bias).data().transpose();
  return tape.record(std::move(y), {input, weights, bias}, [=](Tape<Scalar>& t, const TensorT& dy) {
    if (t.requires_grad(input)) t.grad(input).matrix().noalias() += dy.matrix() * t.value(weights).matrix().transpose();
    if (t.requires_grad(weights)) t.grad(weights).matrix().noalias() += t.value(input).matrix().transpose() * dy.matrix();
    if (bias.valid() && t.requires_grad(bias)) t.grad(bias).data() += dy.matrix().colwise().sum().transpose();
  });
}

/// Row-wise softmax of [N, K] logits.
template <typename Scalar>
Var softmax(Tape<Scalar>& tape, Var logits) {
  using TensorT = Tensor<Scalar>;
  const TensorT& z = tape.value(logits);
  detail::expect_rank("softmax", z.shape(), 2);
  TensorT p(z.shape());
  for (Index n = 0; n < z.dim(0); ++n) {
    auto row = z.matrix().row(n);
    const auto e = (row.array() - row.maxCoeff()).exp();
    p.matrix().row(n) = e / e.sum();
  }
  return tape.record(std::move(p), {logits}, [=](Tape<Scalar>& t, const TensorT& dp) {
    // The output value is not reachable from here; recompute it.
    const TensorT& zv = t.value(logits);
    auto dz = t.grad(logits).matrix();
    for (Index n = 0; n < zv.dim(0); ++n) {
      auto row = zv.matrix().row(n);
      const Eigen::Array<Scalar, 1, Eigen::Dynamic> e = (row.array() - row.maxCoeff()).exp();
      const Eigen::Array<Scalar, 1, Eigen::Dynamic> pn = e / e.sum();
      const Scalar dot = (dp.matrix().row(n).array() * pn).sum();
      dz.row(n).array() += pn * (dp.matrix().row(n).array() - dot);
    }
  });
}

inline constexpr double kLogFloor = 1e-12;

/// mean_n( -weight_n * log(max(p[n, label_n], 1e-12)) ) as a [1] tensor.
template <typename Scalar>
Var weighted_cross_entropy(Tape<Scalar>& tape, Var probabilities, std::span<const Index> labels,
                           std::span<const Scalar> weights) {
  using TensorT = Tensor<Scalar>;
  const TensorT& p = tape.value(probabilities);
  detail::expect_rank("weighted_cross_entropy", p.shape(), 2);
  const Index n_batch = p.dim(0);
  if (static_cast<Index>(labels.size()) != n_batch || static_cast<Index>(weights.size()) != n_batch) {
    throw std::invalid_argument(fmt::format("weighted_cross_entropy: {} rows but {} labels and {} weights", n_batch,
                                            labels.size(), weights.size()));
  }
  Scalar loss = 0;
  for (Index n = 0; n < n_batch; ++n) {
    if (labels[n] < 0 || labels[n] >= p.dim(1)) throw std::invalid_argument("weighted_cross_entropy: label out of range");
    if (!(weights[n] > Scalar(0))) throw std::invalid_argument("weighted_cross_entropy: class weight must be positive");
    loss -= weights[n] * std::log(std::max(p.matrix()(n, labels[n]), Scalar(kLogFloor)));
  }
  loss /= static_cast<Scalar>(n_batch);
  std::vector<Index> label_copy(labels.begin(), labels.end());
  std::vector<Scalar> weight_copy(weights.begin(), weights.end());
  return tape.record(TensorT::constant({1}, loss), {probabilities},
                     [=, label_copy = std::move(label_copy), weight_copy = std::move(weight_copy)](
                         Tape<Scalar>& t, const TensorT& dl) {
                       const auto& pv = t.value(probabilities).matrix();
                       auto dp = t.grad(probabilities).matrix();
                       const Scalar scale = dl[0] / static_cast<Scalar>(n_batch);
                       for (Index n = 0; n < n_batch; ++n) {
                         const Scalar pn = pv(n, label_copy[n]);
                         if (pn > Scalar(kLogFloor)) dp(n, label_copy[n]) -= scale * weight_copy[n] / pn;
                       }
                     });
}

/// sum(x * weights) as a [1] tensor; weights is a constant of x's shape.
template <typename Scalar>
Var inner_product(Tape<Scalar>& tape, Var input, const Tensor<Scalar>& weights) {
  using TensorT = Tensor<Scalar>;
  const TensorT& x = tape.value(input);
  if (x.shape() != weights.shape()) detail::shape_mismatch("inner_product", x.shape(), weights.shape());
  return tape.record(TensorT::constant({1}, x.data().dot(weights.data())), {input},
                     [=](Tape<Scalar>& t, const TensorT& dl) { t.grad(input).data() += dl[0] * weights.data(); });
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class BatchNormMode { Train, Eval };

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.9;  ///< running = momentum * running + (1 - momentum) * batch
};

/// Normalizes over every axis but the last. Train mode uses the batch
/// statistics (biased variance) and updates the running estimates; eval mode
/// uses the running estimates.
template <typename Scalar>
Var batch_norm(Tape<Scalar>& tape, Var input, Var gamma, Var beta, Parameter<Scalar>& running_mean,
               Parameter<Scalar>& running_var, BatchNormMode mode, BatchNormOptions options = {}) {
  using TensorT = Tensor<Scalar>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  const TensorT& x = tape.value(input);
  const Index channels = x.shape().back();
  const Index count = x.size() / channels;
  if (count == 0) throw std::invalid_argument("batch_norm: empty batch");
  if (tape.value(gamma).size() != channels || tape.value(beta).size() != channels ||
      running_mean.value.size() != channels || running_var.value.size() != channels) {
    detail::shape_mismatch("batch_norm", x.shape(), tape.value(gamma).shape());
  }
  const auto xm = x.matrix();
  RowVec mean, var;
  if (mode == BatchNormMode::Train) {
    mean = xm.colwise().mean();
    var = (xm.rowwise() - mean).array().square().colwise().mean().matrix();
    const auto m = static_cast<Scalar>(options.momentum);
    running_mean.value.data() = m * running_mean.value.data() + (Scalar(1) - m) * mean.transpose();
    running_var.value.data() = m * running_var.value.data() + (Scalar(1) - m) * var.transpose();
  } else {
    mean = running_mean.value.data().transpose();
    var = running_var.value.data().transpose();
  }
  const RowVec inv_std = (var.array() + static_cast<Scalar>(options.epsilon)).rsqrt().matrix();
  RowMatrix<Scalar> xhat = (xm.rowwise() - mean).array().rowwise() * inv_std.array();
  TensorT y(x.shape());
  y.matrix() = (xhat.array().rowwise() * tape.value(gamma).data().transpose().array()).rowwise() +
               tape.value(beta).data().transpose().array();

  TensorT xhat_t(x.shape());
  xhat_t.matrix() = std::move(xhat);
  return tape.record(std::move(y), {input, gamma, beta},
                     [=, xhat_t = std::move(xhat_t)](Tape<Scalar>& t, const TensorT& dy) {
                       const auto dym = dy.matrix();
                       const auto xh = xhat_t.matrix();
                       if (t.requires_grad(gamma)) {
                         t.grad(gamma).data() += (dym.array() * xh.array()).colwise().sum().transpose().matrix();
                       }
                       if (t.requires_grad(beta)) t.grad(beta).data() += dym.colwise().sum().transpose();
                       if (!t.requires_grad(input)) return;
                       const RowVec g = t.value(gamma).data().transpose();
                       RowMatrix<Scalar> dxhat = dym.array().rowwise() * g.array();
                       auto dx = t.grad(input).matrix();
                       if (mode == BatchNormMode::Eval) {
                         dx.array() += dxhat.array().rowwise() * inv_std.array();
                         return;
                       }
                       const auto m = static_cast<Scalar>(count);
                       const RowVec sum_d = dxhat.colwise().sum();
                       const RowVec sum_dx = (dxhat.array() * xh.array()).colwise().sum().matrix();
                       dx.array() += ((m * dxhat.array()).rowwise() - sum_d.array() -
                                      xh.array().rowwise() * sum_dx.array())
                                         .rowwise() *
                                     (inv_std.array() / m);
                     });
}

// ---------------------------------------------------------------------------
// Composite blocks

struct InceptionBranches {
  Var kernel1x1, kernel3x3, kernel5x5;
  Var bias1x1 = Var::none(), bias3x3 = Var::none(), bias5x5 = Var::none();
};

/// Parallel 1x1 / 3x3 / 5x5 "same" convolutions concatenated along channels.
template <typename Scalar>
Var inception_block(Tape<Scalar>& tape, Var input, const InceptionBranches& branches) {
  auto check = [&](Var kernel, Index size) {
    const auto& k = tape.value(kernel);
    if (k.rank() != 4 || k.dim(0) != size || k.dim(1) != size) {
      throw std::invalid_argument(fmt::format("inception_block: expected a {0}x{0} kernel, got {1}", size,
                                              shape_string(k.shape())));
    }
  };
  check(branches.kernel1x1, 1);
  check(branches.kernel3x3, 3);
  check(branches.kernel5x5, 5);
  const Conv2dOptions same{1, Padding::Same};
  const Var a = conv2d(tape, input, branches.kernel1x1, branches.bias1x1, same);
  const Var b = conv2d(tape, input, branches.kernel3x3, branches.bias3x3, same);
  const Var c = conv2d(tape, input, branches.kernel5x5, branches.bias5x5, same);
  return concat_channels(tape, {a, b, c});
}

struct ResidualWeights {
  Var conv1, bias1 = Var::none();
  Var conv2, bias2 = Var::none();
  Var projection = Var::none(), projection_bias = Var::none();  ///< 1x1, when channels change
};

/// conv2(relu(conv1(x))) + skip(x), skip = identity or a 1x1 projection.
template <typename Scalar>
Var residual_block(Tape<Scalar>& tape, Var input, const ResidualWeights& w) {
  const Conv2dOptions same{1, Padding::Same};
  const Var hidden = relu(tape, conv2d(tape, input, w.conv1, w.bias1, same));
  const Var main = conv2d(tape, hidden, w.conv2, w.bias2, same);
  const Var skip = w.projection.valid() ? conv2d(tape, input, w.projection, w.projection_bias, same) : input;
  if (tape.value(main).shape() != tape.value(skip).shape()) {
    detail::shape_mismatch("residual_block (add a 1x1 projection)", tape.value(main).shape(),
                           tape.value(skip).shape());
  }
  return add(tape, main, skip);
}

// ---------------------------------------------------------------------------
// LSTM

/// Gate layout along the 4H axis: input, forget, candidate, output.
template <typename Scalar>
struct LstmState {
  Vector<Scalar> hidden;
  Vector<Scalar> cell;

  static LstmState zeros(Index units) { return {Vector<Scalar>::Zero(units), Vector<Scalar>::Zero(units)}; }
};

template <typename Scalar>
struct LstmWeights {
  RowMatrix<Scalar> input_weights;      ///< [D, 4H]
  RowMatrix<Scalar> recurrent_weights;  ///< [H, 4H]
  Vector<Scalar> bias;                  ///< [4H]

  Index units() const { return recurrent_weights.rows(); }
};

template <typename Scalar>
struct LstmStep {
  Vector<Scalar> output;
  LstmState<Scalar> state;
};

namespace detail {

/// Activated gates [N, 4H] from pre-activations, in place.
template <typename Derived>
void activate_gates(Eigen::MatrixBase<Derived>& z, Index units) {
  using Scalar = typename Derived::Scalar;
  auto sig = [](Scalar v) { return sigmoid(v); };
  z.middleCols(0, 2 * units) = z.middleCols(0, 2 * units).unaryExpr(sig);
  z.middleCols(2 * units, units) = z.middleCols(2 * units, units).array().tanh().matrix();
  z.middleCols(3 * units, units) = z.middleCols(3 * units, units).unaryExpr(sig);
}

}  // namespace detail

/// Single LSTM step on one feature vector.
template <typename Scalar>
LstmStep<Scalar> lstm_step(const Vector<Scalar>& x, const LstmState<Scalar>& state, const LstmWeights<Scalar>& w) {
  const Index h = w.units();
  if (w.input_weights.rows() != x.size() || w.input_weights.cols() != 4 * h || w.recurrent_weights.cols() != 4 * h ||
      w.bias.size() != 4 * h || state.hidden.size() != h || state.cell.size() != h) {
    throw std::invalid_argument(fmt::format("lstm_step: input {} / units {} do not match weights [{}x{}], [{}x{}]",
                                            x.size(), state.hidden.size(), w.input_weights.rows(),
                                            w.input_weights.cols(), w.recurrent_weights.rows(),
                                            w.recurrent_weights.cols()));
  }
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> z =
      x.transpose() * w.input_weights + state.hidden.transpose() * w.recurrent_weights + w.bias.transpose();
  detail::activate_gates(z, h);
  LstmStep<Scalar> out;
  out.state.cell = (z.segment(h, h).array() * state.cell.transpose().array() +
                    z.segment(0, h).array() * z.segment(2 * h, h).array())
                       .transpose()
                       .matrix();
  out.state.hidden = (z.segment(3 * h, h).transpose().array() * out.state.cell.array().tanh()).matrix();
  out.output = out.state.hidden;
  return out;
}

/// Batched LSTM cell on the tape. `state` is [N, 2H] holding hidden then
/// cell; the result has the same layout.
template <typename Scalar>
Var lstm_cell(Tape<Scalar>& tape, Var input, Var state, Var input_weights, Var recurrent_weights, Var bias) {
  using TensorT = Tensor<Scalar>;
  using Mat = RowMatrix<Scalar>;
  const TensorT& x = tape.value(input);
  const TensorT& s = tape.value(state);
  const TensorT& wx = tape.value(input_weights);
  const TensorT& wh = tape.value(recurrent_weights);
  detail::expect_rank("lstm_cell", x.shape(), 2);
  detail::expect_rank("lstm_cell", s.shape(), 2);
  const Index h = wh.dim(0);
  if (wx.rank() != 2 || wx.dim(0) != x.dim(1) || wx.dim(1) != 4 * h) detail::shape_mismatch("lstm_cell", x.shape(), wx.shape());
  if (wh.rank() != 2 || wh.dim(1) != 4 * h || s.dim(1) != 2 * h || s.dim(0) != x.dim(0)) {
    detail::shape_mismatch("lstm_cell", s.shape(), wh.shape());
  }
  if (tape.value(bias).size() != 4 * h) detail::shape_mismatch("lstm_cell bias", wh.shape(), tape.value(bias).shape());
  const Index n_batch = x.dim(0);

  Mat gates = x.matrix() * wx.matrix() + s.matrix().leftCols(h) * wh.matrix();
  gates.rowwise() += tape.value(bias).data().transpose();
  detail::activate_gates(gates, h);

  TensorT out({n_batch, 2 * h});
  auto prev_c = s.matrix().rightCols(h).array();
  auto c = out.matrix().rightCols(h);
  c = (gates.middleCols(h, h).array() * prev_c + gates.leftCols(h).array() * gates.middleCols(2 * h, h).array()).matrix();
  const Mat tanh_c = c.array().tanh().matrix();
  out.matrix().leftCols(h) = (gates.rightCols(h).array() * tanh_c.array()).matrix();

  return tape.record(
      std::move(out), {input, state, input_weights, recurrent_weights, bias},
      [=, gates = std::move(gates)](Tape<Scalar>& t, const TensorT& dout) {
        const auto sv = t.value(state).matrix();
        const auto i = gates.leftCols(h).array();
        const auto f = gates.middleCols(h, h).array();
        const auto g = gates.middleCols(2 * h, h).array();
        const auto o = gates.rightCols(h).array();
        const auto dh = dout.matrix().leftCols(h).array();
        const Mat dc = (dout.matrix().rightCols(h).array() + dh * o * (Scalar(1) - tanh_c.array().square())).matrix();
        Mat dz(n_batch, 4 * h);
        dz.leftCols(h) = (dc.array() * g * i * (Scalar(1) - i)).matrix();
        dz.middleCols(h, h) = (dc.array() * sv.rightCols(h).array() * f * (Scalar(1) - f)).matrix();
        dz.middleCols(2 * h, h) = (dc.array() * i * (Scalar(1) - g.square())).matrix();
        dz.rightCols(h) = (dh * tanh_c.array() * o * (Scalar(1) - o)).matrix();

        if (t.requires_grad(input)) t.grad(input).matrix().noalias() += dz * t.value(input_weights).matrix().transpose();
        if (t.requires_grad(state)) {
          auto ds = t.grad(state).matrix();
          ds.leftCols(h).noalias() += dz * t.value(recurrent_weights).matrix().transpose();
          ds.rightCols(h) += (dc.array() * f).matrix();
        }
        if (t.requires_grad(input_weights)) {
          t.grad(input_weights).matrix().noalias() += t.value(input).matrix().transpose() * dz;
        }
        if (t.requires_grad(recurrent_weights)) {
          t.grad(recurrent_weights).matrix().noalias() += sv.leftCols(h).transpose() * dz;
        }
        if (t.requires_grad(bias)) t.grad(bias).data() += dz.colwise().sum().transpose();
      });
}

}  // namespace iotids::nn
