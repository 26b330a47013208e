#pragma once

// Randomized kernel checks shared by the unit tests and the acceptance run.
// Each case draws its own shapes and data from the Rng and returns an error:
// the relative gradient error for gradient cases, the largest absolute
// deviation from the direct-loop oracle for forward cases.

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "iotids/nn/ops.hpp"
#include "iotids/random.hpp"
#include "oracles.hpp"

namespace kernel_cases {

using iotids::Rng;
using iotids::uniform;
using iotids::uniform_index;
using namespace iotids::nn;
using T = Tensor<double>;

inline constexpr int kSeeds = 20;
inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kOracleTolerance = 1e-10;

inline std::uint64_t seed_value(int seed) { return static_cast<std::uint64_t>(seed) * 7919 + 17; }

inline T random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = uniform(rng, -scale, scale);
  return t;
}

inline Index pick(Rng& rng, Index lo, Index hi) {
  return lo + static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

/// Infinity on a shape mismatch.
inline double max_abs_diff(const T& a, const T& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  return (a.data() - b.data()).cwiseAbs().maxCoeff();
}

/// Output size and padding of a TensorFlow-style convolution, spelled out.
struct Pads {
  Index out_h, out_w, top, left;
};

inline Pads pads_for(Index h, Index w, Index kh, Index kw, Index stride, bool same) {
  if (!same) return {(h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0};
  const Index oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  const Index ph = std::max<Index>((oh - 1) * stride + kh - h, 0);
  const Index pw = std::max<Index>((ow - 1) * stride + kw - w, 0);
  return {oh, ow, ph / 2, pw / 2};
}

/// Depthwise kernel [kh, kw, C] as the equivalent block-diagonal HWIO kernel.
inline T expand_depthwise(const T& k) {
  const Index kh = k.dim(0), kw = k.dim(1), c = k.dim(2);
  T full({kh, kw, c, c});
  for (Index u = 0; u < kh; ++u)
    for (Index v = 0; v < kw; ++v)
      for (Index ch = 0; ch < c; ++ch) full[((u * kw + v) * c + ch) * c + ch] = k[(u * kw + v) * c + ch];
  return full;
}

using Build = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

/// Relative error ||analytic - numeric|| / (||analytic|| + ||numeric||) per
/// input, using central differences on a random projection of the output.
/// Returns the worst input's error.
inline double gradcheck(std::vector<T> inputs, const Build& build, Rng& rng, Index max_probes = 60) {
  std::deque<Parameter<double>> params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.push_back({"in" + std::to_string(i), inputs[i], T()});

  auto forward = [&](Tape<double>& tape) {
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(tape.parameter(p));
    return build(tape, vars);
  };
  T projection;
  {
    Tape<double> probe(false);
    projection = random_tensor(rng, probe.value(forward(probe)).shape());
  }
  auto loss_value = [&] {
    Tape<double> tape(false);
    const T& y = tape.value(forward(tape));
    return y.data().dot(projection.data());
  };

  for (auto& p : params) p.zero_grad();
  {
    Tape<double> tape;
    tape.backward(inner_product(tape, forward(tape), projection));
  }

  double worst = 0;
  const double h = 1e-5;
  for (auto& p : params) {
    std::vector<Index> probes;
    if (p.value.size() <= max_probes) {
      for (Index i = 0; i < p.value.size(); ++i) probes.push_back(i);
    } else {
      for (Index k = 0; k < max_probes; ++k) probes.push_back(static_cast<Index>(uniform_index(rng, p.value.size())));
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    for (Index i : probes) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = loss_value();
      p.value[i] = saved - h;
      const double down = loss_value();
      p.value[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    if (denom > 1e-12) worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

struct Case {
  std::string name;
  std::function<double(Rng&)> run;
};

inline std::vector<Case> gradient_cases() {
  std::vector<Case> cases;
  cases.push_back({"conv2d", [](Rng& rng) {
    const Index c = pick(rng, 1, 3), o = pick(rng, 1, 3), k = std::array<Index, 3>{1, 3, 5}[uniform_index(rng, 3)];
    const Index stride = pick(rng, 1, 2);
    const bool same = uniform_index(rng, 2) == 0;
    const Index side = std::max<Index>(pick(rng, 3, 7), k);
    return gradcheck({random_tensor(rng, {2, side, side, c}), random_tensor(rng, {k, k, c, o}), random_tensor(rng, {o})},
                     [&](Tape<double>& t, const std::vector<Var>& v) {
                       return conv2d(t, v[0], v[1], v[2], Conv2dOptions{stride, same ? Padding::Same : Padding::Valid});
                     },
                     rng);
  }});
  cases.push_back({"depthwise_conv2d", [](Rng& rng) {
    const Index c = pick(rng, 1, 3);
    const Index stride = pick(rng, 1, 2);
    return gradcheck({random_tensor(rng, {2, 5, 5, c}), random_tensor(rng, {3, 3, c}), random_tensor(rng, {c})},
                     [&](Tape<double>& t, const std::vector<Var>& v) {
                       return depthwise_conv2d(t, v[0], v[1], v[2], Conv2dOptions{stride, Padding::Same});
                     },
                     rng);
  }});
  cases.push_back({"separable_conv", [](Rng& rng) {
    const Index c = pick(rng, 1, 3), o = pick(rng, 1, 3);
    return gradcheck({random_tensor(rng, {1, 5, 5, c}), random_tensor(rng, {3, 3, c}), random_tensor(rng, {1, 1, c, o}),
                      random_tensor(rng, {o})},
                     [](Tape<double>& t, const std::vector<Var>& v) { return separable_conv(t, v[0], v[1], v[2], v[3]); },
                     rng);
  }});
  cases.push_back({"relu", [](Rng& rng) {
    return gradcheck({random_tensor(rng, {2, 3, 3, 2})},
                     [](Tape<double>& t, const std::vector<Var>& v) { return relu(t, v[0]); }, rng);
  }});
  cases.push_back({"add", [](Rng& rng) {
    return gradcheck({random_tensor(rng, {2, 3, 3, 2}), random_tensor(rng, {2, 3, 3, 2})},
                     [](Tape<double>& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); }, rng);
  }});
  cases.push_back({"concat_channels", [](Rng& rng) {
    return gradcheck({random_tensor(rng, {2, 3, 3, 1}), random_tensor(rng, {2, 3, 3, 2}), random_tensor(rng, {2, 3, 3, 3})},
                     [](Tape<double>& t, const std::vector<Var>& v) { return concat_channels(t, {v[0], v[1], v[2]}); },
                     rng);
  }});
  cases.push_back({"avg_pool2d", [](Rng& rng) {
    const Index h = pick(rng, 2, 7), w = pick(rng, 2, 7);
    return gradcheck({random_tensor(rng, {2, h, w, 2})},
                     [](Tape<double>& t, const std::vector<Var>& v) { return avg_pool2d(t, v[0]); }, rng);
  }});
  cases.push_back({"global_avg_pool", [](Rng& rng) {
    return gradcheck({random_tensor(rng, {2, 4, 3, 3})},
                     [](Tape<double>& t, const std::vector<Var>& v) { return global_avg_pool(t, v[0]); }, rng);
  }});
  cases.push_back({"slice_rows", [](Rng& rng) {
    const Index begin = pick(rng, 0, 3);
    return gradcheck({random_tensor(rng, {6, 4})},
                     [&](Tape<double>& t, const std::vector<Var>& v) { return slice_rows(t, v[0], begin, 2); }, rng);
  }});
  cases.push_back({"gather_rows", [](Rng& rng) {
    std::vector<Index> idx;
    for (int i = 0; i < 7; ++i) idx.push_back(pick(rng, 0, 4));  // repeats accumulate
    return gradcheck({random_tensor(rng, {5, 3})},
                     [&](Tape<double>& t, const std::vector<Var>& v) { return gather_rows(t, v[0], idx); }, rng);
  }});
  cases.push_back({"slice_columns", [](Rng& rng) {
    const Index begin = pick(rng, 0, 3);
    return gradcheck({random_tensor(rng, {3, 6})},
                     [&](Tape<double>& t, const std::vector<Var>& v) { return slice_columns(t, v[0], begin, 3); }, rng);
  }});
  cases.push_back({"dense", [](Rng& rng) {
    return gradcheck({random_tensor(rng, {3, 4}), random_tensor(rng, {4, 5}), random_tensor(rng, {5})},
                     [](Tape<double>& t, const std::vector<Var>& v) { return dense(t, v[0], v[1], v[2]); }, rng);
  }});
  cases.push_back({"softmax", [](Rng& rng) {
    return gradcheck({random_tensor(rng, {4, 3}, 3.0)},
                     [](Tape<double>& t, const std::vector<Var>& v) { return softmax(t, v[0]); }, rng);
  }});
  cases.push_back({"weighted_cross_entropy", [](Rng& rng) {
    std::vector<Index> labels;
    std::vector<double> weights;
    for (int i = 0; i < 5; ++i) {
      labels.push_back(pick(rng, 0, 2));
      weights.push_back(uniform(rng, 0.5, 6.0));
    }
    return gradcheck({random_tensor(rng, {5, 3}, 2.0)},
                     [&](Tape<double>& t, const std::vector<Var>& v) {
                       return weighted_cross_entropy(t, softmax(t, v[0]), std::span<const Index>(labels),
                                                     std::span<const double>(weights));
                     },
                     rng);
  }});
  for (BatchNormMode mode : {BatchNormMode::Train, BatchNormMode::Eval}) {
    cases.push_back({mode == BatchNormMode::Train ? "batch_norm train" : "batch_norm eval", [mode](Rng& rng) {
      Parameter<double> mean{"m", random_tensor(rng, {3}), T(), false};
      Parameter<double> var{"v", T::constant({3}, 1.5), T(), false};
      return gradcheck({random_tensor(rng, {3, 2, 2, 3}, 2.0), random_tensor(rng, {3}), random_tensor(rng, {3})},
                       [&](Tape<double>& t, const std::vector<Var>& v) {
                         return batch_norm(t, v[0], v[1], v[2], mean, var, mode);
                       },
                       rng);
    }});
  }
  cases.push_back({"inception_block", [](Rng& rng) {
    const Index c = pick(rng, 1, 3), o = pick(rng, 1, 2);
    return gradcheck({random_tensor(rng, {1, 5, 5, c}), random_tensor(rng, {1, 1, c, o}), random_tensor(rng, {3, 3, c, o}),
                      random_tensor(rng, {5, 5, c, o})},
                     [](Tape<double>& t, const std::vector<Var>& v) {
                       return inception_block(t, v[0], InceptionBranches{v[1], v[2], v[3]});
                     },
                     rng);
  }});
  cases.push_back({"residual_block", [](Rng& rng) {
    const Index c = pick(rng, 1, 3), o = pick(rng, 1, 3);
    std::vector<T> in{random_tensor(rng, {1, 4, 4, c}), random_tensor(rng, {3, 3, c, o}), random_tensor(rng, {o}),
                      random_tensor(rng, {3, 3, o, o}), random_tensor(rng, {o})};
    if (c != o) {
      in.push_back(random_tensor(rng, {1, 1, c, o}));
      in.push_back(random_tensor(rng, {o}));
    }
    return gradcheck(in,
                     [&](Tape<double>& t, const std::vector<Var>& v) {
                       ResidualWeights w{v[1], v[2], v[3], v[4]};
                       if (c != o) {
                         w.projection = v[5];
                         w.projection_bias = v[6];
                       }
                       return residual_block(t, v[0], w);
                     },
                     rng);
  }});
  cases.push_back({"lstm_cell (two steps)", [](Rng& rng) {
    const Index n = 2, d = 3, h = pick(rng, 1, 4);
    return gradcheck({random_tensor(rng, {n, d}), random_tensor(rng, {n, d}), random_tensor(rng, {n, 2 * h}),
                      random_tensor(rng, {d, 4 * h}), random_tensor(rng, {h, 4 * h}), random_tensor(rng, {4 * h})},
                     [](Tape<double>& t, const std::vector<Var>& v) {
                       const Var s1 = lstm_cell(t, v[0], v[2], v[3], v[4], v[5]);
                       return lstm_cell(t, v[1], s1, v[3], v[4], v[5]);
                     },
                     rng);
  }});
  return cases;
}

/// Forward outputs against the direct-loop oracles, inputs up to 8x8x4.
inline std::vector<Case> oracle_cases() {
  std::vector<Case> cases;
  cases.push_back({"conv2d", [](Rng& rng) {
    const Index h = pick(rng, 3, 8), w = pick(rng, 3, 8);
    const Index cin = pick(rng, 1, 4), cout = pick(rng, 1, 4);
    const Index k = std::array<Index, 3>{1, 3, 5}[uniform_index(rng, 3)];
    const Index stride = pick(rng, 1, 2);
    const bool same = uniform_index(rng, 2) == 0 || k > std::min(h, w);
    const T x = random_tensor(rng, {2, h, w, cin});
    const T kernel = random_tensor(rng, {k, k, cin, cout});
    const T bias = random_tensor(rng, {cout});
    Tape<double> tape(false);
    const Var y = conv2d(tape, tape.constant(x), tape.constant(kernel), tape.constant(bias),
                         Conv2dOptions{stride, same ? Padding::Same : Padding::Valid});
    const Pads p = pads_for(h, w, k, k, stride, same);
    return max_abs_diff(tape.value(y), oracle::conv2d(x, kernel, &bias, stride, p.top, p.left, p.out_h, p.out_w));
  }});
  cases.push_back({"depthwise and separable", [](Rng& rng) {
    const Index side = pick(rng, 4, 8), c = pick(rng, 1, 4), cout = pick(rng, 1, 4);
    const T x = random_tensor(rng, {2, side, side, c});
    const T dw = random_tensor(rng, {3, 3, c});
    const T pw = random_tensor(rng, {1, 1, c, cout});
    const T pb = random_tensor(rng, {cout});
    Tape<double> tape(false);
    const T depth_expected = oracle::depthwise_same(x, dw);
    double err = max_abs_diff(tape.value(depthwise_conv2d(tape, tape.constant(x), tape.constant(dw))), depth_expected);
    // Same result through the block-diagonal full kernel.
    err = std::max(err, max_abs_diff(depth_expected, oracle::conv_same(x, expand_depthwise(dw))));
    const Var s = separable_conv(tape, tape.constant(x), tape.constant(dw), tape.constant(pw), tape.constant(pb));
    err = std::max(err, max_abs_diff(tape.value(s), oracle::conv_same(depth_expected, pw, &pb)));
    // Strided valid depthwise against the full-kernel oracle.
    const Var d2 = depthwise_conv2d(tape, tape.constant(x), tape.constant(dw), Var::none(), {2, Padding::Valid});
    const Pads p = pads_for(side, side, 3, 3, 2, false);
    return std::max(err, max_abs_diff(tape.value(d2),
                                      oracle::conv2d(x, expand_depthwise(dw), nullptr, 2, 0, 0, p.out_h, p.out_w)));
  }});
  cases.push_back({"inception_block", [](Rng& rng) {
    const Index side = pick(rng, 3, 8), c = pick(rng, 1, 4), o = pick(rng, 1, 4);
    const T x = random_tensor(rng, {1, side, side, c});
    const T k1 = random_tensor(rng, {1, 1, c, o});
    const T k3 = random_tensor(rng, {3, 3, c, o});
    const T k5 = random_tensor(rng, {5, 5, c, o});
    Tape<double> tape(false);
    const Var y = inception_block(tape, tape.constant(x),
                                  InceptionBranches{tape.constant(k1), tape.constant(k3), tape.constant(k5)});
    return max_abs_diff(tape.value(y),
                        oracle::concat({oracle::conv_same(x, k1), oracle::conv_same(x, k3), oracle::conv_same(x, k5)}));
  }});
  cases.push_back({"residual_block", [](Rng& rng) {
    const Index side = pick(rng, 3, 8), c = pick(rng, 1, 4), o = pick(rng, 1, 4);
    const T x = random_tensor(rng, {1, side, side, c});
    const T c1 = random_tensor(rng, {3, 3, c, o});
    const T b1 = random_tensor(rng, {o});
    const T c2 = random_tensor(rng, {3, 3, o, o});
    const T b2 = random_tensor(rng, {o});
    const T proj = random_tensor(rng, {1, 1, c, o});
    const T pb = random_tensor(rng, {o});
    Tape<double> tape(false);
    ResidualWeights rw{tape.constant(c1), tape.constant(b1), tape.constant(c2), tape.constant(b2)};
    if (c != o) {
      rw.projection = tape.constant(proj);
      rw.projection_bias = tape.constant(pb);
    }
    const Var y = residual_block(tape, tape.constant(x), rw);
    const T main = oracle::conv_same(oracle::relu(oracle::conv_same(x, c1, &b1)), c2, &b2);
    const T skip = c != o ? oracle::conv_same(x, proj, &pb) : x;
    return max_abs_diff(tape.value(y), oracle::add(main, skip));
  }});
  return cases;
}

}  // namespace kernel_cases
