#include <doctest.h>

#include "iotids/nn/ops.hpp"
#include "kernel_cases.hpp"

using namespace iotids;
using namespace iotids::nn;
using namespace kernel_cases;

namespace {

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("convolution blocks match the direct-loop oracles") {
  for (const auto& c : oracle_cases()) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      Rng rng(seed_value(seed));
      const double err = c.run(rng);
      INFO(c.name << " seed " << seed << " max deviation " << err);
      CHECK(err < kOracleTolerance);
    }
  }
}

TEST_CASE("pooling, dense and softmax match the oracle") {
  Rng rng(7);
  const T x = random_tensor(rng, {2, 5, 4, 3});
  Tape<double> tape;
  const Var v = tape.constant(x);
  const T& pooled = tape.value(avg_pool2d(tape, v));
  REQUIRE(pooled.shape() == Shape{2, 2, 2, 3});
  for (Index n = 0; n < 2; ++n)
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j)
        for (Index c = 0; c < 3; ++c) {
          const double e = (x.at(n, 2 * i, 2 * j, c) + x.at(n, 2 * i + 1, 2 * j, c) + x.at(n, 2 * i, 2 * j + 1, c) +
                            x.at(n, 2 * i + 1, 2 * j + 1, c)) /
                           4.0;
          CHECK(std::abs(pooled.at(n, i, j, c) - e) < 1e-12);
        }
  const T& gap = tape.value(global_avg_pool(tape, v));
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < 3; ++c) {
      double s = 0;
      for (Index i = 0; i < 5; ++i)
        for (Index j = 0; j < 4; ++j) s += x.at(n, i, j, c);
      CHECK(std::abs(gap[n * 3 + c] - s / 20.0) < 1e-12);
    }

  const T a = random_tensor(rng, {3, 4});
  const T w = random_tensor(rng, {4, 2});
  const T b = random_tensor(rng, {2});
  const T& d = tape.value(dense(tape, tape.constant(a), tape.constant(w), tape.constant(b)));
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 2; ++j) {
      double s = b[j];
      for (Index k = 0; k < 4; ++k) s += a[i * 4 + k] * w[k * 2 + j];
      CHECK(std::abs(d[i * 2 + j] - s) < 1e-12);
    }

  const T z = random_tensor(rng, {4, 3}, 30.0);
  const T& p = tape.value(softmax(tape, tape.constant(z)));
  for (Index i = 0; i < 4; ++i) {
    double m = -1e300, s = 0;
    for (Index k = 0; k < 3; ++k) m = std::max(m, z[i * 3 + k]);
    for (Index k = 0; k < 3; ++k) s += std::exp(z[i * 3 + k] - m);
    for (Index k = 0; k < 3; ++k) CHECK(std::abs(p[i * 3 + k] - std::exp(z[i * 3 + k] - m) / s) < 1e-12);
  }
}

TEST_CASE("weighted cross-entropy is the weighted mean of -log p with a floor") {
  T probs({3, 3});
  probs.data() << 0.7, 0.2, 0.1, 0.1, 0.1, 0.8, 0.0, 1.0, 0.0;
  const std::vector<Index> labels{0, 2, 0};
  const std::vector<double> weights{2.0, 1.0, 3.0};
  Tape<double> tape;
  const double loss = tape.value(weighted_cross_entropy(tape, tape.constant(probs), std::span<const Index>(labels),
                                                        std::span<const double>(weights)))[0];
  const double expected = (-2.0 * std::log(0.7) - std::log(0.8) - 3.0 * std::log(1e-12)) / 3.0;
  CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("batch norm normalizes with batch statistics and updates running estimates") {
  Rng rng(9);
  const T x = random_tensor(rng, {4, 2, 2, 3}, 5.0);
  Parameter<double> mean{"m", T::zeros({3}), T(), false};
  Parameter<double> var{"v", T::constant({3}, 1.0), T(), false};
  T gamma = random_tensor(rng, {3});
  T beta = random_tensor(rng, {3});
  Tape<double> tape;
  const T& y = tape.value(batch_norm(tape, tape.constant(x), tape.constant(gamma), tape.constant(beta), mean, var,
                                     BatchNormMode::Train));
  for (Index c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (Index i = 0; i < 16; ++i) m += x[i * 3 + c];
    m /= 16;
    for (Index i = 0; i < 16; ++i) v += (x[i * 3 + c] - m) * (x[i * 3 + c] - m);
    v /= 16;
    for (Index i = 0; i < 16; ++i) {
      CHECK(std::abs(y[i * 3 + c] - (gamma[c] * (x[i * 3 + c] - m) / std::sqrt(v + 1e-5) + beta[c])) < 1e-10);
    }
    CHECK(std::abs(mean.value[c] - 0.1 * m) < 1e-12);
    CHECK(std::abs(var.value[c] - (0.9 + 0.1 * v)) < 1e-12);
  }
  Tape<double> eval;
  const T& ye = eval.value(batch_norm(eval, eval.constant(x), eval.constant(gamma), eval.constant(beta), mean, var,
                                      BatchNormMode::Eval));
  for (Index i = 0; i < x.size(); ++i) {
    const Index c = i % 3;
    CHECK(std::abs(ye[i] - (gamma[c] * (x[i] - mean.value[c]) / std::sqrt(var.value[c] + 1e-5) + beta[c])) < 1e-10);
  }
}

TEST_CASE("lstm cell and lstm step match the gate equations") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    const Index n = 2, d = 3, h = 4;
    const T x = random_tensor(rng, {n, d});
    const T s = random_tensor(rng, {n, 2 * h});
    const T wx = random_tensor(rng, {d, 4 * h});
    const T wh = random_tensor(rng, {h, 4 * h});
    const T b = random_tensor(rng, {4 * h});
    Tape<double> tape;
    const T& out =
        tape.value(lstm_cell(tape, tape.constant(x), tape.constant(s), tape.constant(wx), tape.constant(wh), tape.constant(b)));
    for (Index r = 0; r < n; ++r) {
      std::vector<double> z(4 * h);
      for (Index g = 0; g < 4 * h; ++g) {
        z[g] = b[g];
        for (Index k = 0; k < d; ++k) z[g] += x[r * d + k] * wx[k * 4 * h + g];
        for (Index k = 0; k < h; ++k) z[g] += s[r * 2 * h + k] * wh[k * 4 * h + g];
      }
      LstmState<double> st{Vector<double>(h), Vector<double>(h)};
      for (Index u = 0; u < h; ++u) {
        const double i = sig(z[u]), f = sig(z[h + u]), g = std::tanh(z[2 * h + u]), o = sig(z[3 * h + u]);
        const double c = f * s[r * 2 * h + h + u] + i * g;
        const double hh = o * std::tanh(c);
        CHECK(std::abs(out[r * 2 * h + u] - hh) < 1e-12);
        CHECK(std::abs(out[r * 2 * h + h + u] - c) < 1e-12);
        st.hidden[u] = s[r * 2 * h + u];
        st.cell[u] = s[r * 2 * h + h + u];
      }
      LstmWeights<double> lw{wx.matrix(), wh.matrix(), b.data()};
      const auto step = lstm_step<double>(x.matrix().row(r).transpose(), st, lw);
      for (Index u = 0; u < h; ++u) {
        CHECK(std::abs(step.state.hidden[u] - out[r * 2 * h + u]) < 1e-12);
        CHECK(std::abs(step.state.cell[u] - out[r * 2 * h + h + u]) < 1e-12);
      }
    }
  }
}

TEST_CASE("softmax rows are positive and sum to one") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const T z = random_tensor(rng, {5, 3}, std::pow(10.0, uniform(rng, -2, 3)));
    Tape<double> tape(false);
    const T& p = tape.value(softmax(tape, tape.constant(z)));
    for (Index r = 0; r < 5; ++r) {
      double s = 0;
      for (Index k = 0; k < 3; ++k) {
        CHECK(p[r * 3 + k] >= 0);
        s += p[r * 3 + k];
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("lstm state stays finite over a long bounded sequence") {
  Rng rng(13);
  const Index d = 8, h = 64;
  const T wx = random_tensor(rng, {d, 4 * h}, 2.0);
  const T wh = random_tensor(rng, {h, 4 * h}, 2.0);
  const T b = random_tensor(rng, {4 * h}, 2.0);
  LstmWeights<double> lw{wx.matrix(), wh.matrix(), b.data()};
  LstmState<double> st{Vector<double>::Zero(h), Vector<double>::Zero(h)};
  bool finite = true;
  for (int t = 0; t < 10000; ++t) {
    Vector<double> x(d);
    for (Index k = 0; k < d; ++k) x[k] = uniform(rng, -5, 5);
    st = lstm_step<double>(x, st, lw).state;
    finite = finite && st.hidden.allFinite() && st.cell.allFinite();
  }
  CHECK(finite);
  CHECK(st.hidden.cwiseAbs().maxCoeff() <= 1.0);
}

TEST_CASE("gradients are reproducible and zero for unused parameters") {
  Rng rng(14);
  Parameter<double> w{"w", random_tensor(rng, {3, 3, 2, 4}), T()};
  Parameter<double> unused{"unused", random_tensor(rng, {4}), T()};
  const T x = random_tensor(rng, {2, 5, 5, 2});
  auto run = [&] {
    w.zero_grad();
    unused.zero_grad();
    Tape<double> tape;
    const Var y = relu(tape, conv2d(tape, tape.constant(x), tape.parameter(w)));
    tape.parameter(unused);
    tape.backward(inner_product(tape, y, T::constant(tape.value(y).shape(), 1.0)));
    return w.grad;
  };
  const T first = run();
  const T second = run();
  CHECK(first.data() == second.data());
  CHECK(unused.grad.data().isZero(0));
}

TEST_CASE("shape errors are reported") {
  Tape<double> tape;
  const Var x = tape.constant(T({1, 4, 4, 2}));
  CHECK_THROWS_AS(conv2d(tape, x, tape.constant(T({3, 3, 3, 1}))), std::invalid_argument);
  CHECK_THROWS_AS(add(tape, x, tape.constant(T({1, 4, 4, 3}))), std::invalid_argument);
  CHECK_THROWS_AS(dense(tape, tape.constant(T({2, 3})), tape.constant(T({4, 2}))), std::invalid_argument);
  CHECK_THROWS_AS(tape.backward(x), std::logic_error);
}
