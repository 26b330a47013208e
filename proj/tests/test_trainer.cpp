#include <doctest.h>

#include <cmath>

#include "iotids/error.hpp"
#include "iotids/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace iotids;

namespace {

/// Streams whose images differ by class in the brightness of one channel.
ClassImages separable_streams(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  ClassImages out;
  for (ClassLabel c : kAllClasses) {
    for (std::size_t i = 0; i < per_class; ++i) {
      ImageTensor img;
      img.label = c;
      img.first_seq_index = 48 * i;
      for (std::size_t p = 0; p < kImageBytes; ++p) {
        const bool bright = p % kImageChannels == index_of(c);
        img.pixels[p] = static_cast<std::uint8_t>((bright ? 150 : 0) + uniform_index(rng, 100));
      }
      out[c].push_back(img);
    }
  }
  return out;
}

ClassImages sized_streams(std::size_t a, std::size_t b, std::size_t c) {
  Rng rng(1);
  ClassImages out;
  const std::array<std::size_t, 3> n{a, b, c};
  for (ClassLabel l : kAllClasses) {
    for (std::size_t i = 0; i < n[index_of(l)]; ++i) out[l].push_back(testutil::random_image(rng, l, i));
  }
  return out;
}

ModelConfig tiny_model(std::uint64_t seed = 5) {
  ModelConfig m;
  m.backbone = BackboneKind::MicroResNet;
  m.base_channels = 8;
  m.blocks = 2;
  m.window_length = 2;
  m.seed = seed;
  return m;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.learning_rate = 5e-3;
  t.epochs = 8;
  t.batch_size = 4;
  t.seed = 9;
  return t;
}

EpochRecord epoch(int n, double va, double vf) {
  EpochRecord e;
  e.epoch = n;
  e.validation_accuracy = va;
  e.validation_f1 = vf;
  e.train_accuracy = va - 0.01;
  e.train_f1 = vf - 0.01;
  return e;
}

TrainReport report(BackboneKind kind, double va, double vf) {
  TrainReport r;
  r.backbone = kind;
  r.epochs = {epoch(1, va, vf)};
  r.best_epoch = 1;
  return r;
}

}  // namespace

TEST_CASE("class weights are total over count") {
  const auto w = compute_class_weights({100340, 85943, 38149});
  CHECK(std::abs(w[ClassLabel::DDoS] - 2.2367) <= 1e-4);
  CHECK(std::abs(w[ClassLabel::DoS] - 2.6114) <= 1e-4);
  CHECK(std::abs(w[ClassLabel::Others] - 5.8830) <= 1e-4);
  CHECK(std::abs(w[ClassLabel::Others] / w[ClassLabel::DDoS] - 2.6303) <= 1e-3);
  CHECK(std::abs(w[ClassLabel::Others] / w[ClassLabel::DoS] - 2.2528) <= 1e-3);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<std::size_t, 3> counts{};
    for (auto& c : counts) c = 1 + uniform_index(rng, 10000);
    const auto weights = compute_class_weights(counts);
    const auto expected = oracle::class_weights(
        {static_cast<double>(counts[0]), static_cast<double>(counts[1]), static_cast<double>(counts[2])});
    double inverse_sum = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(weights.weights[i] == doctest::Approx(expected[i]).epsilon(1e-14));
      // Every class contributes the same total weight.
      CHECK(weights.weights[i] * static_cast<double>(counts[i]) ==
            doctest::Approx(static_cast<double>(counts[0] + counts[1] + counts[2])));
      inverse_sum += 1.0 / weights.weights[i];
    }
    CHECK(inverse_sum == doctest::Approx(1.0));
  }
  try {
    compute_class_weights({5, 0, 3});
    FAIL("expected an exception");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("DoS") != std::string::npos);
  }
}

TEST_CASE("train config parses, validates and round-trips") {
  CHECK(parse_selection_metric("f1") == SelectionMetric::F1);
  CHECK(parse_optimizer("sgd") == OptimizerKind::Sgd);
  CHECK_THROWS_AS(parse_selection_metric("auc"), ConfigError);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);

  TrainConfig c;
  CHECK(c.learning_rate == 1e-4);
  CHECK(c.epochs == 50);
  CHECK(c.batch_size == 64);
  c.seed = 77;
  c.selection_metric = SelectionMetric::Accuracy;
  c.window_stride = 3;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  TrainConfig bad;
  bad.epochs = 0;
  bad.batch_size = 0;
  bad.validation_fraction = 1.0;
  try {
    bad.validate();
    FAIL("expected an exception");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epochs") != std::string::npos);
    CHECK(msg.find("batch_size") != std::string::npos);
    CHECK(msg.find("validation_fraction") != std::string::npos);
  }
  CHECK_THROWS_AS(TrainConfig::from_json({{"epochs", "ten"}}), ConfigError);
}

TEST_CASE("split keeps the chronologically last images for validation") {
  const auto images = sized_streams(10, 7, 2);
  const auto split = split_train_validation(images, 0.2);
  CHECK(split.validation.counts() == std::array<std::size_t, 3>{2, 2, 1});
  CHECK(split.train.counts() == std::array<std::size_t, 3>{8, 5, 1});
  CHECK(split.validation[ClassLabel::DDoS].front().first_seq_index == 8);
  CHECK(split.train[ClassLabel::DoS].back().first_seq_index == 4);
  CHECK_THROWS_AS(split_train_validation(images, 0.0), ConfigError);
  CHECK_THROWS_AS(split_train_validation(images, 1.0), ConfigError);
  CHECK_THROWS_AS(split_train_validation(sized_streams(10, 1, 3), 0.2), DataError);

  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const auto sizes = sized_streams(2 + uniform_index(rng, 40), 2 + uniform_index(rng, 40), 2 + uniform_index(rng, 40));
    const double f = uniform(rng, 0.05, 0.95);
    const auto s = split_train_validation(sizes, f);
    for (ClassLabel c : kAllClasses) {
      const std::size_t n = sizes[c].size();
      CHECK(s.validation[c].size() == validation_count(n, f));
      CHECK(s.train[c].size() + s.validation[c].size() == n);
      CHECK(!s.train[c].empty());
      CHECK(!s.validation[c].empty());
      CHECK(s.train[c].back().first_seq_index < s.validation[c].front().first_seq_index);
    }
  }
}

TEST_CASE("window label is the majority with ties going to the last image") {
  using L = ClassLabel;
  const std::vector<L> majority{L::DoS, L::DDoS, L::DoS};
  CHECK(window_label(majority) == L::DoS);
  const std::vector<L> tie{L::DDoS, L::DoS};
  CHECK(window_label(tie) == L::DoS);
  const std::vector<L> three_way{L::Others, L::DDoS, L::DoS};
  CHECK(window_label(three_way) == L::DoS);
  const std::vector<L> tie_not_last{L::DDoS, L::DoS, L::DDoS, L::DoS, L::Others};
  CHECK(window_label(tie_not_last) == L::DDoS);
  CHECK_THROWS_AS(window_label({}), std::invalid_argument);
}

TEST_CASE("windows slide over each class stream") {
  const auto images = sized_streams(10, 5, 4);
  const auto w = make_windows(images, 4, 1);
  CHECK(w.size() == 7 + 2 + 1);
  CHECK(w.front().stream == ClassLabel::DDoS);
  CHECK(w[6].start == 6);
  CHECK(w.back().stream == ClassLabel::Others);
  CHECK(w.back().label == ClassLabel::Others);
  const auto strided = make_windows(images, 4, 3);
  CHECK(strided.size() == 3 + 1 + 1);
  CHECK(strided[2].start == 6);
  CHECK_THROWS_AS(make_windows(images, 5, 1), DataError);
  CHECK_THROWS_AS(make_windows(images, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(make_windows(images, 2, 0), std::invalid_argument);

  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t len = 1 + uniform_index(rng, 5), stride = 1 + uniform_index(rng, 4);
    const auto s = sized_streams(len + uniform_index(rng, 20), len + uniform_index(rng, 20), len + uniform_index(rng, 20));
    std::size_t expected = 0;
    for (ClassLabel c : kAllClasses) expected += (s[c].size() - len) / stride + 1;
    const auto ws = make_windows(s, len, stride);
    CHECK(ws.size() == expected);
    for (const auto& x : ws) {
      CHECK(x.start % stride == 0);
      CHECK(x.start + len <= s[x.stream].size());
    }
  }
}

TEST_CASE("stream evaluation pools predictions and weights the loss") {
  ModelGraph<double> model(tiny_model());
  const auto images = sized_streams(4, 3, 5);
  const auto weights = compute_class_weights(images.counts());
  const auto ev = evaluate_streams(model, images, weights);

  ConfusionMatrix expected;
  double loss = 0;
  std::size_t n = 0;
  for (ClassLabel c : kAllClasses) {
    const auto preds = model.predict_stream(std::span<const ImageTensor>(images[c]), false);
    REQUIRE(preds.size() == images[c].size());
    for (const auto& p : preds) {
      const auto best = std::max_element(p.probabilities.begin(), p.probabilities.end()) - p.probabilities.begin();
      CHECK(index_of(p.label) == static_cast<std::size_t>(best));
      expected.add(c, p.label);
      loss += -weights[c] * std::log(p.probabilities[index_of(c)]);
      ++n;
    }
  }
  CHECK(ev.confusion == expected);
  CHECK(ev.loss == doctest::Approx(loss / static_cast<double>(n)).epsilon(1e-12));
  CHECK(ev.metrics.accuracy == per_class_metrics(expected).accuracy);
  CHECK_THROWS_AS(evaluate_streams(model, ClassImages{}, weights), DataError);
}

TEST_CASE("training reduces the loss on a separable problem and is deterministic") {
  const auto data = separable_streams(12, 21);
  const auto split = split_train_validation(data, 0.25);
  const auto weights = compute_class_weights(split.train.counts());
  const auto cfg = tiny_train();

  ModelGraph<double> a(tiny_model());
  std::vector<int> seen;
  const auto ra = train(a, split.train, split.validation, weights, cfg, [&](const EpochRecord& e) {
    seen.push_back(e.epoch);
  });
  REQUIRE(seen.size() == 8);
  CHECK(seen.front() == 1);
  CHECK(seen.back() == 8);
  REQUIRE(ra.epochs.size() == 8);
  CHECK(ra.windows_per_epoch == 3 * (9 - 2 + 1));
  CHECK(ra.epochs.back().train_loss < ra.epochs.front().train_loss);
  CHECK(ra.best().validation_accuracy >= 0.9);
  CHECK(ra.best_score == doctest::Approx(selection_score(ra.best(), cfg.selection_metric)));
  for (const auto& e : ra.epochs) CHECK(selection_score(e, cfg.selection_metric) <= ra.best_score);

  // The model keeps the best epoch's parameters at 32-bit precision.
  for (const auto* p : a.parameters()) {
    for (nn::Index i = 0; i < p->value.size(); ++i) {
      CHECK(p->value[i] == static_cast<double>(static_cast<float>(p->value[i])));
    }
  }
  const auto again = evaluate_streams(a, split.validation, weights);
  CHECK(again.confusion == ra.checkpoint_validation.confusion);
  CHECK(again.loss == ra.checkpoint_validation.loss);

  ModelGraph<double> b(tiny_model());
  const auto rb = train(b, split.train, split.validation, weights, cfg);
  CHECK(rb.to_json() == ra.to_json());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i]->value.data() == b.parameters()[i]->value.data());
  }

  // A different shuffle seed changes the trajectory.
  auto other = cfg;
  other.seed = 10;
  ModelGraph<double> c(tiny_model());
  const auto rc = train(c, split.train, split.validation, weights, other);
  CHECK(rc.epochs.front().train_loss != ra.epochs.front().train_loss);
}

TEST_CASE("sgd training runs in single precision") {
  const auto data = separable_streams(8, 22);
  const auto split = split_train_validation(data, 0.25);
  auto cfg = tiny_train();
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.epochs = 2;
  cfg.learning_rate = 1e-2;
  ModelGraph<float> model(tiny_model());
  const auto r = train(model, split.train, split.validation, compute_class_weights(split.train.counts()), cfg);
  CHECK(r.precision == "float32");
  CHECK(r.epochs.size() == 2);
  CHECK(std::isfinite(r.epochs.back().train_loss));
}

TEST_CASE("selection metric and model comparison") {
  const auto e = epoch(1, 0.9, 0.8);
  CHECK(selection_score(e, SelectionMetric::Accuracy) == 0.9);
  CHECK(selection_score(e, SelectionMetric::F1) == 0.8);
  CHECK(selection_score(e, SelectionMetric::Both) == doctest::Approx(0.85));

  const std::vector<TrainReport> reports{report(BackboneKind::MicroXception, 0.95, 0.94),
                                         report(BackboneKind::MicroInception, 0.97, 0.90),
                                         report(BackboneKind::MicroResNet, 0.95, 0.96)};
  CHECK(compare_models(reports) == std::vector<std::size_t>{1, 2, 0});
  const std::string csv = comparison_table_csv(reports);
  CHECK(csv ==
        "model,train_acc,train_f1,val_acc,val_f1\n"
        "MicroInception,0.96,0.89,0.97,0.9\n"
        "MicroResNet,0.94,0.95,0.95,0.96\n"
        "MicroXception,0.94,0.9299999999999999,0.95,0.94\n");
}

TEST_CASE("training reports round-trip through JSON") {
  const auto data = separable_streams(6, 23);
  const auto split = split_train_validation(data, 0.34);
  auto cfg = tiny_train();
  cfg.epochs = 2;
  ModelGraph<double> model(tiny_model());
  auto r = train(model, split.train, split.validation, compute_class_weights(split.train.counts()), cfg);
  r.checkpoint_path = "models/resnet/model.ckpt";
  const auto j = r.to_json();
  CHECK(j["format"] == "iotids-train-report");
  CHECK(j["checkpoint"] == "models/resnet/model.ckpt");
  const auto back = TrainReport::from_json(j);
  CHECK(back.backbone == r.backbone);
  CHECK(back.best_epoch == r.best_epoch);
  CHECK(back.best().validation_f1 == r.best().validation_f1);
  CHECK(back.checkpoint_path == r.checkpoint_path);
  CHECK(back.config.to_json() == r.config.to_json());

  auto broken = j;
  broken["best_epoch"] = 7;
  CHECK_THROWS_AS(TrainReport::from_json(broken), DataError);
  broken = j;
  broken["format"] = "other";
  CHECK_THROWS_AS(TrainReport::from_json(broken), DataError);
  broken = j;
  broken.erase("epochs");
  CHECK_THROWS_AS(TrainReport::from_json(broken), DataError);
}
