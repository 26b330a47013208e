#include "iotids/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <fmt/core.h>

#include "iotids/csv.hpp"
#include "iotids/error.hpp"
#include "iotids/nn/optim.hpp"
#include "iotids/random.hpp"

namespace iotids {

using nn::Index;
using nn::Var;

// ---------------------------------------------------------------------------
// Class weights and configuration

ClassWeights compute_class_weights(const std::array<std::size_t, kNumClasses>& image_counts) {
  std::size_t total = 0;
  for (ClassLabel c : kAllClasses) {
    if (image_counts[index_of(c)] == 0) {
      throw DataError(fmt::format("class {} has no images; class weights are undefined", to_string(c)));
    }
    total += image_counts[index_of(c)];
  }
  ClassWeights w;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    w.weights[i] = static_cast<double>(total) / static_cast<double>(image_counts[i]);
  }
  return w;
}

nlohmann::ordered_json ClassWeights::to_json() const {
  nlohmann::ordered_json j;
  for (ClassLabel c : kAllClasses) j[std::string(to_string(c))] = weights[index_of(c)];
  return j;
}

std::string_view to_string(SelectionMetric m) {
  switch (m) {
    case SelectionMetric::Accuracy: return "accuracy";
    case SelectionMetric::F1: return "f1";
    case SelectionMetric::Both: return "both";
  }
  return "?";
}

SelectionMetric parse_selection_metric(std::string_view text) {
  for (auto m : {SelectionMetric::Accuracy, SelectionMetric::F1, SelectionMetric::Both}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError(fmt::format("unknown selection metric '{}' (expected accuracy, f1 or both)", text));
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "sgd") return OptimizerKind::Sgd;
  throw ConfigError(fmt::format("unknown optimizer '{}' (expected adam or sgd)", text));
}

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    problems.push_back(fmt::format("learning_rate must be a finite value >= 0 (got {})", learning_rate));
  }
  if (epochs < 1) problems.push_back(fmt::format("epochs must be >= 1 (got {})", epochs));
  if (batch_size < 1) problems.push_back(fmt::format("batch_size must be >= 1 (got {})", batch_size));
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    problems.push_back(fmt::format("validation_fraction must be in (0, 1) (got {})", validation_fraction));
  }
  if (window_stride < 1) problems.push_back("window_stride must be >= 1");
  if (!problems.empty()) {
    std::string msg = "invalid train config: ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw ConfigError(msg);
  }
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"validation_fraction", validation_fraction},
          {"seed", seed},
          {"selection_metric", to_string(selection_metric)},
          {"optimizer", to_string(optimizer)},
          {"window_stride", window_stride}};
}

TrainConfig TrainConfig::from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.seed = j.value("seed", c.seed);
    if (j.contains("selection_metric")) c.selection_metric = parse_selection_metric(j["selection_metric"].get<std::string>());
    if (j.contains("optimizer")) c.optimizer = parse_optimizer(j["optimizer"].get<std::string>());
    c.window_stride = j.value("window_stride", c.window_stride);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("invalid train config: {}", e.what()));
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Splitting and windows

std::array<std::size_t, kNumClasses> ClassImages::counts() const {
  std::array<std::size_t, kNumClasses> n{};
  for (std::size_t i = 0; i < kNumClasses; ++i) n[i] = streams[i].size();
  return n;
}

DataSplit split_train_validation(const ClassImages& images, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError(fmt::format("validation fraction must be in (0, 1), got {}", fraction));
  }
  DataSplit split;
  for (ClassLabel c : kAllClasses) {
    const auto& stream = images[c];
    if (stream.size() < 2) {
      throw DataError(fmt::format("class {} has {} images; at least 2 are needed to split", to_string(c),
                                  stream.size()));
    }
    const std::size_t n_val = validation_count(stream.size(), fraction);
    const auto cut = stream.begin() + static_cast<std::ptrdiff_t>(stream.size() - n_val);
    split.train[c].assign(stream.begin(), cut);
    split.validation[c].assign(cut, stream.end());
  }
  return split;
}

ClassLabel window_label(std::span<const ClassLabel> labels) {
  if (labels.empty()) throw std::invalid_argument("window_label: empty window");
  std::array<std::size_t, kNumClasses> votes{};
  for (ClassLabel l : labels) ++votes[index_of(l)];
  const std::size_t top = *std::max_element(votes.begin(), votes.end());
  const ClassLabel last = labels.back();
  if (votes[index_of(last)] == top) return last;
  for (ClassLabel c : kAllClasses) {
    if (votes[index_of(c)] == top) return c;
  }
  return last;
}

std::vector<TrainingWindow> make_windows(const ClassImages& images, std::size_t length, std::size_t stride) {
  if (length < 1 || stride < 1) throw std::invalid_argument("make_windows: length and stride must be >= 1");
  std::vector<TrainingWindow> out;
  for (ClassLabel c : kAllClasses) {
    const auto& stream = images[c];
    if (stream.size() < length) {
      throw DataError(fmt::format("class {} has {} training images, fewer than the window length {}", to_string(c),
                                  stream.size(), length));
    }
    std::vector<ClassLabel> labels(length);
    for (std::size_t s = 0; s + length <= stream.size(); s += stride) {
      for (std::size_t t = 0; t < length; ++t) labels[t] = stream[s + t].label;
      out.push_back({c, s, window_label(labels)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

template <typename Scalar>
StreamEvaluation evaluate_streams(ModelGraph<Scalar>& model, const ClassImages& images, const ClassWeights& weights) {
  StreamEvaluation ev;
  double loss = 0;
  std::size_t n = 0;
  for (ClassLabel c : kAllClasses) {
    const auto& stream = images[c];
    const auto predictions = model.predict_stream(std::span<const ImageTensor>(stream), false);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const ClassLabel actual = stream[i].label;
      ev.confusion.add(actual, predictions[i].label);
      loss -= weights[actual] * std::log(std::max(predictions[i].probabilities[index_of(actual)], nn::kLogFloor));
      ++n;
    }
  }
  if (n == 0) throw DataError("no images to evaluate");
  ev.metrics = per_class_metrics(ev.confusion);
  ev.loss = loss / static_cast<double>(n);
  return ev;
}

double selection_score(const EpochRecord& e, SelectionMetric metric) {
  switch (metric) {
    case SelectionMetric::Accuracy: return e.validation_accuracy;
    case SelectionMetric::F1: return e.validation_f1;
    case SelectionMetric::Both: return 0.5 * (e.validation_accuracy + e.validation_f1);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Training

namespace {

/// Resized pixels of every training image, computed once.
template <typename Scalar>
class ResizedCache {
 public:
  ResizedCache(const ClassImages& images, std::size_t side) : side_(side) {
    for (ClassLabel c : kAllClasses) {
      for (const auto& img : images[c]) {
        const ResizedImage r = bilinear_resize(img, side);
        pixels_[index_of(c)].push_back(Eigen::Map<const nn::Vector<double>>(r.pixels.data(),
                                                                             static_cast<Index>(r.pixels.size()))
                                           .cast<Scalar>());
      }
    }
  }

  nn::Tensor<Scalar> batch(const std::vector<std::pair<ClassLabel, std::size_t>>& keys) const {
    const auto s = static_cast<Index>(side_);
    const Index per = s * s * static_cast<Index>(kImageChannels);
    nn::Tensor<Scalar> out({static_cast<Index>(keys.size()), s, s, static_cast<Index>(kImageChannels)});
    for (std::size_t i = 0; i < keys.size(); ++i) {
      out.data().segment(static_cast<Index>(i) * per, per) = pixels_[index_of(keys[i].first)][keys[i].second];
    }
    return out;
  }

 private:
  std::size_t side_;
  std::array<std::vector<nn::Vector<Scalar>>, kNumClasses> pixels_;
};

template <typename Scalar>
void round_to_float(ModelGraph<Scalar>& model) {
  for (auto* p : model.parameters()) p->value.data() = p->value.data().template cast<float>().template cast<Scalar>();
}

}  // namespace

template <typename Scalar>
TrainReport train(ModelGraph<Scalar>& model, const ClassImages& train_set, const ClassImages& validation_set,
                  const ClassWeights& weights, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto steps = static_cast<std::size_t>(model.config().window_length);
  const auto windows = make_windows(train_set, steps, config.window_stride);

  TrainReport report;
  report.backbone = model.config().backbone;
  report.precision = sizeof(Scalar) == 4 ? "float32" : "float64";
  report.model = model.config();
  report.config = config;
  report.weights = weights;
  report.train_images = train_set.counts();
  report.validation_images = validation_set.counts();
  report.windows_per_epoch = windows.size();

  const ResizedCache<Scalar> cache(train_set, model.resolution());
  std::vector<nn::Parameter<Scalar>*> trainable = model.trainable_parameters();
  nn::Adam<Scalar> adam(trainable, nn::AdamOptions{config.learning_rate});
  nn::Sgd<Scalar> sgd(trainable, config.learning_rate);

  std::vector<std::size_t> order(windows.size());
  std::vector<nn::Tensor<Scalar>> best_params;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t b = std::min(batch_size, order.size() - begin);
      // Each distinct image goes through the backbone once per batch.
      std::map<std::pair<ClassLabel, std::size_t>, Index> rows;
      for (std::size_t k = 0; k < b; ++k) {
        const auto& w = windows[order[begin + k]];
        for (std::size_t t = 0; t < steps; ++t) rows.emplace(std::make_pair(w.stream, w.start + t), 0);
      }
      std::vector<std::pair<ClassLabel, std::size_t>> keys;
      for (auto& [key, row] : rows) {
        row = static_cast<Index>(keys.size());
        keys.push_back(key);
      }
      std::vector<Index> gather(steps * b);
      std::vector<Index> labels(b);
      std::vector<Scalar> loss_weights(b);
      for (std::size_t k = 0; k < b; ++k) {
        const auto& w = windows[order[begin + k]];
        for (std::size_t t = 0; t < steps; ++t) gather[t * b + k] = rows.at({w.stream, w.start + t});
        labels[k] = static_cast<Index>(index_of(w.label));
        loss_weights[k] = static_cast<Scalar>(weights[w.label]);
      }

      nn::Tape<Scalar> tape;
      const Var images = tape.constant(cache.batch(keys));
      const Var features = model.backbone(tape, images, nn::BatchNormMode::Train);
      const Var sequence = nn::gather_rows(tape, features, std::move(gather));
      const Var probs = model.head(tape, sequence, static_cast<Index>(steps), static_cast<Index>(b));
      const Var loss = nn::weighted_cross_entropy<Scalar>(tape, probs, labels, loss_weights);
      const double loss_value = static_cast<double>(tape.value(loss)[0]);
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error(fmt::format("non-finite loss at epoch {}, batch {}", epoch, batches + 1));
      }
      loss_sum += loss_value;
      ++batches;
      tape.backward(loss);
      if (config.optimizer == OptimizerKind::Adam) {
        adam.step();
        adam.zero_grad();
      } else {
        sgd.step();
        sgd.zero_grad();
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    const auto tr = evaluate_streams(model, train_set, weights);
    const auto va = evaluate_streams(model, validation_set, weights);
    rec.train_accuracy = tr.metrics.accuracy;
    rec.train_f1 = tr.metrics.weighted_f1;
    rec.validation_loss = va.loss;
    rec.validation_accuracy = va.metrics.accuracy;
    rec.validation_f1 = va.metrics.weighted_f1;
    report.epochs.push_back(rec);
    const double score = selection_score(rec, config.selection_metric);
    if (report.best_epoch == 0 || score > report.best_score) {
      report.best_epoch = epoch;
      report.best_score = score;
      best_params = model.snapshot();
    }
    if (on_epoch) on_epoch(rec);
  }

  model.restore(best_params);
  round_to_float(model);
  report.checkpoint_validation = evaluate_streams(model, validation_set, weights);
  return report;
}

template StreamEvaluation evaluate_streams<float>(ModelGraph<float>&, const ClassImages&, const ClassWeights&);
template StreamEvaluation evaluate_streams<double>(ModelGraph<double>&, const ClassImages&, const ClassWeights&);
template TrainReport train<float>(ModelGraph<float>&, const ClassImages&, const ClassImages&, const ClassWeights&,
                                  const TrainConfig&, const EpochCallback&);
template TrainReport train<double>(ModelGraph<double>&, const ClassImages&, const ClassImages&, const ClassWeights&,
                                   const TrainConfig&, const EpochCallback&);

// ---------------------------------------------------------------------------
// Reports

namespace {

nlohmann::ordered_json counts_json(const std::array<std::size_t, kNumClasses>& counts) {
  nlohmann::ordered_json j;
  for (ClassLabel c : kAllClasses) j[std::string(to_string(c))] = counts[index_of(c)];
  return j;
}

}  // namespace

nlohmann::ordered_json TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "iotids-train-report";
  j["version"] = 1;
  j["backbone"] = to_key(backbone);
  j["precision"] = precision;
  j["model"] = model.to_json();
  j["train"] = config.to_json();
  j["class_weights"] = weights.to_json();
  j["train_images"] = counts_json(train_images);
  j["validation_images"] = counts_json(validation_images);
  j["windows_per_epoch"] = windows_per_epoch;
  auto column = [&](auto field) {
    auto a = nlohmann::ordered_json::array();
    for (const auto& e : epochs) a.push_back(field(e));
    return a;
  };
  nlohmann::ordered_json ep;
  ep["epoch"] = column([](const EpochRecord& e) { return e.epoch; });
  ep["train_loss"] = column([](const EpochRecord& e) { return e.train_loss; });
  ep["train_accuracy"] = column([](const EpochRecord& e) { return e.train_accuracy; });
  ep["train_f1"] = column([](const EpochRecord& e) { return e.train_f1; });
  ep["validation_loss"] = column([](const EpochRecord& e) { return e.validation_loss; });
  ep["validation_accuracy"] = column([](const EpochRecord& e) { return e.validation_accuracy; });
  ep["validation_f1"] = column([](const EpochRecord& e) { return e.validation_f1; });
  j["epochs"] = ep;
  j["best_epoch"] = best_epoch;
  j["best_score"] = best_score;
  if (best_epoch > 0) {
    const auto& b = best();
    j["best"] = {{"train_accuracy", b.train_accuracy},
                 {"train_f1", b.train_f1},
                 {"validation_accuracy", b.validation_accuracy},
                 {"validation_f1", b.validation_f1},
                 {"validation_loss", b.validation_loss}};
  }
  j["checkpoint"] = checkpoint_path;
  j["checkpoint_validation"] = {{"loss", checkpoint_validation.loss},
                                {"metrics", checkpoint_validation.metrics.to_json()},
                                {"confusion", checkpoint_validation.confusion.to_json()}};
  return j;
}

TrainReport TrainReport::from_json(const nlohmann::ordered_json& j) {
  if (j.value("format", "") != "iotids-train-report") throw DataError("not a training report");
  TrainReport r;
  try {
    r.backbone = parse_backbone(j.at("backbone").get<std::string>());
    r.precision = j.value("precision", "");
    r.model = ModelConfig::from_json(j.at("model"));
    r.config = TrainConfig::from_json(j.at("train"));
    const auto& ep = j.at("epochs");
    const std::size_t n = ep.at("epoch").size();
    for (std::size_t i = 0; i < n; ++i) {
      EpochRecord e;
      e.epoch = ep["epoch"][i].get<int>();
      e.train_loss = ep.at("train_loss")[i].get<double>();
      e.train_accuracy = ep.at("train_accuracy")[i].get<double>();
      e.train_f1 = ep.at("train_f1")[i].get<double>();
      e.validation_loss = ep.at("validation_loss")[i].get<double>();
      e.validation_accuracy = ep.at("validation_accuracy")[i].get<double>();
      e.validation_f1 = ep.at("validation_f1")[i].get<double>();
      r.epochs.push_back(e);
    }
    r.best_epoch = j.at("best_epoch").get<int>();
    r.best_score = j.at("best_score").get<double>();
    r.checkpoint_path = j.value("checkpoint", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed training report: {}", e.what()));
  }
  if (r.best_epoch < 1 || static_cast<std::size_t>(r.best_epoch) > r.epochs.size()) {
    throw DataError(fmt::format("training report best_epoch {} out of range", r.best_epoch));
  }
  return r;
}

std::vector<std::size_t> compare_models(std::span<const TrainReport> reports) {
  std::vector<std::size_t> order(reports.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = reports[a].best();
    const auto& rb = reports[b].best();
    if (ra.validation_accuracy != rb.validation_accuracy) return ra.validation_accuracy > rb.validation_accuracy;
    return ra.validation_f1 > rb.validation_f1;
  });
  return order;
}

std::string comparison_table_csv(std::span<const TrainReport> reports) {
  std::ostringstream out;
  CsvWriter w(out);
  w.write_row({"model", "train_acc", "train_f1", "val_acc", "val_f1"});
  for (std::size_t i : compare_models(reports)) {
    const auto& b = reports[i].best();
    w.write_row({std::string(to_string(reports[i].backbone)), fmt::format("{}", b.train_accuracy),
                 fmt::format("{}", b.train_f1), fmt::format("{}", b.validation_accuracy),
                 fmt::format("{}", b.validation_f1)});
  }
  return out.str();
}

}  // namespace iotids
