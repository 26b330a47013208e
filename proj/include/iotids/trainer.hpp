#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/featurizer.hpp"
#include "iotids/metrics.hpp"
#include "iotids/model_zoo.hpp"

namespace iotids {

/// Inverse-frequency loss weights: weight_c = sum(counts) / counts_c.
struct ClassWeights {
  std::array<double, kNumClasses> weights{1.0, 1.0, 1.0};

  double operator[](ClassLabel c) const { return weights[index_of(c)]; }
  nlohmann::ordered_json to_json() const;
};

/// Throws DataError naming the class if any count is zero.
ClassWeights compute_class_weights(const std::array<std::size_t, kNumClasses>& image_counts);

enum class SelectionMetric { Accuracy, F1, Both };
enum class OptimizerKind { Adam, Sgd };

std::string_view to_string(SelectionMetric m);
SelectionMetric parse_selection_metric(std::string_view text);
std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view text);

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 50;
  int batch_size = 64;  ///< windows per mini-batch
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  SelectionMetric selection_metric = SelectionMetric::Both;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::size_t window_stride = 1;  ///< distance between consecutive training window starts

  /// Throws ConfigError listing every offending field.
  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::ordered_json& j);
};

/// Per-class image streams in chronological (first_seq_index) order.
struct ClassImages {
  std::array<std::vector<ImageTensor>, kNumClasses> streams;

  const std::vector<ImageTensor>& operator[](ClassLabel c) const { return streams[index_of(c)]; }
  std::vector<ImageTensor>& operator[](ClassLabel c) { return streams[index_of(c)]; }
  std::array<std::size_t, kNumClasses> counts() const;
};

struct DataSplit {
  ClassImages train;
  ClassImages validation;
};

/// Per class, the chronologically last validation_count(n, fraction) images
/// form the validation set. Throws ConfigError for a fraction outside (0, 1)
/// and DataError for a class with fewer than two images.
DataSplit split_train_validation(const ClassImages& images, double fraction);

/// Majority label of a window; a tie goes to the label of the last image.
ClassLabel window_label(std::span<const ClassLabel> labels);

/// A training window: `length` consecutive images of one class stream.
struct TrainingWindow {
  ClassLabel stream = ClassLabel::Others;
  std::size_t start = 0;
  ClassLabel label = ClassLabel::Others;
};

/// Sliding windows over each class stream (starts 0, stride, 2 * stride, ...).
/// Throws DataError if a class has fewer than `length` images.
std::vector<TrainingWindow> make_windows(const ClassImages& images, std::size_t length, std::size_t stride);

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double train_loss = 0;
  double train_accuracy = 0;
  double train_f1 = 0;
  double validation_loss = 0;
  double validation_accuracy = 0;
  double validation_f1 = 0;
};

/// Predictions and derived metrics for a set of class streams.
struct StreamEvaluation {
  ConfusionMatrix confusion;
  MetricsReport metrics;
  double loss = 0;  ///< class-weighted cross-entropy, mean over images
};

struct TrainReport {
  BackboneKind backbone = BackboneKind::MicroResNet;
  std::string precision;
  ModelConfig model;
  TrainConfig config;
  ClassWeights weights;
  std::array<std::size_t, kNumClasses> train_images{};
  std::array<std::size_t, kNumClasses> validation_images{};
  std::size_t windows_per_epoch = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  ///< 1-based
  double best_score = 0;
  std::string checkpoint_path;
  /// Validation results of the selected parameters after rounding them to
  /// the 32-bit checkpoint precision; equals what `evaluate` reproduces.
  StreamEvaluation checkpoint_validation;

  const EpochRecord& best() const { return epochs.at(static_cast<std::size_t>(best_epoch - 1)); }
  nlohmann::ordered_json to_json() const;
  /// Reads back the fields needed for model comparison.
  static TrainReport from_json(const nlohmann::ordered_json& j);
};

/// Selection score of an epoch under `metric` (Both: mean of accuracy and F1).
double selection_score(const EpochRecord& e, SelectionMetric metric);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Stateless stream predictions per class, pooled into one confusion matrix.
template <typename Scalar>
StreamEvaluation evaluate_streams(ModelGraph<Scalar>& model, const ClassImages& images, const ClassWeights& weights);

/// Runs config.epochs epochs of shuffled mini-batches of windows, weighted
/// cross-entropy with each window label's class weight, evaluating both sets
/// after every epoch. The model is left holding the best epoch's parameters
/// rounded to 32-bit precision. Throws std::runtime_error with the epoch and
/// batch on a non-finite loss.
template <typename Scalar>
TrainReport train(ModelGraph<Scalar>& model, const ClassImages& train_set, const ClassImages& validation_set,
                  const ClassWeights& weights, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Order of reports by validation accuracy, then validation F1, then input order.
std::vector<std::size_t> compare_models(std::span<const TrainReport> reports);

/// "model,train_acc,train_f1,val_acc,val_f1", one row per report in ranked
/// order, using each report's best epoch.
std::string comparison_table_csv(std::span<const TrainReport> reports);

extern template StreamEvaluation evaluate_streams<float>(ModelGraph<float>&, const ClassImages&, const ClassWeights&);
extern template StreamEvaluation evaluate_streams<double>(ModelGraph<double>&, const ClassImages&,
                                                          const ClassWeights&);
extern template TrainReport train<float>(ModelGraph<float>&, const ClassImages&, const ClassImages&,
                                         const ClassWeights&, const TrainConfig&, const EpochCallback&);
extern template TrainReport train<double>(ModelGraph<double>&, const ClassImages&, const ClassImages&,
                                          const ClassWeights&, const TrainConfig&, const EpochCallback&);

}  // namespace iotids
