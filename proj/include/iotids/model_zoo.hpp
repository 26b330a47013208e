#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/featurizer.hpp"
#include "iotids/labels.hpp"
#include "iotids/nn/ops.hpp"

namespace iotids {

enum class BackboneKind { MicroXception, MicroInception, MicroResNet };

inline constexpr std::array<BackboneKind, 3> kAllBackbones = {BackboneKind::MicroXception,
                                                              BackboneKind::MicroInception, BackboneKind::MicroResNet};

/// Configuration key: "xception", "inception", "resnet".
std::string_view to_key(BackboneKind kind);
/// "MicroXception", "MicroInception", "MicroResNet".
std::string_view to_string(BackboneKind kind);
/// Accepts either spelling, case-insensitively. Throws ConfigError.
BackboneKind parse_backbone(std::string_view text);

/// Input side length fixed by the backbone: 71, 75 or 32.
std::size_t input_resolution(BackboneKind kind);

struct ModelConfig {
  BackboneKind backbone = BackboneKind::MicroResNet;
  std::int64_t base_channels = 8;
  std::int64_t blocks = 3;
  std::int64_t lstm_units = 64;
  std::int64_t num_classes = 3;
  std::int64_t window_length = 8;
  std::uint64_t seed = 0;

  /// Throws ConfigError listing every offending field.
  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::ordered_json& j);
};

/// One entry of the model's layer list; `output` is [h, w, c] for spatial
/// layers and [d] after pooling.
struct LayerSpec {
  std::string name;
  std::string type;
  nn::Shape output;
};

struct StreamPrediction {
  ClassLabel label = ClassLabel::Others;
  std::array<double, kNumClasses> probabilities{};
};

template <typename Scalar>
struct WindowOutput {
  std::array<double, kNumClasses> probabilities{};
  nn::LstmState<Scalar> state;
};

/// Backbone + LSTM + dense(3) + softmax. The backbone maps each image to a
/// D-vector by global average pooling; the LSTM consumes one vector per
/// image of a window and the class probabilities come from its last hidden
/// state.
template <typename Scalar>
class ModelGraph {
 public:
  using Param = nn::Parameter<Scalar>;
  using TensorT = nn::Tensor<Scalar>;
  using Features = nn::RowMatrix<Scalar>;

  explicit ModelGraph(const ModelConfig& config);
  ModelGraph(const ModelGraph&) = delete;
  ModelGraph& operator=(const ModelGraph&) = delete;

  const ModelConfig& config() const { return config_; }
  std::size_t resolution() const { return input_resolution(config_.backbone); }
  nn::Index feature_dim() const { return feature_dim_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  std::vector<Param*> trainable_parameters();
  /// Number of trainable scalars.
  std::size_t parameter_count() const;
  Param& parameter(std::string_view name);

  std::vector<TensorT> snapshot() const;
  void restore(const std::vector<TensorT>& values);

  /// [N, R, R, 3] -> [N, D]
  nn::Var backbone(nn::Tape<Scalar>& tape, nn::Var images, nn::BatchNormMode mode);
  /// features [steps * batch, D], row t * batch + b holding step t of
  /// sequence b -> probabilities [batch, 3]. Starts from a zero state.
  nn::Var head(nn::Tape<Scalar>& tape, nn::Var features, nn::Index steps, nn::Index batch);

  /// Inference on one window of 1..T images from `initial`. Throws
  /// ConfigError if an image has the wrong resolution.
  WindowOutput<Scalar> forward_window(std::span<const ResizedImage> window, const nn::LstmState<Scalar>& initial);

  /// Eval-mode backbone features, one row per image.
  Features extract_features(std::span<const ResizedImage> images);
  Features extract_features(std::span<const ImageTensor> images);

  /// stateful: LSTM state carried across the stream, one step per image.
  /// Otherwise each image is predicted from the window of the last T images
  /// ending at it (shorter prefix windows at the start), from a zero state.
  std::vector<StreamPrediction> predict_from_features(const Features& features, bool stateful);
  std::vector<StreamPrediction> predict_stream(std::span<const ResizedImage> images, bool stateful);
  std::vector<StreamPrediction> predict_stream(std::span<const ImageTensor> images, bool stateful);

  /// Single-sample LSTM steps taken by the inference paths so far.
  std::size_t lstm_step_count() const { return lstm_steps_; }

  nn::LstmWeights<Scalar> lstm_weights() const;

  /// Architecture, config and parameter list.
  nlohmann::ordered_json describe() const;

 private:
  struct BatchNormParams {
    Param* gamma = nullptr;
    Param* beta = nullptr;
    Param* mean = nullptr;
    Param* var = nullptr;
  };
  struct Block {
    // MicroXception: depthwise, pointwise, bn, optional projection.
    // MicroInception: k1, k3, k5, bn.
    // MicroResNet: conv1/bias1, conv2/bias2, optional projection.
    std::vector<Param*> weights;
    BatchNormParams bn;
    Param* projection = nullptr;
    Param* projection_bias = nullptr;
    bool pool = false;
  };

  Param& add_parameter(std::string name, nn::Shape shape, bool trainable = true);
  Param& add_uniform(std::string name, nn::Shape shape, double limit);
  BatchNormParams add_batch_norm(const std::string& prefix, nn::Index channels);
  void build();
  nn::Var apply_batch_norm(nn::Tape<Scalar>& tape, nn::Var x, BatchNormParams& bn, nn::BatchNormMode mode);
  StreamPrediction classify(const nn::Vector<Scalar>& hidden) const;

  ModelConfig config_;
  std::deque<Param> params_;
  std::vector<LayerSpec> layers_;
  Param* stem_w_ = nullptr;
  Param* stem_b_ = nullptr;
  nn::Conv2dOptions stem_options_;
  bool stem_pool_ = false;
  std::vector<Block> blocks_;
  Param* lstm_wx_ = nullptr;
  Param* lstm_wh_ = nullptr;
  Param* lstm_b_ = nullptr;
  Param* dense_w_ = nullptr;
  Param* dense_b_ = nullptr;
  nn::Index feature_dim_ = 0;
  std::size_t lstm_steps_ = 0;
};

/// Stacks images into an NHWC batch. Throws ConfigError on a resolution mismatch.
template <typename Scalar>
nn::Tensor<Scalar> make_image_batch(std::span<const ResizedImage* const> images, std::size_t side);

/// Resizes byte images to `side` while stacking them.
template <typename Scalar>
nn::Tensor<Scalar> make_image_batch(std::span<const ImageTensor* const> images, std::size_t side);

/// Writes model.json (describe() plus the checkpoint file name, relative to
/// the JSON's directory) and the binary checkpoint.
template <typename Scalar>
void save_model(const ModelGraph<Scalar>& model, const std::filesystem::path& json_path,
                const std::filesystem::path& checkpoint_path);

/// Rebuilds the graph from model.json and loads its checkpoint. Throws
/// DataError if the stored parameter list or checkpoint does not match.
template <typename Scalar>
std::unique_ptr<ModelGraph<Scalar>> load_model(const std::filesystem::path& json_path);

/// Reads only the config block of a model.json.
ModelConfig read_model_config(const std::filesystem::path& json_path);

extern template class ModelGraph<float>;
extern template class ModelGraph<double>;

}  // namespace iotids
