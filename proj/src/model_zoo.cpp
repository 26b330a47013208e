#include "iotids/model_zoo.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <fmt/core.h>

#include "iotids/error.hpp"
#include "iotids/nn/checkpoint.hpp"
#include "iotids/random.hpp"

namespace iotids {

using nn::Index;
using nn::Shape;
using nn::Var;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

Index pooled(Index side) { return side >= 2 ? side / 2 : side; }

}  // namespace

std::string_view to_key(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::MicroXception: return "xception";
    case BackboneKind::MicroInception: return "inception";
    case BackboneKind::MicroResNet: return "resnet";
  }
  return "?";
}

std::string_view to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::MicroXception: return "MicroXception";
    case BackboneKind::MicroInception: return "MicroInception";
    case BackboneKind::MicroResNet: return "MicroResNet";
  }
  return "?";
}

BackboneKind parse_backbone(std::string_view text) {
  const std::string t = lower(text);
  for (BackboneKind k : kAllBackbones) {
    if (t == to_key(k) || t == lower(to_string(k))) return k;
  }
  throw ConfigError(fmt::format("unknown backbone '{}' (expected xception, inception or resnet)", text));
}

std::size_t input_resolution(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::MicroXception: return 71;
    case BackboneKind::MicroInception: return 75;
    case BackboneKind::MicroResNet: return 32;
  }
  return 0;
}

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (base_channels < 1 || base_channels > 256) {
    problems.push_back(fmt::format("base_channels must be in [1, 256] (got {})", base_channels));
  }
  if (blocks < 1 || blocks > 8) problems.push_back(fmt::format("blocks must be in [1, 8] (got {})", blocks));
  if (lstm_units != 64) problems.push_back(fmt::format("lstm_units must be 64 (got {})", lstm_units));
  if (num_classes != 3) problems.push_back(fmt::format("num_classes must be 3 (got {})", num_classes));
  if (window_length < 1 || window_length > 256) {
    problems.push_back(fmt::format("window_length must be in [1, 256] (got {})", window_length));
  }
  if (!problems.empty()) {
    std::string msg = "invalid model config: ";
    for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
    throw ConfigError(msg);
  }
}

nlohmann::ordered_json ModelConfig::to_json() const {
  return {{"backbone", to_key(backbone)},     {"base_channels", base_channels}, {"blocks", blocks},
          {"lstm_units", lstm_units},         {"num_classes", num_classes},     {"window_length", window_length},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::ordered_json& j) {
  ModelConfig c;
  try {
    c.backbone = parse_backbone(j.at("backbone").get<std::string>());
    c.base_channels = j.value("base_channels", c.base_channels);
    c.blocks = j.value("blocks", c.blocks);
    c.lstm_units = j.value("lstm_units", c.lstm_units);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.window_length = j.value("window_length", c.window_length);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("invalid model config: {}", e.what()));
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Image batches

template <typename Scalar>
nn::Tensor<Scalar> make_image_batch(std::span<const ResizedImage* const> images, std::size_t side) {
  if (images.empty()) throw std::invalid_argument("make_image_batch: no images");
  const auto s = static_cast<Index>(side);
  nn::Tensor<Scalar> batch({static_cast<Index>(images.size()), s, s, static_cast<Index>(kImageChannels)});
  const Index per_image = s * s * static_cast<Index>(kImageChannels);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->side != side) {
      throw ConfigError(fmt::format("image resolution {0}x{0} does not match the model's expected {1}x{1}",
                                    images[i]->side, side));
    }
    for (Index k = 0; k < per_image; ++k) {
      batch[static_cast<Index>(i) * per_image + k] = static_cast<Scalar>(images[i]->pixels[k]);
    }
  }
  return batch;
}

template <typename Scalar>
nn::Tensor<Scalar> make_image_batch(std::span<const ImageTensor* const> images, std::size_t side) {
  std::vector<ResizedImage> resized;
  resized.reserve(images.size());
  for (const auto* img : images) resized.push_back(bilinear_resize(*img, side));
  std::vector<const ResizedImage*> ptrs;
  for (const auto& r : resized) ptrs.push_back(&r);
  return make_image_batch<Scalar>(std::span<const ResizedImage* const>(ptrs), side);
}

template nn::Tensor<float> make_image_batch<float>(std::span<const ResizedImage* const>, std::size_t);
template nn::Tensor<double> make_image_batch<double>(std::span<const ResizedImage* const>, std::size_t);
template nn::Tensor<float> make_image_batch<float>(std::span<const ImageTensor* const>, std::size_t);
template nn::Tensor<double> make_image_batch<double>(std::span<const ImageTensor* const>, std::size_t);

// ---------------------------------------------------------------------------
// Construction

template <typename Scalar>
ModelGraph<Scalar>::ModelGraph(const ModelConfig& config) : config_(config) {
  config_.validate();
  build();
}

template <typename Scalar>
typename ModelGraph<Scalar>::Param& ModelGraph<Scalar>::add_parameter(std::string name, Shape shape,
                                                                      bool trainable) {
  Param p;
  p.name = std::move(name);
  p.value = TensorT(std::move(shape));
  p.trainable = trainable;
  params_.push_back(std::move(p));
  return params_.back();
}

template <typename Scalar>
typename ModelGraph<Scalar>::Param& ModelGraph<Scalar>::add_uniform(std::string name, Shape shape, double limit) {
  Param& p = add_parameter(std::move(name), std::move(shape));
  Rng rng(derive_seed(config_.seed, p.name));
  for (Index i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<Scalar>(uniform(rng, -limit, limit));
  return p;
}

template <typename Scalar>
typename ModelGraph<Scalar>::BatchNormParams ModelGraph<Scalar>::add_batch_norm(const std::string& prefix,
                                                                               Index channels) {
  BatchNormParams bn;
  bn.gamma = &add_parameter(prefix + ".gamma", {channels});
  bn.gamma->value.data().setOnes();
  bn.beta = &add_parameter(prefix + ".beta", {channels});
  bn.mean = &add_parameter(prefix + ".running_mean", {channels}, false);
  bn.var = &add_parameter(prefix + ".running_var", {channels}, false);
  bn.var->value.data().setOnes();
  return bn;
}

template <typename Scalar>
void ModelGraph<Scalar>::build() {
  const Index c0 = config_.base_channels;
  const Index in_c = static_cast<Index>(kImageChannels);
  auto he = [](Index fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); };
  auto conv = [&](const std::string& name, Index k, Index cin, Index cout) -> Param& {
    return add_uniform(name, {k, k, cin, cout}, he(k * k * cin));
  };
  auto bias = [&](const std::string& name, Index n) -> Param& { return add_parameter(name, {n}); };

  Index side = static_cast<Index>(resolution());
  const auto& kind = config_.backbone;
  stem_options_ = {2, kind == BackboneKind::MicroXception || kind == BackboneKind::MicroInception
                          ? nn::Padding::Valid
                          : nn::Padding::Same};
  stem_w_ = &conv("stem.conv", 3, in_c, c0);
  stem_b_ = &bias("stem.bias", c0);
  side = nn::conv_geometry(side, side, 3, 3, stem_options_).out_h;
  layers_.push_back({"stem", "conv3x3/2+relu", {side, side, c0}});
  stem_pool_ = kind == BackboneKind::MicroInception && side >= 2;
  if (stem_pool_) {
    side = pooled(side);
    layers_.push_back({"stem.pool", "avg_pool2", {side, side, c0}});
  }

  Index channels = c0;
  for (Index b = 0; b < config_.blocks; ++b) {
    const std::string p = fmt::format("block{}", b);
    Block blk;
    if (kind == BackboneKind::MicroXception) {
      const Index cout = c0 << b;
      blk.weights.push_back(&add_uniform(p + ".depthwise", {3, 3, channels}, he(9)));
      blk.weights.push_back(&conv(p + ".pointwise", 1, channels, cout));
      blk.bn = add_batch_norm(p + ".bn", cout);
      if (cout != channels) {
        blk.projection = &conv(p + ".projection", 1, channels, cout);
        blk.projection_bias = &bias(p + ".projection_bias", cout);
      }
      channels = cout;
      layers_.push_back({p, "separable3x3+bn+relu+skip", {side, side, channels}});
    } else if (kind == BackboneKind::MicroInception) {
      blk.weights.push_back(&conv(p + ".branch1x1", 1, channels, c0));
      blk.weights.push_back(&conv(p + ".branch3x3", 3, channels, c0));
      blk.weights.push_back(&conv(p + ".branch5x5", 5, channels, c0));
      channels = 3 * c0;
      blk.bn = add_batch_norm(p + ".bn", channels);
      layers_.push_back({p, "inception(1x1,3x3,5x5)+bn+relu", {side, side, channels}});
    } else {
      const Index cout = c0 << b;
      blk.weights.push_back(&conv(p + ".conv1", 3, channels, cout));
      blk.weights.push_back(&bias(p + ".bias1", cout));
      blk.weights.push_back(&conv(p + ".conv2", 3, cout, cout));
      blk.weights.push_back(&bias(p + ".bias2", cout));
      if (cout != channels) {
        blk.projection = &conv(p + ".projection", 1, channels, cout);
        blk.projection_bias = &bias(p + ".projection_bias", cout);
      }
      channels = cout;
      layers_.push_back({p, "residual(conv3x3,conv3x3)+relu", {side, side, channels}});
    }
    blk.pool = side >= 2;
    if (blk.pool) {
      side = pooled(side);
      layers_.push_back({p + ".pool", "avg_pool2", {side, side, channels}});
    }
    blocks_.push_back(std::move(blk));
  }
  feature_dim_ = channels;
  layers_.push_back({"gap", "global_avg_pool", {feature_dim_}});

  const Index h = config_.lstm_units;
  const double lstm_limit = 1.0 / std::sqrt(static_cast<double>(h));
  lstm_wx_ = &add_uniform("lstm.input_weights", {feature_dim_, 4 * h}, lstm_limit);
  lstm_wh_ = &add_uniform("lstm.recurrent_weights", {h, 4 * h}, lstm_limit);
  lstm_b_ = &add_parameter("lstm.bias", {4 * h});
  layers_.push_back({"lstm", fmt::format("lstm({})", h), {h}});
  dense_w_ = &add_uniform("dense.weights", {h, config_.num_classes}, he(h));
  dense_b_ = &add_parameter("dense.bias", {config_.num_classes});
  layers_.push_back({"dense", "dense+softmax", {config_.num_classes}});
}

// ---------------------------------------------------------------------------
// Parameters

template <typename Scalar>
std::vector<typename ModelGraph<Scalar>::Param*> ModelGraph<Scalar>::parameters() {
  std::vector<Param*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename Scalar>
std::vector<const typename ModelGraph<Scalar>::Param*> ModelGraph<Scalar>::parameters() const {
  std::vector<const Param*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

template <typename Scalar>
std::vector<typename ModelGraph<Scalar>::Param*> ModelGraph<Scalar>::trainable_parameters() {
  std::vector<Param*> out;
  for (auto& p : params_) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

template <typename Scalar>
std::size_t ModelGraph<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += static_cast<std::size_t>(p.value.size());
  }
  return n;
}

template <typename Scalar>
typename ModelGraph<Scalar>::Param& ModelGraph<Scalar>::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range(fmt::format("no parameter named '{}'", name));
}

template <typename Scalar>
std::vector<typename ModelGraph<Scalar>::TensorT> ModelGraph<Scalar>::snapshot() const {
  std::vector<TensorT> out;
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

template <typename Scalar>
void ModelGraph<Scalar>::restore(const std::vector<TensorT>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != params_[i].value.shape()) throw std::invalid_argument("restore: shape mismatch");
    params_[i].value = values[i];
  }
}

template <typename Scalar>
nn::LstmWeights<Scalar> ModelGraph<Scalar>::lstm_weights() const {
  return {lstm_wx_->value.matrix(), lstm_wh_->value.matrix(), lstm_b_->value.data()};
}

// ---------------------------------------------------------------------------
// Forward passes

template <typename Scalar>
Var ModelGraph<Scalar>::apply_batch_norm(nn::Tape<Scalar>& tape, Var x, BatchNormParams& bn,
                                         nn::BatchNormMode mode) {
  return nn::batch_norm(tape, x, tape.parameter(*bn.gamma), tape.parameter(*bn.beta), *bn.mean, *bn.var, mode);
}

template <typename Scalar>
Var ModelGraph<Scalar>::backbone(nn::Tape<Scalar>& tape, Var images, nn::BatchNormMode mode) {
  const auto& shape = tape.value(images).shape();
  const auto r = static_cast<Index>(resolution());
  if (shape.size() != 4 || shape[1] != r || shape[2] != r || shape[3] != static_cast<Index>(kImageChannels)) {
    throw ConfigError(fmt::format("backbone {} expects input [N x {} x {} x 3], got {}", to_string(config_.backbone),
                                  r, r, nn::shape_string(shape)));
  }
  auto P = [&](Param* p) { return p ? tape.parameter(*p) : Var::none(); };
  const nn::Conv2dOptions same{1, nn::Padding::Same};

  Var x = nn::relu(tape, nn::conv2d(tape, images, P(stem_w_), P(stem_b_), stem_options_));
  if (stem_pool_) x = nn::avg_pool2d(tape, x);
  for (auto& blk : blocks_) {
    switch (config_.backbone) {
      case BackboneKind::MicroXception: {
        Var main = nn::separable_conv(tape, x, P(blk.weights[0]), P(blk.weights[1]), Var::none(), same);
        main = nn::relu(tape, apply_batch_norm(tape, main, blk.bn, mode));
        const Var skip = blk.projection ? nn::conv2d(tape, x, P(blk.projection), P(blk.projection_bias), same) : x;
        x = nn::add(tape, main, skip);
        break;
      }
      case BackboneKind::MicroInception: {
        x = nn::inception_block(tape, x, nn::InceptionBranches{P(blk.weights[0]), P(blk.weights[1]), P(blk.weights[2])});
        x = nn::relu(tape, apply_batch_norm(tape, x, blk.bn, mode));
        break;
      }
      case BackboneKind::MicroResNet: {
        nn::ResidualWeights w{P(blk.weights[0]), P(blk.weights[1]), P(blk.weights[2]), P(blk.weights[3]),
                              P(blk.projection), P(blk.projection_bias)};
        x = nn::relu(tape, nn::residual_block(tape, x, w));
        break;
      }
    }
    if (blk.pool) x = nn::avg_pool2d(tape, x);
  }
  return nn::global_avg_pool(tape, x);
}

template <typename Scalar>
Var ModelGraph<Scalar>::head(nn::Tape<Scalar>& tape, Var features, Index steps, Index batch) {
  const auto& shape = tape.value(features).shape();
  if (shape.size() != 2 || shape[0] != steps * batch || shape[1] != feature_dim_) {
    throw std::invalid_argument(fmt::format("head expects features [{} x {}], got {}", steps * batch, feature_dim_,
                                            nn::shape_string(shape)));
  }
  const Index h = config_.lstm_units;
  const Var wx = tape.parameter(*lstm_wx_);
  const Var wh = tape.parameter(*lstm_wh_);
  const Var b = tape.parameter(*lstm_b_);
  Var state = tape.constant(TensorT({batch, 2 * h}));
  for (Index t = 0; t < steps; ++t) {
    const Var x_t = steps == 1 ? features : nn::slice_rows(tape, features, t * batch, batch);
    state = nn::lstm_cell(tape, x_t, state, wx, wh, b);
  }
  const Var hidden = nn::slice_columns(tape, state, 0, h);
  return nn::softmax(tape, nn::dense(tape, hidden, tape.parameter(*dense_w_), tape.parameter(*dense_b_)));
}

template <typename Scalar>
StreamPrediction ModelGraph<Scalar>::classify(const nn::Vector<Scalar>& hidden) const {
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  Row logits = hidden.transpose() * dense_w_->value.matrix() + dense_b_->value.data().transpose();
  const Row e = (logits.array() - logits.maxCoeff()).exp().matrix();
  const Row p = e / e.sum();
  StreamPrediction out;
  Index best = 0;
  for (Index k = 0; k < p.size(); ++k) {
    out.probabilities[static_cast<std::size_t>(k)] = static_cast<double>(p[k]);
    if (p[k] > p[best]) best = k;
  }
  out.label = class_from_index(static_cast<std::size_t>(best));
  return out;
}

template <typename Scalar>
WindowOutput<Scalar> ModelGraph<Scalar>::forward_window(std::span<const ResizedImage> window,
                                                        const nn::LstmState<Scalar>& initial) {
  if (window.empty() || static_cast<std::int64_t>(window.size()) > config_.window_length) {
    throw std::invalid_argument(
        fmt::format("window holds {} images, expected 1..{}", window.size(), config_.window_length));
  }
  const Features features = extract_features(window);
  const auto weights = lstm_weights();
  WindowOutput<Scalar> out{{}, initial};
  for (Index t = 0; t < features.rows(); ++t) {
    out.state = nn::lstm_step<Scalar>(features.row(t).transpose(), out.state, weights).state;
    ++lstm_steps_;
  }
  out.probabilities = classify(out.state.hidden).probabilities;
  return out;
}

template <typename Scalar>
typename ModelGraph<Scalar>::Features ModelGraph<Scalar>::extract_features(std::span<const ResizedImage> images) {
  constexpr std::size_t kChunk = 64;
  Features out(static_cast<Index>(images.size()), feature_dim_);
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const std::size_t n = std::min(kChunk, images.size() - begin);
    std::vector<const ResizedImage*> ptrs;
    for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&images[begin + i]);
    nn::Tape<Scalar> tape(false);
    const Var x = tape.constant(make_image_batch<Scalar>(std::span<const ResizedImage* const>(ptrs), resolution()));
    out.middleRows(static_cast<Index>(begin), static_cast<Index>(n)) =
        tape.value(backbone(tape, x, nn::BatchNormMode::Eval)).matrix();
  }
  return out;
}

template <typename Scalar>
typename ModelGraph<Scalar>::Features ModelGraph<Scalar>::extract_features(std::span<const ImageTensor> images) {
  constexpr std::size_t kChunk = 64;
  Features out(static_cast<Index>(images.size()), feature_dim_);
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const std::size_t n = std::min(kChunk, images.size() - begin);
    std::vector<const ImageTensor*> ptrs;
    for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&images[begin + i]);
    nn::Tape<Scalar> tape(false);
    const Var x = tape.constant(make_image_batch<Scalar>(std::span<const ImageTensor* const>(ptrs), resolution()));
    out.middleRows(static_cast<Index>(begin), static_cast<Index>(n)) =
        tape.value(backbone(tape, x, nn::BatchNormMode::Eval)).matrix();
  }
  return out;
}

template <typename Scalar>
std::vector<StreamPrediction> ModelGraph<Scalar>::predict_from_features(const Features& features, bool stateful) {
  const auto weights = lstm_weights();
  const Index n = features.rows();
  std::vector<StreamPrediction> out;
  out.reserve(static_cast<std::size_t>(n));
  if (stateful) {
    auto state = nn::LstmState<Scalar>::zeros(config_.lstm_units);
    for (Index i = 0; i < n; ++i) {
      state = nn::lstm_step<Scalar>(features.row(i).transpose(), state, weights).state;
      ++lstm_steps_;
      out.push_back(classify(state.hidden));
    }
    return out;
  }
  const Index window = config_.window_length;
  for (Index i = 0; i < n; ++i) {
    auto state = nn::LstmState<Scalar>::zeros(config_.lstm_units);
    for (Index t = std::max<Index>(0, i - window + 1); t <= i; ++t) {
      state = nn::lstm_step<Scalar>(features.row(t).transpose(), state, weights).state;
      ++lstm_steps_;
    }
    out.push_back(classify(state.hidden));
  }
  return out;
}

template <typename Scalar>
std::vector<StreamPrediction> ModelGraph<Scalar>::predict_stream(std::span<const ResizedImage> images,
                                                                 bool stateful) {
  if (images.empty()) return {};
  return predict_from_features(extract_features(images), stateful);
}

template <typename Scalar>
std::vector<StreamPrediction> ModelGraph<Scalar>::predict_stream(std::span<const ImageTensor> images,
                                                                 bool stateful) {
  if (images.empty()) return {};
  return predict_from_features(extract_features(images), stateful);
}

// ---------------------------------------------------------------------------
// Serialization

template <typename Scalar>
nlohmann::ordered_json ModelGraph<Scalar>::describe() const {
  nlohmann::ordered_json j;
  j["format"] = "iotids-model";
  j["version"] = 1;
  j["config"] = config_.to_json();
  j["precision"] = sizeof(Scalar) == 4 ? "float32" : "float64";
  j["input_resolution"] = resolution();
  j["feature_dim"] = feature_dim_;
  j["parameter_count"] = parameter_count();
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : layers_) layers.push_back({{"name", l.name}, {"type", l.type}, {"output", l.output}});
  auto& params = j["parameters"] = nlohmann::ordered_json::array();
  for (const auto& p : params_) {
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"trainable", p.trainable}});
  }
  return j;
}

template <typename Scalar>
void save_model(const ModelGraph<Scalar>& model, const std::filesystem::path& json_path,
                const std::filesystem::path& checkpoint_path) {
  nn::save_checkpoint<Scalar>(checkpoint_path, model.parameters());
  auto j = model.describe();
  j["checkpoint"] = std::filesystem::relative(checkpoint_path, json_path.parent_path()).generic_string();
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write '{}'", json_path.string()));
  out << j.dump(2) << '\n';
}

namespace {

nlohmann::ordered_json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  try {
    return nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
  }
}

}  // namespace

ModelConfig read_model_config(const std::filesystem::path& json_path) {
  const auto j = read_json_file(json_path);
  if (j.value("format", "") != "iotids-model") {
    throw DataError(fmt::format("'{}' is not a model description", json_path.string()));
  }
  return ModelConfig::from_json(j.at("config"));
}

template <typename Scalar>
std::unique_ptr<ModelGraph<Scalar>> load_model(const std::filesystem::path& json_path) {
  const auto j = read_json_file(json_path);
  auto model = std::make_unique<ModelGraph<Scalar>>(read_model_config(json_path));
  try {
    const auto& stored = j.at("parameters");
    const auto params = model->parameters();
    if (stored.size() != params.size()) {
      throw DataError(fmt::format("'{}' lists {} parameters, the rebuilt model has {}", json_path.string(),
                                  stored.size(), params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (stored[i].at("name").get<std::string>() != params[i]->name ||
          stored[i].at("shape").get<Shape>() != params[i]->value.shape()) {
        throw DataError(fmt::format("'{}' parameter {} does not match the rebuilt model ('{}')", json_path.string(),
                                    i, params[i]->name));
      }
    }
    nn::load_checkpoint<Scalar>(json_path.parent_path() / j.at("checkpoint").get<std::string>(), params);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed model description '{}': {}", json_path.string(), e.what()));
  }
  return model;
}

template class ModelGraph<float>;
template class ModelGraph<double>;
template void save_model<float>(const ModelGraph<float>&, const std::filesystem::path&, const std::filesystem::path&);
template void save_model<double>(const ModelGraph<double>&, const std::filesystem::path&,
                                 const std::filesystem::path&);
template std::unique_ptr<ModelGraph<float>> load_model<float>(const std::filesystem::path&);
template std::unique_ptr<ModelGraph<double>> load_model<double>(const std::filesystem::path&);

}  // namespace iotids
