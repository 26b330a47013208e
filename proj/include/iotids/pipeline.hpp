#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/ingest.hpp"
#include "iotids/metrics.hpp"
#include "iotids/model_zoo.hpp"
#include "iotids/synth.hpp"
#include "iotids/trainer.hpp"

namespace iotids {

enum class Precision { Float32, Float64 };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view text);

/// One JSON document drives every stage. Relative paths are resolved
/// against the directory of the configuration file.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> inputs;
  std::filesystem::path work_dir = "work";
  std::vector<std::string> features;  ///< 16 column names; empty selects by variance
  std::string label_column = "category";
  std::array<double, kNumClasses> fractions{1.0, 1.0, 1.0};
  std::size_t block_length = 480;
  std::size_t empty_scan_rows = 100000;
  bool full_scan = false;

  /// When set, `synth` writes this dataset and it becomes the only input.
  std::optional<SyntheticSpec> synth;
  std::filesystem::path synth_output;  ///< default: <work_dir>/synthetic.csv

  std::vector<BackboneKind> backbones{kAllBackbones.begin(), kAllBackbones.end()};
  ModelConfig model;  ///< backbone and seed are filled per run
  TrainConfig train;  ///< seed is filled per run
  Precision precision = Precision::Float64;

  std::vector<ComparisonEntry> external_results;

  /// Throws ConfigError naming the offending key.
  static PipelineConfig from_json(const nlohmann::ordered_json& j, const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  void validate() const;

  IngestOptions ingest_options() const;
  ModelConfig model_config(BackboneKind kind) const;
  TrainConfig train_config(BackboneKind kind) const;
  std::filesystem::path synthetic_path() const;
};

/// Artifact locations under work_dir.
struct WorkLayout {
  std::filesystem::path root;

  std::filesystem::path sampled_csv() const { return root / "sampled.csv"; }
  std::filesystem::path summary_json() const { return root / "summary.json"; }
  std::filesystem::path image_dir() const { return root / "images"; }
  std::filesystem::path stats_json() const { return image_dir() / "stats.json"; }
  std::filesystem::path manifest_json() const { return image_dir() / "manifest.json"; }
  std::filesystem::path model_dir(BackboneKind kind) const { return root / "models" / std::string(to_key(kind)); }
  std::filesystem::path comparison_csv() const { return root / "comparison.csv"; }
  std::filesystem::path methods_csv() const { return root / "methods.csv"; }
};

struct StageOptions {
  bool force = false;          ///< overwrite artifacts that fail validation
  std::ostream* out = nullptr;  ///< human-readable summary
};

/// Generates the synthetic dataset. Returns its path.
std::filesystem::path cmd_synth(const PipelineConfig& config, const StageOptions& options = {});

IngestResult cmd_ingest(const PipelineConfig& config, const StageOptions& options = {});

struct FeaturizeResult {
  std::array<std::size_t, kNumClasses> records{};
  std::array<std::size_t, kNumClasses> images{};
  std::array<std::size_t, kNumClasses> train_images{};
  std::array<std::size_t, kNumClasses> training_records{};  ///< records the stats were fitted on
  NormalizationStats stats;

  nlohmann::ordered_json to_json() const;
};

/// Fits min/max on each class's training partition of sampled.csv, then
/// writes per-class image sets, stats.json and manifest.json. Refuses to
/// replace an unreadable stats.json unless options.force is set.
FeaturizeResult cmd_featurize(const PipelineConfig& config, const StageOptions& options = {});

/// Loads per-class image sets written by cmd_featurize.
ClassImages load_images(const WorkLayout& layout);

TrainReport cmd_train(const PipelineConfig& config, BackboneKind kind, const StageOptions& options = {});

struct EvaluationResult {
  BackboneKind backbone = BackboneKind::MicroResNet;
  StreamEvaluation validation;
  BinaryCollapseReport binary;

  nlohmann::ordered_json to_json() const;
};

/// Re-loads the saved model and scores the validation split. Throws
/// ConfigError when the stored model does not match the backbone.
EvaluationResult cmd_evaluate(const PipelineConfig& config, BackboneKind kind, const StageOptions& options = {});

/// Writes comparison.csv over the trained backbones and methods.csv over
/// them plus the configured external results.
std::vector<TrainReport> cmd_report(const PipelineConfig& config, const StageOptions& options = {});

/// synth (when configured), ingest, featurize, then train and evaluate per
/// backbone, then report.
void cmd_pipeline(const PipelineConfig& config, const StageOptions& options = {});

}  // namespace iotids
