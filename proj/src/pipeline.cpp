#include "iotids/pipeline.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "iotids/error.hpp"
#include "iotids/image_store.hpp"
#include "iotids/random.hpp"

namespace iotids {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view to_string(Precision p) { return p == Precision::Float32 ? "float32" : "float64"; }

Precision parse_precision(std::string_view text) {
  if (text == "float32") return Precision::Float32;
  if (text == "float64") return Precision::Float64;
  throw ConfigError(fmt::format("unknown precision '{}' (expected float32 or float64)", text));
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(fmt::format("'{}' must be a JSON object", where));
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(fmt::format("unknown configuration key '{}{}'", where.empty() ? "" : std::string(where) + ".",
                                    key));
    }
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(fmt::format("configuration key '{}' has the wrong type", key));
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  try {
    return json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
  }
}

/// Writes through a temporary sibling so a failed stage never leaves a
/// half-written artifact under the final name.
void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
    out << text;
    if (!out) throw DataError(fmt::format("failed writing '{}'", path.string()));
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, "", {"seed", "inputs", "work_dir", "features", "label_column", "fractions", "block_length",
                     "empty_scan_rows", "full_scan", "synth", "backbones", "model", "train", "precision",
                     "external_results"});
  PipelineConfig c;
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  for (const auto& p : get_or<std::vector<std::string>>(j, "inputs", {})) c.inputs.push_back(resolve(base_dir, p));
  c.work_dir = resolve(base_dir, get_or<std::string>(j, "work_dir", c.work_dir.string()));
  c.features = get_or<std::vector<std::string>>(j, "features", {});
  c.label_column = get_or<std::string>(j, "label_column", c.label_column);
  if (j.contains("fractions")) {
    const auto& f = j["fractions"];
    check_keys(f, "fractions", {"ddos", "dos", "others"});
    for (ClassLabel cl : kAllClasses) {
      c.fractions[index_of(cl)] = get_or<double>(f, std::string(to_key(cl)).c_str(), c.fractions[index_of(cl)]);
    }
  }
  c.block_length = get_or<std::size_t>(j, "block_length", c.block_length);
  c.empty_scan_rows = get_or<std::size_t>(j, "empty_scan_rows", c.empty_scan_rows);
  c.full_scan = get_or<bool>(j, "full_scan", c.full_scan);
  if (j.contains("synth")) {
    json s = j["synth"];
    check_keys(s, "synth", {"output", "records", "theft_records", "distribution", "burst_length"});
    if (s.contains("output")) {
      c.synth_output = resolve(base_dir, get_or<std::string>(s, "output", ""));
      s.erase("output");
    }
    c.synth = SyntheticSpec::from_json(s);
  }
  if (j.contains("backbones")) {
    c.backbones.clear();
    for (const auto& b : get_or<std::vector<std::string>>(j, "backbones", {})) c.backbones.push_back(parse_backbone(b));
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, "model", {"base_channels", "blocks", "window_length"});
    c.model.base_channels = get_or<std::int64_t>(m, "base_channels", c.model.base_channels);
    c.model.blocks = get_or<std::int64_t>(m, "blocks", c.model.blocks);
    c.model.window_length = get_or<std::int64_t>(m, "window_length", c.model.window_length);
  }
  if (j.contains("train")) {
    json t = j["train"];
    check_keys(t, "train", {"learning_rate", "epochs", "batch_size", "validation_fraction", "selection_metric",
                            "optimizer", "window_stride", "precision"});
    if (t.contains("precision")) {
      c.precision = parse_precision(get_or<std::string>(t, "precision", ""));
      t.erase("precision");
    }
    c.train = TrainConfig::from_json(t);
  }
  if (j.contains("precision")) c.precision = parse_precision(get_or<std::string>(j, "precision", ""));
  if (j.contains("external_results")) {
    if (!j["external_results"].is_array()) throw ConfigError("'external_results' must be an array");
    for (const auto& e : j["external_results"]) {
      check_keys(e, "external_results[]", {"method", "multiclass_accuracy", "binary_accuracy"});
      c.external_results.push_back({get_or<std::string>(e, "method", ""), get_or<double>(e, "multiclass_accuracy", 0),
                                    get_or<double>(e, "binary_accuracy", 0)});
    }
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open configuration '{}'", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("configuration '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return from_json(j, fs::absolute(path).parent_path());
}

json PipelineConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["inputs"] = json::array();
  for (const auto& p : inputs) j["inputs"].push_back(p.generic_string());
  j["work_dir"] = work_dir.generic_string();
  j["features"] = features;
  j["label_column"] = label_column;
  for (ClassLabel c : kAllClasses) j["fractions"][std::string(to_key(c))] = fractions[index_of(c)];
  j["block_length"] = block_length;
  j["empty_scan_rows"] = empty_scan_rows;
  j["full_scan"] = full_scan;
  if (synth) {
    j["synth"] = synth->to_json();
    j["synth"].erase("seed");
    j["synth"]["output"] = synthetic_path().generic_string();
  }
  j["backbones"] = json::array();
  for (auto b : backbones) j["backbones"].push_back(to_key(b));
  j["model"] = {{"base_channels", model.base_channels}, {"blocks", model.blocks},
                {"window_length", model.window_length}};
  j["train"] = train.to_json();
  j["train"].erase("seed");
  j["precision"] = to_string(precision);
  j["external_results"] = json::array();
  for (const auto& e : external_results) {
    j["external_results"].push_back(
        {{"method", e.method}, {"multiclass_accuracy", e.multiclass_accuracy}, {"binary_accuracy", e.binary_accuracy}});
  }
  return j;
}

void PipelineConfig::validate() const {
  if (!features.empty() && features.size() != kFeatureCount) {
    throw ConfigError(fmt::format("'features' must list exactly {} columns (got {})", kFeatureCount, features.size()));
  }
  ingest_options().plan.validate();
  if (backbones.empty()) throw ConfigError("'backbones' must not be empty");
  std::set<BackboneKind> seen;
  for (auto b : backbones) {
    if (!seen.insert(b).second) throw ConfigError(fmt::format("backbone '{}' listed twice", to_key(b)));
  }
  model_config(backbones.front()).validate();
  train.validate();
  if (synth) synth->validate();
}

IngestOptions PipelineConfig::ingest_options() const {
  IngestOptions o;
  o.features = features;
  o.label_column = label_column;
  o.plan.fractions = fractions;
  o.plan.block_length = block_length;
  o.plan.seed = derive_seed(seed, "ingest");
  o.empty_scan_rows = empty_scan_rows;
  o.full_scan = full_scan;
  return o;
}

ModelConfig PipelineConfig::model_config(BackboneKind kind) const {
  ModelConfig m = model;
  m.backbone = kind;
  m.seed = derive_seed(seed, fmt::format("model/{}", to_key(kind)));
  return m;
}

TrainConfig PipelineConfig::train_config(BackboneKind kind) const {
  TrainConfig t = train;
  t.seed = derive_seed(seed, fmt::format("train/{}", to_key(kind)));
  return t;
}

fs::path PipelineConfig::synthetic_path() const {
  return synth_output.empty() ? work_dir / "synthetic.csv" : synth_output;
}

// ---------------------------------------------------------------------------
// synth, ingest

fs::path cmd_synth(const PipelineConfig& config, const StageOptions& options) {
  if (!config.synth) throw ConfigError("no 'synth' section in the configuration");
  SyntheticSpec spec = *config.synth;
  spec.seed = derive_seed(config.seed, "synth");
  const fs::path path = config.synthetic_path();
  std::ostringstream buffer;
  write_synthetic_csv(buffer, spec);
  write_text(path, buffer.str());
  if (options.out) {
    *options.out << fmt::format("wrote {} records ({} DDoS, {} DoS, {} Others, {} Theft) to {}\n",
                                spec.records[0] + spec.records[1] + spec.records[2] + spec.theft_records,
                                spec.records[0], spec.records[1], spec.records[2], spec.theft_records, path.string());
  }
  return path;
}

IngestResult cmd_ingest(const PipelineConfig& config, const StageOptions& options) {
  if (config.inputs.empty()) throw ConfigError("no input files configured ('inputs')");
  for (const auto& p : config.inputs) {
    if (!fs::is_regular_file(p)) throw DataError(fmt::format("input file '{}' is not readable", p.string()));
  }
  const WorkLayout layout{config.work_dir};
  fs::create_directories(layout.root);
  const fs::path tmp = layout.sampled_csv().string() + ".tmp";
  IngestResult result;
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write '{}'", layout.sampled_csv().string()));
    result = ingest_sources(config.inputs, config.ingest_options(), &out);
  }
  fs::rename(tmp, layout.sampled_csv());
  write_json(layout.summary_json(), result.to_json());
  for (const auto& w : result.warnings) spdlog::warn("ingest: {}", w);
  if (options.out) *options.out << result.summary.to_json().dump(2) << '\n';
  return result;
}

// ---------------------------------------------------------------------------
// featurize

json FeaturizeResult::to_json() const {
  json j;
  j["format"] = "iotids-image-manifest";
  j["version"] = 1;
  for (ClassLabel c : kAllClasses) {
    const auto i = index_of(c);
    j["classes"][std::string(to_key(c))] = {{"records", records[i]},
                                            {"images", images[i]},
                                            {"dropped_records", records[i] - images[i] * kRecordsPerImage},
                                            {"train_images", train_images[i]},
                                            {"training_records", training_records[i]}};
  }
  return j;
}

namespace {

/// Streams decoded records of sampled.csv in file order.
class SampledReader {
 public:
  SampledReader(const fs::path& path, const std::vector<std::string>& features, const std::string& label_column,
                std::size_t scan_rows)
      : path_(path), schema_{features, label_column} {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw DataError(fmt::format("sampled dataset '{}' is missing; run ingest first", path_.string()));
    FlowCsvParser parser(in, schema_);
    header_ = parser.header();
    std::vector<RawRecord> sample;
    while (sample.size() < std::max<std::size_t>(scan_rows, 1)) {
      auto raw = parser.next();
      if (!raw) break;
      sample.push_back(std::move(*raw));
    }
    if (sample.empty()) throw DataError(fmt::format("'{}' holds no records", path_.string()));
    kinds_ = infer_column_kinds(header_.size(), sample);
    decoder_.emplace(header_, schema_, kinds_);
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot reopen '{}'", path_.string()));
    FlowCsvParser parser(in, schema_);
    FlowRecord record;
    RowError error;
    while (auto raw = parser.next()) {
      switch (decoder_->decode(*raw, record, &error)) {
        case FlowRecordDecoder::Outcome::Record: fn(record); break;
        case FlowRecordDecoder::Outcome::Excluded: break;
        case FlowRecordDecoder::Outcome::Malformed:
          throw DataError(fmt::format("'{}' line {}: {}", path_.string(), error.line_number, error.message));
      }
    }
    if (!parser.errors().empty()) {
      throw DataError(fmt::format("'{}' line {}: {}", path_.string(), parser.errors().front().line_number,
                                  parser.errors().front().message));
    }
  }

  const FlowRecordDecoder& decoder() const { return *decoder_; }

 private:
  fs::path path_;
  FlowSchema schema_;
  std::vector<std::string> header_;
  std::vector<ColumnKind> kinds_;
  std::optional<FlowRecordDecoder> decoder_;
};

std::vector<std::string> features_from_summary(const WorkLayout& layout) {
  const json summary = read_json(layout.summary_json());
  if (summary.value("format", "") != "iotids-ingest-summary") {
    throw DataError(fmt::format("'{}' is not an ingest summary", layout.summary_json().string()));
  }
  auto features = summary.at("features").get<std::vector<std::string>>();
  if (features.size() != kFeatureCount) {
    throw DataError(fmt::format("'{}' lists {} features, expected {}", layout.summary_json().string(), features.size(),
                                kFeatureCount));
  }
  return features;
}

}  // namespace

FeaturizeResult cmd_featurize(const PipelineConfig& config, const StageOptions& options) {
  const WorkLayout layout{config.work_dir};
  if (!fs::exists(layout.sampled_csv())) {
    throw DataError(fmt::format("sampled dataset '{}' is missing; run ingest first", layout.sampled_csv().string()));
  }
  if (fs::exists(layout.stats_json()) && !options.force) {
    try {
      NormalizationStats::from_json(read_json(layout.stats_json()));
    } catch (const DataError& e) {
      throw DataError(fmt::format("existing '{}' is unreadable ({}); refusing to overwrite without --force",
                                  layout.stats_json().string(), e.what()));
    }
  }
  const auto features = features_from_summary(layout);
  SampledReader reader(layout.sampled_csv(), features, config.label_column, config.empty_scan_rows);

  FeaturizeResult result;
  reader.for_each([&](const FlowRecord& r) { ++result.records[index_of(r.label)]; });
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    result.images[i] = result.records[i] / kRecordsPerImage;
    result.train_images[i] =
        result.images[i] - validation_count(result.images[i], config.train.validation_fraction);
    result.training_records[i] = result.train_images[i] * kRecordsPerImage;
  }

  // Extrema come from the records that end up in training images only.
  MinMaxAccumulator acc;
  std::array<std::size_t, kNumClasses> seen{};
  reader.for_each([&](const FlowRecord& r) {
    if (seen[index_of(r.label)]++ < result.training_records[index_of(r.label)]) acc.add(r.features);
  });
  if (acc.count() == 0) throw DataError("no class has enough records for a training image");
  result.stats = acc.stats();
  result.stats.names = features;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    if (reader.decoder().feature_kinds()[f] == ColumnKind::Categorical) {
      result.stats.categories[f] = reader.decoder().encoder(f).categories();
    }
  }

  fs::create_directories(layout.image_dir());
  {
    std::array<std::unique_ptr<ImageSetWriter>, kNumClasses> writers;
    std::array<std::optional<ImageBuilder>, kNumClasses> builders;
    for (ClassLabel c : kAllClasses) {
      writers[index_of(c)] = std::make_unique<ImageSetWriter>(image_set_path(layout.image_dir(), c), c);
      builders[index_of(c)].emplace(c);
    }
    reader.for_each([&](const FlowRecord& r) {
      const auto i = index_of(r.label);
      if (auto image = builders[i]->push(to_bytes(normalize(r.features, result.stats)), r.seq_index)) {
        writers[i]->append(*image);
      }
    });
    for (auto& w : writers) w->close();
  }
  write_json(layout.stats_json(), result.stats.to_json());
  json manifest = result.to_json();
  manifest["validation_fraction"] = config.train.validation_fraction;
  write_json(layout.manifest_json(), manifest);

  for (ClassLabel c : kAllClasses) {
    if (result.images[index_of(c)] == 0) {
      spdlog::warn("featurize: class {} has {} records, fewer than the {} needed for one image", to_string(c),
                   result.records[index_of(c)], kRecordsPerImage);
    }
  }
  if (options.out) {
    for (ClassLabel c : kAllClasses) {
      *options.out << fmt::format("{:<7} {:>10} records -> {:>8} images\n", to_string(c), result.records[index_of(c)],
                                  result.images[index_of(c)]);
    }
  }
  return result;
}

ClassImages load_images(const WorkLayout& layout) {
  ClassImages images;
  for (ClassLabel c : kAllClasses) {
    const fs::path path = image_set_path(layout.image_dir(), c);
    if (!fs::exists(path)) throw DataError(fmt::format("image set '{}' is missing; run featurize first", path.string()));
    const auto header = read_image_set_header(path);
    if (header.label != c) {
      throw DataError(fmt::format("'{}' holds {} images, expected {}", path.string(), to_string(header.label),
                                  to_string(c)));
    }
    images[c] = read_image_set(path);
  }
  return images;
}

// ---------------------------------------------------------------------------
// train, evaluate

namespace {

DataSplit split_for(const PipelineConfig& config, const WorkLayout& layout, ClassImages& all) {
  const json manifest = read_json(layout.manifest_json());
  if (manifest.value("format", "") != "iotids-image-manifest") {
    throw DataError(fmt::format("'{}' is not an image manifest", layout.manifest_json().string()));
  }
  const double fitted = manifest.value("validation_fraction", -1.0);
  if (fitted != config.train.validation_fraction) {
    throw ConfigError(fmt::format(
        "images were featurized for validation_fraction {} but the training config uses {}; re-run featurize",
        fitted, config.train.validation_fraction));
  }
  all = load_images(layout);
  return split_train_validation(all, config.train.validation_fraction);
}

template <typename Scalar>
TrainReport train_with(const PipelineConfig& config, BackboneKind kind) {
  const WorkLayout layout{config.work_dir};
  ClassImages all;
  const DataSplit split = split_for(config, layout, all);
  const ClassWeights weights = compute_class_weights(all.counts());
  ModelGraph<Scalar> model(config.model_config(kind));
  spdlog::info("train {}: {} parameters, input {}x{}, {} epochs", to_string(kind), model.parameter_count(),
               model.resolution(), model.resolution(), config.train.epochs);
  TrainReport report = train(model, split.train, split.validation, weights, config.train_config(kind),
                             [&](const EpochRecord& e) {
                               spdlog::info("{} epoch {:>3}: loss {:.4f}  train acc {:.4f}  val acc {:.4f}  val f1 {:.4f}",
                                            to_key(kind), e.epoch, e.train_loss, e.train_accuracy,
                                            e.validation_accuracy, e.validation_f1);
                             });
  const fs::path dir = layout.model_dir(kind);
  fs::create_directories(dir);
  save_model(model, dir / "model.json", dir / "model.ckpt");
  report.checkpoint_path = fs::relative(dir / "model.ckpt", layout.root).generic_string();
  write_json(dir / "train_report.json", report.to_json());
  return report;
}

template <typename Scalar>
StreamEvaluation evaluate_with(const PipelineConfig& config, BackboneKind kind) {
  const WorkLayout layout{config.work_dir};
  const fs::path model_json = layout.model_dir(kind) / "model.json";
  if (!fs::exists(model_json)) {
    throw DataError(fmt::format("model '{}' is missing; run train first", model_json.string()));
  }
  const ModelConfig stored = read_model_config(model_json);
  if (stored.backbone != kind) {
    throw ConfigError(fmt::format("model '{}' is a {} (input {}x{}) but {} (input {}x{}) was requested",
                                  model_json.string(), to_string(stored.backbone), input_resolution(stored.backbone),
                                  input_resolution(stored.backbone), to_string(kind), input_resolution(kind),
                                  input_resolution(kind)));
  }
  const json description = read_json(model_json);
  const auto stored_resolution = description.value("input_resolution", std::size_t{0});
  if (stored_resolution != input_resolution(kind)) {
    throw ConfigError(fmt::format("model '{}' expects {}x{} images but backbone {} uses {}x{}", model_json.string(),
                                  stored_resolution, stored_resolution, to_key(kind), input_resolution(kind),
                                  input_resolution(kind)));
  }
  auto model = load_model<Scalar>(model_json);
  ClassImages all;
  const DataSplit split = split_for(config, layout, all);
  return evaluate_streams(*model, split.validation, compute_class_weights(all.counts()));
}

}  // namespace

TrainReport cmd_train(const PipelineConfig& config, BackboneKind kind, const StageOptions& options) {
  TrainReport report = config.precision == Precision::Float32 ? train_with<float>(config, kind)
                                                               : train_with<double>(config, kind);
  if (options.out) {
    const auto& b = report.best();
    *options.out << fmt::format("{}: best epoch {} of {}, train acc {:.4f} f1 {:.4f}, val acc {:.4f} f1 {:.4f}\n",
                                to_string(kind), report.best_epoch, report.epochs.size(), b.train_accuracy,
                                b.train_f1, b.validation_accuracy, b.validation_f1);
  }
  return report;
}

json EvaluationResult::to_json() const {
  json j;
  j["format"] = "iotids-metrics";
  j["version"] = 1;
  j["backbone"] = to_key(backbone);
  j["split"] = "validation";
  j["loss"] = validation.loss;
  j["metrics"] = validation.metrics.to_json();
  j["confusion"] = validation.confusion.to_json();
  return j;
}

EvaluationResult cmd_evaluate(const PipelineConfig& config, BackboneKind kind, const StageOptions& options) {
  EvaluationResult r;
  r.backbone = kind;
  r.validation = config.precision == Precision::Float32 ? evaluate_with<float>(config, kind)
                                                         : evaluate_with<double>(config, kind);
  r.binary = binary_collapse(r.validation.confusion);
  const fs::path dir = WorkLayout{config.work_dir}.model_dir(kind);
  write_json(dir / "metrics.json", r.to_json());
  json binary{{"format", "iotids-binary-metrics"}, {"version", 1}, {"backbone", to_key(kind)}};
  binary.update(r.binary.to_json());
  write_json(dir / "binary.json", binary);
  write_text(dir / "confusion.csv", r.validation.confusion.to_csv());
  if (options.out) {
    const auto& m = r.validation.metrics;
    *options.out << fmt::format("{} validation: accuracy {:.4f}, weighted F1 {:.4f}, binary accuracy {:.4f}, "
                                "binary F1 {:.4f}\n",
                                to_string(kind), m.accuracy, m.weighted_f1, r.binary.accuracy, r.binary.f1);
    *options.out << fmt::format("{:<8}{:>10}{:>10}{:>10}{:>12}\n", "class", "precision", "recall", "f1", "ovr_acc");
    for (ClassLabel c : kAllClasses) {
      const auto& cm = m[c];
      *options.out << fmt::format("{:<8}{:>10.4f}{:>10.4f}{:>10.4f}{:>12.4f}\n", to_string(c), cm.precision,
                                  cm.recall, cm.f1, cm.accuracy);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// report, pipeline

std::vector<TrainReport> cmd_report(const PipelineConfig& config, const StageOptions& options) {
  const WorkLayout layout{config.work_dir};
  std::vector<TrainReport> reports;
  std::vector<ComparisonEntry> entries;
  for (BackboneKind kind : config.backbones) {
    const fs::path dir = layout.model_dir(kind);
    if (!fs::exists(dir / "train_report.json")) {
      spdlog::warn("report: no training report for {}; skipped", to_key(kind));
      continue;
    }
    reports.push_back(TrainReport::from_json(read_json(dir / "train_report.json")));
    if (fs::exists(dir / "metrics.json") && fs::exists(dir / "binary.json")) {
      const json metrics = read_json(dir / "metrics.json");
      const json binary = read_json(dir / "binary.json");
      try {
        entries.push_back({std::string(to_string(kind)), metrics.at("metrics").at("accuracy").get<double>(),
                           binary.at("accuracy").get<double>()});
      } catch (const nlohmann::json::exception& e) {
        throw DataError(fmt::format("malformed metrics for {}: {}", to_key(kind), e.what()));
      }
    }
  }
  if (reports.empty()) throw DataError("no training reports found; run train first");
  write_text(layout.comparison_csv(), comparison_table_csv(reports));
  entries.insert(entries.end(), config.external_results.begin(), config.external_results.end());
  if (!entries.empty()) write_text(layout.methods_csv(), export_comparison_csv(entries));
  if (options.out) {
    *options.out << fmt::format("{:<16}{:>11}{:>10}{:>10}{:>10}\n", "model", "train_acc", "train_f1", "val_acc",
                                "val_f1");
    for (std::size_t i : compare_models(reports)) {
      const auto& b = reports[i].best();
      *options.out << fmt::format("{:<16}{:>11.4f}{:>10.4f}{:>10.4f}{:>10.4f}\n", to_string(reports[i].backbone),
                                  b.train_accuracy, b.train_f1, b.validation_accuracy, b.validation_f1);
    }
  }
  return reports;
}

void cmd_pipeline(const PipelineConfig& config, const StageOptions& options) {
  PipelineConfig run = config;
  if (run.synth) run.inputs = {cmd_synth(run, options)};
  cmd_ingest(run, options);
  cmd_featurize(run, options);
  for (BackboneKind kind : run.backbones) {
    cmd_train(run, kind, options);
    cmd_evaluate(run, kind, options);
  }
  cmd_report(run, options);
}

}  // namespace iotids
