// iotids: flow records -> images -> CNN+LSTM classifiers -> metrics.
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "iotids/error.hpp"
#include "iotids/pipeline.hpp"

namespace {

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kInternalError = 3 };

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> work_dir;
  std::vector<std::string> inputs;
  std::vector<std::string> backbones;
  std::optional<int> epochs;
  std::optional<std::string> precision;
  bool force = false;
  bool quiet = false;
};

iotids::PipelineConfig load_config(const Overrides& o) {
  namespace fs = std::filesystem;
  iotids::PipelineConfig c;
  if (!o.config_path.empty()) {
    c = iotids::PipelineConfig::load(o.config_path);
  } else {
    c.work_dir = fs::current_path() / c.work_dir;
  }
  if (o.seed) c.seed = *o.seed;
  if (o.work_dir) c.work_dir = fs::absolute(*o.work_dir);
  if (!o.inputs.empty()) {
    c.inputs.clear();
    for (const auto& p : o.inputs) c.inputs.push_back(fs::absolute(p));
  }
  if (!o.backbones.empty()) {
    c.backbones.clear();
    for (const auto& b : o.backbones) c.backbones.push_back(iotids::parse_backbone(b));
  }
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.precision) c.precision = iotids::parse_precision(*o.precision);
  c.validate();
  return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "top-level seed (overrides the config)");
  cmd->add_option("-w,--work-dir", o.work_dir, "artifact directory (overrides the config)");
  cmd->add_flag("-q,--quiet", o.quiet, "only print warnings and errors to stderr");
}

int run(int argc, char** argv) {
  CLI::App app{"IoT intrusion detection: flow records to image sequences to CNN+LSTM classifiers"};
  app.require_subcommand(1);
  Overrides o;

  auto* synth = app.add_subcommand("synth", "write a seeded synthetic flow dataset");
  auto* ingest = app.add_subcommand("ingest", "sub-sample input CSVs into sampled.csv and summary.json");
  auto* featurize = app.add_subcommand("featurize", "normalize sampled records and pack them into images");
  auto* train = app.add_subcommand("train", "train one model per configured backbone");
  auto* evaluate = app.add_subcommand("evaluate", "score saved models on the validation split");
  auto* report = app.add_subcommand("report", "write the model comparison tables");
  auto* pipeline = app.add_subcommand("pipeline", "run every stage in order");

  for (auto* cmd : {synth, ingest, featurize, train, evaluate, report, pipeline}) add_common(cmd, o);
  for (auto* cmd : {ingest, pipeline}) cmd->add_option("-i,--input", o.inputs, "input CSV files (override the config)");
  for (auto* cmd : {train, evaluate, report, pipeline}) {
    cmd->add_option("-b,--backbone", o.backbones, "xception, inception or resnet (repeatable)");
  }
  for (auto* cmd : {train, pipeline}) cmd->add_option("--epochs", o.epochs, "training epochs")->check(CLI::PositiveNumber);
  for (auto* cmd : {train, evaluate, pipeline}) {
    cmd->add_option("--precision", o.precision, "float32 or float64")->check(CLI::IsMember({"float32", "float64"}));
  }
  for (auto* cmd : {featurize, pipeline}) cmd->add_flag("-f,--force", o.force, "replace unreadable artifacts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  auto logger = spdlog::stderr_color_mt("iotids");
  logger->set_pattern("[%H:%M:%S] %^%l%$ %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(o.quiet ? spdlog::level::warn : spdlog::level::info);

  const iotids::PipelineConfig config = load_config(o);
  const iotids::StageOptions options{o.force, &std::cout};

  if (*synth) {
    iotids::cmd_synth(config, options);
  } else if (*ingest) {
    iotids::cmd_ingest(config, options);
  } else if (*featurize) {
    iotids::cmd_featurize(config, options);
  } else if (*train) {
    for (auto kind : config.backbones) iotids::cmd_train(config, kind, options);
  } else if (*evaluate) {
    for (auto kind : config.backbones) iotids::cmd_evaluate(config, kind, options);
  } else if (*report) {
    iotids::cmd_report(config, options);
  } else if (*pipeline) {
    iotids::cmd_pipeline(config, options);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const iotids::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const iotids::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternalError;
  }
}
