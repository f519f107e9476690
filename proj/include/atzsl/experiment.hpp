#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "atzsl/dataset.hpp"
#include "atzsl/relnet.hpp"
#include "atzsl/trainer.hpp"
#include "atzsl/zsleval.hpp"

namespace atzsl {

// Training entry points exposed by `atzsl train --mode`.
enum class RunMode { kImages, kAttributes, kBaseline, kBaseline2, kBaseline3 };
std::string to_string(RunMode m);
RunMode parse_run_mode(const std::string& s);

struct DatasetSection {
  std::string source = "synthetic";  // synthetic | files
  std::string dir = "dataset";       // relative paths resolve against the output directory
  SynthSpec synth;
  bool normalize_prototypes = false;
};

struct EvalSection {
  std::vector<EvalScenario> scenarios;
  std::optional<Bounds> clamp;  // applied to every visual attack
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  DatasetSection dataset;
  NetConfig net;  // input_dim / prototype_dim are taken from the dataset
  TrainConfig train;
  EvalSection eval;

  std::string dataset_dir() const;
};

// Dotted key path -> raw value, applied after the file is read.
using Overrides = std::vector<std::pair<std::string, std::string>>;

// Parses INI text. Unknown sections or keys, malformed values and broken
// invariants raise ConfigError naming the key path (e.g. "train.alpha").
ExperimentConfig parse_experiment(const std::string& ini_text, const Overrides& overrides = {});
// Reads the file, then applies the ATZSL_OUTPUT_DIR environment variable and
// the overrides, in that order.
ExperimentConfig load_experiment(const std::string& path, const Overrides& overrides = {});
std::string to_ini(const ExperimentConfig& config);

// Inverse of EvalScenario::label(). Visual scenarios attack the input under
// linf, semantic ones the prototypes under l2.
EvalScenario parse_scenario(const std::string& label, std::size_t default_steps = 9);

// Median over classes of the Euclidean distance to the nearest other prototype.
double median_prototype_separation(const PrototypeSet& protos);

struct GenerateResult {
  std::string dir;
  std::string summary;
};
GenerateResult cmd_generate(const ExperimentConfig& config);

struct TrainOutput {
  std::string checkpoint;
  std::string log;
  TrainLog train_log;
};
// Loads the dataset files, applies the mode mapping and writes
// <output>/<mode>/{checkpoint.atzsl,train_log.jsonl,config.ini}.
TrainOutput cmd_train(const ExperimentConfig& config, RunMode mode);

struct EvalOutput {
  std::string dir;
  std::vector<MetricsFragment> fragments;
  std::string text;
};
// Runs every configured scenario; writes metrics.csv, trade_off.csv,
// report.txt and one SVG bar chart per (setting, space) family into out_dir
// (default: <checkpoint dir>/eval).
EvalOutput cmd_eval(const ExperimentConfig& config, const std::string& checkpoint,
                    const std::optional<std::string>& out_dir = std::nullopt);

struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::string> scenarios;          // file order
  std::vector<std::vector<std::string>> rows;  // cells in header order
};
// Parses <dir>/metrics.csv.
MetricsTable read_metrics_dir(const std::string& dir);

struct ReportOutput {
  std::string csv;
  std::string text;
};
// One column per run, in argument order, plus one harmonic-mean trade-off row
// per attacked scenario. Runs must cover the same scenarios.
ReportOutput cmd_report(const std::vector<std::string>& dirs, const std::vector<std::string>& labels = {},
                        const std::optional<std::string>& out_dir = std::nullopt);

}  // namespace atzsl
