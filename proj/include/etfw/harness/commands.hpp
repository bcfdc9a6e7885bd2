#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "etfw/geometry/oracles.hpp"
#include "etfw/harness/config.hpp"
#include "etfw/harness/report.hpp"
#include "etfw/harness/train.hpp"

namespace etfw::harness {

enum ExitCode : int { kOk = 0, kConfigOrDataError = 1, kVerificationFailed = 2 };

/// Files written by a training run, under cfg.output_dir.
struct TrainArtifacts {
  std::string checkpoint;     // checkpoint.bin
  std::string epoch_log;      // epochs.csv
  std::string report;         // train_report.json
  std::string timings;        // train_timings.json
  std::uint64_t checksum = 0;
  TrainResult result;
};

TrainArtifacts run_train(const RunConfig& cfg, std::ostream& log);

/// Clean accuracy on the first eval.limit test samples and every configured
/// attack on the same samples.
EvalReport evaluate(const RunConfig& cfg, const model::ModelParams& params,
                    const data::LabeledDataset& test, std::uint64_t checksum);

/// Writes report.json, report.csv and timings.json under cfg.output_dir.
/// Throws ConfigError when the checkpoint architecture differs from the one
/// the config implies.
EvalReport run_attack(const RunConfig& cfg, const std::string& checkpoint_path, std::ostream& log);

/// "f0,...,f{P-1},label" rows for every sample of the dataset.
/// `dataset` is "<name>[:train|:test]" (test by default); the name overrides
/// dataset.name of the config when one is given. Returns the row count.
std::size_t export_features(const std::string& checkpoint_path, const std::string& dataset,
                            const std::string& out_path, const std::optional<RunConfig>& cfg);

// Entry points: report errors on `err` and return an ExitCode.
int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err);
int cmd_attack(const std::string& config_path, const std::string& checkpoint_path, std::ostream& out,
               std::ostream& err);
int cmd_verify(bool quick, std::ostream& out);
int verification_exit_code(const std::vector<geometry::OracleCheck>& checks);
int cmd_export_features(const std::string& checkpoint_path, const std::string& dataset,
                        const std::string& out_path, const std::optional<std::string>& config_path,
                        std::ostream& out, std::ostream& err);
/// Markdown table of documented_keys().
int cmd_keys(std::ostream& out);

}  // namespace etfw::harness
