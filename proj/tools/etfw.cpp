#include <CLI11.hpp>

#include <iostream>

#include "etfw/harness/commands.hpp"

int main(int argc, char** argv) {
  using namespace etfw::harness;
  CLI::App app{"Equiangular classifier-weight penalty: train, attack, verify, export-features"};
  app.require_subcommand(1);

  std::string config, checkpoint, dataset, out_path;
  std::optional<std::string> export_config;
  bool quick = false;

  auto* train = app.add_subcommand("train", "train a model and write checkpoint, epoch log and report");
  train->add_option("--config", config, "flat key = value config file")->required();

  auto* attack = app.add_subcommand("attack", "evaluate a checkpoint under the configured attacks");
  attack->add_option("--config", config)->required();
  attack->add_option("--checkpoint", checkpoint)->required();

  auto* verify = app.add_subcommand("verify", "run the math oracles and print a pass/fail table");
  verify->add_flag("--quick", quick, "fewer trials");

  auto* exp = app.add_subcommand("export-features", "write penultimate features as CSV");
  exp->add_option("--checkpoint", checkpoint)->required();
  exp->add_option("--dataset", dataset, "<name>[:train|:test]")->required();
  exp->add_option("--out", out_path)->required();
  exp->add_option("--config", export_config, "dataset paths and blob settings");

  auto* keys = app.add_subcommand("keys", "list documented config keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigOrDataError;
  }

  if (*train) return cmd_train(config, std::cout, std::cerr);
  if (*attack) return cmd_attack(config, checkpoint, std::cout, std::cerr);
  if (*verify) return cmd_verify(quick, std::cout);
  if (*exp) return cmd_export_features(checkpoint, dataset, out_path, export_config, std::cout, std::cerr);
  if (*keys) return cmd_keys(std::cout);
  return kConfigOrDataError;
}
