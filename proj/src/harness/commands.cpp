#include "etfw/harness/commands.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "etfw/attacks/attacks.hpp"
#include "etfw/harness/verify.hpp"

namespace etfw::harness {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw model::CheckpointError("cannot open checkpoint " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    body();
    return kOk;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kConfigOrDataError;
  }
}

}  // namespace

TrainArtifacts run_train(const RunConfig& cfg, std::ostream& log) {
  const auto t0 = Clock::now();
  const DataSplits data = load_data(cfg.dataset);
  const double load_s = seconds_since(t0);
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  TrainArtifacts art;
  art.checkpoint = (dir / "checkpoint.bin").string();
  art.epoch_log = (dir / "epochs.csv").string();
  art.report = (dir / "train_report.json").string();
  art.timings = (dir / "train_timings.json").string();

  std::ofstream csv(art.epoch_log);
  if (!csv) throw std::runtime_error("cannot write " + art.epoch_log);
  csv << kEpochCsvHeader << '\n';
  fmt::print(log, "train: {} ({} train / {} test), {} epochs, decay every {}\n", data.train.name,
             data.train.size(), data.test.size(), cfg.train.epochs, cfg.effective_decay_every());
  const auto t1 = Clock::now();
  art.result = train(cfg, data.train, data.test, [&](const EpochLog& e) {
    csv << epoch_csv_row(e) << '\n' << std::flush;
    fmt::print(log, "epoch {:3d}  lr {:.3g}  train {:.4f}  test {:.4f}  penalty {:.4g}  min angle {:.2f}\n",
               e.epoch, e.lr, e.clean_train, e.clean_test, e.penalty, e.min_angle_deg);
    log.flush();
  });
  const double train_s = seconds_since(t1);

  const std::string bytes = model::serialize_checkpoint(art.result.params);
  art.checksum = model::checkpoint_checksum(bytes);
  write_file(art.checkpoint, bytes);

  const model::ModelParams& p = art.result.params;
  const auto target = geometry::gram_target(p.arch.classes, cfg.train.s);
  const AngleSummary angles = summarize(geometry::angle_stats(p.classifier_W()));
  ordered_json j;
  j["seed"] = cfg.train.seed;
  j["arch_id"] = p.arch_id();
  j["checkpoint_checksum"] = hex64(art.checksum);
  j["parameters"] = p.parameter_count();
  if (!art.result.epochs.empty()) {
    const EpochLog& last = art.result.epochs.back();
    j["final"] = {{"epoch", last.epoch}, {"clean_train", last.clean_train}, {"clean_test", last.clean_test}};
  }
  j["angle_stats"] = {{"min_pair_angle_deg", angles.min_pair_angle_deg},
                      {"max_pair_cos", angles.max_pair_cos},
                      {"closest_pair", {angles.closest_i, angles.closest_j}},
                      {"row_norms", angles.row_norms}};
  j["penalty"] = {
      {"frobenius", geometry::penalty_value(p.classifier_W(), target, geometry::PenaltyNorm::frobenius)},
      {"target_frobenius", std::sqrt(geometry::penalty_value(
                               numcore::Tensor(target.sigma.shape()), target, geometry::PenaltyNorm::squared_frobenius))}};
  ordered_json echo_json = ordered_json::object();
  for (const auto& [k, v] : echo(cfg)) echo_json[k] = v;
  j["config"] = echo_json;
  write_file(art.report, j.dump(2) + "\n");
  write_file(art.timings,
             ordered_json{{"load_data", load_s}, {"train", train_s}, {"total", seconds_since(t0)}}.dump(2) + "\n");
  fmt::print(log, "checkpoint {} (checksum {})\n", art.checkpoint, hex64(art.checksum));
  return art;
}

EvalReport evaluate(const RunConfig& cfg, const model::ModelParams& params,
                    const data::LabeledDataset& test, std::uint64_t checksum) {
  const data::LabeledDataset subset =
      cfg.eval.limit && cfg.eval.limit < test.size() ? test.head(cfg.eval.limit) : test;
  const attacks::NetworkClassifier net(params);
  EvalReport r;
  r.seed = cfg.train.seed;
  r.arch_id = params.arch_id();
  r.checkpoint_checksum = hex64(checksum);
  r.samples = subset.size();
  auto t = Clock::now();
  r.clean_accuracy = attacks::clean_accuracy(net, subset);
  r.timings_seconds["clean"] = seconds_since(t);
  const attacks::EvalOptions opts{cfg.eval.workers, cfg.eval.chunk};
  for (const auto& a : cfg.attacks) {
    t = Clock::now();
    const attacks::RobustResult rr = attacks::robust_accuracy(net, subset, a, opts);
    r.timings_seconds["attack." + a.name] = seconds_since(t);
    r.attacks.push_back({a.name, attacks::to_string(a.kind), attacks::to_string(a.norm), a.epsilon,
                         rr.samples, rr.clean_correct, rr.robust_correct, rr.robust_accuracy,
                         rr.mean_perturbation});
  }
  const auto target = geometry::gram_target(params.arch.classes, cfg.train.s);
  r.angles = summarize(geometry::angle_stats(params.classifier_W()));
  r.penalty_frobenius = geometry::penalty_value(params.classifier_W(), target, geometry::PenaltyNorm::frobenius);
  r.penalty_squared =
      geometry::penalty_value(params.classifier_W(), target, geometry::PenaltyNorm::squared_frobenius);
  r.config = echo(cfg);
  return r;
}

EvalReport run_attack(const RunConfig& cfg, const std::string& checkpoint_path, std::ostream& log) {
  const auto t0 = Clock::now();
  const std::string bytes = read_file(checkpoint_path);
  const model::ModelParams params = model::deserialize_checkpoint(bytes);
  const DataSplits data = load_data(cfg.dataset);
  const model::ArchSpec expected = arch_for(cfg, data.train);
  if (expected.id() != params.arch_id()) {
    throw ConfigError(fmt::format("checkpoint architecture '{}' does not match config '{}'",
                                  params.arch_id(), expected.id()));
  }
  EvalReport r = evaluate(cfg, params, data.test, model::checkpoint_checksum(bytes));
  r.timings_seconds["total"] = seconds_since(t0);

  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  write_file(dir / "report.json", to_json(r).dump(2) + "\n");
  write_file(dir / "report.csv", report_csv(r));
  write_file(dir / "timings.json", timings_json(r).dump(2) + "\n");
  fmt::print(log, "clean {:.4f} on {} samples\n", r.clean_accuracy, r.samples);
  for (const auto& a : r.attacks) fmt::print(log, "{:<12} robust {:.4f}\n", a.name, a.robust_accuracy);
  return r;
}

std::size_t export_features(const std::string& checkpoint_path, const std::string& dataset,
                            const std::string& out_path, const std::optional<RunConfig>& cfg) {
  const model::ModelParams params = model::deserialize_checkpoint(read_file(checkpoint_path));
  std::string name = dataset, split = "test";
  if (const auto colon = dataset.find(':'); colon != std::string::npos) {
    name = dataset.substr(0, colon);
    split = dataset.substr(colon + 1);
  }
  if (split != "train" && split != "test") throw ConfigError("dataset split must be train or test");
  DatasetSpec source = cfg ? cfg->dataset : DatasetSpec{};
  source.name = name;
  if (!cfg && name == "blobs") {
    source.blobs_classes = params.arch.classes;
    source.blobs_dim = params.arch.input_size();
  }
  if (name != "mnist" && name != "cifar10" && name != "cifar100" && name != "idx" && name != "blobs") {
    throw ConfigError(fmt::format("unknown dataset '{}'", name));
  }
  const DataSplits data = load_data(source);
  const data::LabeledDataset& ds = split == "train" ? data.train : data.test;
  if (ds.sample_size() != params.arch.input_size()) {
    throw ConfigError(fmt::format("dataset samples have {} values, checkpoint expects {}", ds.sample_size(),
                                  params.arch.input_size()));
  }

  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot write " + out_path);
  const std::size_t p = params.arch.features;
  for (std::size_t c = 0; c < p; ++c) f << 'f' << c << ',';
  f << "label\n";
  constexpr std::size_t kChunk = 500;
  for (std::size_t b = 0; b < ds.size(); b += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(ds.size(), b + kChunk); ++i) idx.push_back(i);
    const data::LabeledDataset part = ds.select(idx);
    const numcore::Tensor feats = model::forward(params, part.inputs).features;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < p; ++c) f << fmt::format("{},", feats[i * p + c]);
      f << part.labels[i] << '\n';
    }
  }
  if (!f) throw std::runtime_error("write failed: " + out_path);
  return ds.size();
}

int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] { run_train(load_config(config_path), out); });
}

int cmd_attack(const std::string& config_path, const std::string& checkpoint_path, std::ostream& out,
               std::ostream& err) {
  return guarded(err, [&] { run_attack(load_config(config_path), checkpoint_path, out); });
}

int cmd_verify(bool quick, std::ostream& out) {
  const auto checks = run_verification(quick);
  print_checks(out, checks);
  std::size_t failed = 0;
  for (const auto& c : checks) failed += !c.passed;
  fmt::print(out, "{} of {} checks passed\n", checks.size() - failed, checks.size());
  return verification_exit_code(checks);
}

int verification_exit_code(const std::vector<geometry::OracleCheck>& checks) {
  for (const auto& c : checks) {
    if (!c.passed) return kVerificationFailed;
  }
  return kOk;
}

int cmd_export_features(const std::string& checkpoint_path, const std::string& dataset,
                        const std::string& out_path, const std::optional<std::string>& config_path,
                        std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::optional<RunConfig> cfg;
    if (config_path) cfg = load_config(*config_path);
    const std::size_t rows = export_features(checkpoint_path, dataset, out_path, cfg);
    fmt::print(out, "wrote {} rows to {}\n", rows, out_path);
  });
}

int cmd_keys(std::ostream& out) {
  out << "| key | default | description |\n|---|---|---|\n";
  for (const auto& k : documented_keys()) {
    fmt::print(out, "| `{}` | {} | {} |\n", k.key, k.default_value.empty() ? "" : "`" + k.default_value + "`",
               k.description);
  }
  return kOk;
}

}  // namespace etfw::harness
