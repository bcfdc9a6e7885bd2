#include "etfw/harness/report.hpp"

#include <fmt/format.h>

#include <cmath>

namespace etfw::harness {

using nlohmann::ordered_json;

AngleSummary summarize(const geometry::AngleStats& stats) {
  return {stats.min_pair_angle * 180.0 / M_PI, stats.max_pair_cos, stats.closest_i, stats.closest_j,
          stats.row_norms};
}

std::map<std::string, double> EvalReport::robust_accuracy() const {
  std::map<std::string, double> out;
  for (const auto& a : attacks) out[a.name] = a.robust_accuracy;
  return out;
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

ordered_json to_json(const EvalReport& r) {
  ordered_json j;
  j["seed"] = r.seed;
  j["arch_id"] = r.arch_id;
  j["checkpoint_checksum"] = r.checkpoint_checksum;
  j["samples"] = r.samples;
  j["clean_accuracy"] = r.clean_accuracy;
  ordered_json robust = ordered_json::object();
  for (const auto& a : r.attacks) robust[a.name] = a.robust_accuracy;
  j["robust_accuracy"] = robust;
  ordered_json rows = ordered_json::array();
  for (const auto& a : r.attacks) {
    rows.push_back({{"name", a.name},
                    {"kind", a.kind},
                    {"norm", a.norm},
                    {"epsilon", std::isinf(a.epsilon) ? ordered_json("inf") : ordered_json(a.epsilon)},
                    {"samples", a.samples},
                    {"clean_correct", a.clean_correct},
                    {"robust_correct", a.robust_correct},
                    {"robust_accuracy", a.robust_accuracy},
                    {"mean_perturbation", a.mean_perturbation}});
  }
  j["attacks"] = rows;
  j["angle_stats"] = {{"min_pair_angle_deg", r.angles.min_pair_angle_deg},
                      {"max_pair_cos", r.angles.max_pair_cos},
                      {"closest_pair", {r.angles.closest_i, r.angles.closest_j}},
                      {"row_norms", r.angles.row_norms}};
  j["penalty"] = {{"frobenius", r.penalty_frobenius}, {"squared_frobenius", r.penalty_squared}};
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : r.config) cfg[k] = v;
  j["config"] = cfg;
  return j;
}

EvalReport report_from_json(const ordered_json& j) {
  EvalReport r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.arch_id = j.at("arch_id").get<std::string>();
  r.checkpoint_checksum = j.at("checkpoint_checksum").get<std::string>();
  r.samples = j.at("samples").get<std::size_t>();
  r.clean_accuracy = j.at("clean_accuracy").get<double>();
  for (const auto& a : j.at("attacks")) {
    AttackRow row;
    row.name = a.at("name").get<std::string>();
    row.kind = a.at("kind").get<std::string>();
    row.norm = a.at("norm").get<std::string>();
    const auto& eps = a.at("epsilon");
    row.epsilon = eps.is_string() ? std::numeric_limits<double>::infinity() : eps.get<double>();
    row.samples = a.at("samples").get<std::size_t>();
    row.clean_correct = a.at("clean_correct").get<std::size_t>();
    row.robust_correct = a.at("robust_correct").get<std::size_t>();
    row.robust_accuracy = a.at("robust_accuracy").get<double>();
    row.mean_perturbation = a.at("mean_perturbation").get<double>();
    r.attacks.push_back(row);
  }
  const auto& ang = j.at("angle_stats");
  r.angles.min_pair_angle_deg = ang.at("min_pair_angle_deg").get<double>();
  r.angles.max_pair_cos = ang.at("max_pair_cos").get<double>();
  r.angles.closest_i = ang.at("closest_pair").at(0).get<std::size_t>();
  r.angles.closest_j = ang.at("closest_pair").at(1).get<std::size_t>();
  r.angles.row_norms = ang.at("row_norms").get<std::vector<double>>();
  r.penalty_frobenius = j.at("penalty").at("frobenius").get<double>();
  r.penalty_squared = j.at("penalty").at("squared_frobenius").get<double>();
  for (const auto& [k, v] : j.at("config").items()) r.config.emplace_back(k, v.get<std::string>());
  return r;
}

ordered_json timings_json(const EvalReport& r) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : r.timings_seconds) j[k] = v;
  return j;
}

std::string report_csv(const EvalReport& r) {
  std::string out = "attack,kind,norm,epsilon,samples,clean_accuracy,robust_accuracy,mean_perturbation\n";
  out += fmt::format("clean,none,none,0,{},{},{},0\n", r.samples, r.clean_accuracy, r.clean_accuracy);
  for (const auto& a : r.attacks) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", a.name, a.kind, a.norm, a.epsilon, a.samples,
                       r.clean_accuracy, a.robust_accuracy, a.mean_perturbation);
  }
  return out;
}

}  // namespace etfw::harness
