#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "etfw/geometry/geometry.hpp"

namespace etfw::harness {

struct AttackRow {
  std::string name;
  std::string kind;
  std::string norm;
  double epsilon = 0;
  std::size_t samples = 0;
  std::size_t clean_correct = 0;
  std::size_t robust_correct = 0;
  double robust_accuracy = 0;
  double mean_perturbation = 0;
};

struct AngleSummary {
  double min_pair_angle_deg = 0;
  double max_pair_cos = 0;
  std::size_t closest_i = 0, closest_j = 0;
  std::vector<double> row_norms;
};

AngleSummary summarize(const geometry::AngleStats& stats);

/// Result of `attack`. Wall-clock timings are kept apart from the
/// deterministic part and written to their own file.
struct EvalReport {
  std::uint64_t seed = 0;
  std::string arch_id;
  std::string checkpoint_checksum;  // 16 hex digits
  std::size_t samples = 0;
  double clean_accuracy = 0;
  std::vector<AttackRow> attacks;
  AngleSummary angles;
  double penalty_frobenius = 0;
  double penalty_squared = 0;
  std::vector<std::pair<std::string, std::string>> config;
  std::map<std::string, double> timings_seconds;

  std::map<std::string, double> robust_accuracy() const;
};

nlohmann::ordered_json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json timings_json(const EvalReport& r);

/// "attack,kind,norm,epsilon,samples,clean_accuracy,robust_accuracy,mean_perturbation".
std::string report_csv(const EvalReport& r);

std::string hex64(std::uint64_t v);

}  // namespace etfw::harness
