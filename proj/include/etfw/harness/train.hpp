#pragma once

#include <functional>
#include <string>
#include <vector>

#include "etfw/data/data.hpp"
#include "etfw/harness/config.hpp"
#include "etfw/model/model.hpp"

namespace etfw::harness {

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double clean_train = 0;
  double clean_test = 0;
  double penalty = 0;  // ||W W^T - sigma||_F
  double min_angle_deg = 0;
  double lr = 0;
};

inline constexpr const char* kEpochCsvHeader = "epoch,clean_train,clean_test,penalty,min_angle_deg";
std::string epoch_csv_row(const EpochLog& e);

struct TrainResult {
  model::ModelParams params;
  std::vector<EpochLog> epochs;
};

/// lr * decay^floor((epoch - 1) / every) for the 1-based epoch.
double learning_rate(const model::TrainConfig& cfg, std::size_t every, std::size_t epoch);

/// Adam on total_loss over seeded per-epoch shuffles. With adv_training set,
/// each batch is replaced by its PGD perturbation before the step.
TrainResult train(const RunConfig& cfg, const data::LabeledDataset& train_set,
                  const data::LabeledDataset& test_set,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

struct DataSplits {
  data::LabeledDataset train, test;
};

/// Loads the configured dataset and applies the train/test limits.
/// Throws data::FormatError or ConfigError.
DataSplits load_data(const DatasetSpec& source);

}  // namespace etfw::harness
