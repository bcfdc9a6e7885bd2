#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "etfw/attacks/attacks.hpp"
#include "etfw/data/data.hpp"
#include "etfw/model/model.hpp"

namespace etfw::harness {

/// Bad config text or values; maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSpec {
  std::string name = "mnist";  // mnist | cifar10 | cifar100 | idx | blobs
  std::string root;            // data root; empty means $ETFW_DATA_ROOT
  std::size_t train_limit = 0;  // 0 = all
  std::size_t test_limit = 0;
  bool augment_crop = false;
  bool augment_flip = false;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // blobs
  std::size_t blobs_classes = 3;
  std::size_t blobs_dim = 2;
  std::size_t blobs_per_class = 100;
  std::size_t blobs_test_per_class = 50;
  double blobs_spread = 0.05;
  std::uint64_t blobs_seed = 0;
};

struct ModelSpec {
  std::string family = "cnn4";
  std::vector<std::size_t> hidden;  // mlp widths / cnn4 channels; empty = family default
  std::size_t features = 64;
  model::Activation activation = model::Activation::tanh;
  bool bias = false;
};

struct EvalSettings {
  std::size_t limit = 1000;  // test samples for clean and attacked accuracy; 0 = all
  std::size_t workers = 1;
  std::size_t chunk = 50;
};

struct LogSettings {
  std::size_t train_eval_limit = 2000;
  std::size_t test_eval_limit = 0;
};

struct RunConfig {
  DatasetSpec dataset;
  ModelSpec model;
  model::TrainConfig train = [] {
    model::TrainConfig t;
    t.decay_every = 0;  // auto
    return t;
  }();
  std::vector<attacks::AttackConfig> attacks;
  EvalSettings eval;
  LogSettings log;
  std::string output_dir = "out";

  /// Decay period used by the trainer: train.decay_every when nonzero, else
  /// max(1, round(epochs * 60 / 400)) below 400 epochs and 60 otherwise.
  std::size_t effective_decay_every() const;
};

struct KeyDoc {
  std::string key;
  std::string default_value;
  std::string description;
};

/// Every accepted key. attack.<N>.<field> keys are listed with N = 0.
const std::vector<KeyDoc>& documented_keys();

/// "key = value" lines, '#' comments. Unknown or repeated keys are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Every key with its resolved value, in documentation order; parse_config
/// of the joined echo reproduces the config.
std::vector<std::pair<std::string, std::string>> echo(const RunConfig& cfg);
std::string echo_text(const RunConfig& cfg);

std::string resolved_data_root(const DatasetSpec& source);

/// Architecture implied by the model section and the dataset's sample shape.
model::ArchSpec arch_for(const RunConfig& cfg, const data::LabeledDataset& train);

}  // namespace etfw::harness
