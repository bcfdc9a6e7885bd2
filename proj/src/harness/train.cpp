#include "etfw/harness/train.hpp"

#include <fmt/format.h>

#include <cmath>
#include <filesystem>

#include "etfw/attacks/attacks.hpp"
#include "etfw/geometry/geometry.hpp"
#include "etfw/numcore/rng.hpp"
#include "etfw/numcore/tape.hpp"

namespace etfw::harness {

std::string epoch_csv_row(const EpochLog& e) {
  return fmt::format("{},{},{},{},{}", e.epoch, e.clean_train, e.clean_test, e.penalty,
                     e.min_angle_deg);
}

double learning_rate(const model::TrainConfig& cfg, std::size_t every, std::size_t epoch) {
  const auto decays = static_cast<double>((epoch - 1) / std::max<std::size_t>(1, every));
  return cfg.lr * std::pow(cfg.lr_decay, decays);
}

namespace {

data::LabeledDataset limited(const data::LabeledDataset& ds, std::size_t limit) {
  return limit && limit < ds.size() ? ds.head(limit) : ds;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const data::LabeledDataset& train_set,
                  const data::LabeledDataset& test_set,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  const model::TrainConfig& tc = cfg.train;
  const model::ArchSpec arch = arch_for(cfg, train_set);
  TrainResult result{model::init_params(arch, tc.s, derive_seed(tc.seed, "init")), {}};
  model::ModelParams& params = result.params;
  model::Adam adam(params);

  const data::Augment augment{cfg.dataset.augment_crop, 4, cfg.dataset.augment_flip};
  const data::LabeledDataset train_probe = limited(train_set, cfg.log.train_eval_limit);
  const data::LabeledDataset test_probe = limited(test_set, cfg.log.test_eval_limit);
  const geometry::GramTarget target = geometry::gram_target(arch.classes, tc.s);
  const std::uint64_t shuffle_root = derive_seed(tc.seed, "shuffle");
  const std::uint64_t adv_root = derive_seed(tc.seed, "adv");
  const std::size_t every = cfg.effective_decay_every();

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const double lr = learning_rate(tc, every, epoch);
    data::BatchIterator batches(train_set, tc.batch_size, derive_seed(shuffle_root, epoch), augment);
    data::Batch batch;
    std::size_t step = 0;
    while (batches.next(batch)) {
      numcore::Tensor x = batch.x;
      if (tc.adv_training) {
        attacks::AttackConfig pgd;
        pgd.kind = attacks::AttackKind::pgd;
        pgd.epsilon = tc.adv_training->epsilon;
        pgd.steps = tc.adv_training->steps;
        pgd.step_size = tc.adv_training->step_size;
        pgd.random_start = tc.adv_training->random_start;
        pgd.seed = derive_seed(adv_root, epoch * 1000003 + step);
        x = attacks::pgd(attacks::NetworkClassifier(params), x, batch.y, pgd).x_adv;
      }
      numcore::Tape tape;
      const model::ModelParams watched = model::watch(tape, params);
      const auto grads = model::collect(tape.backward(model::total_loss(watched, x, batch.y, tc)), watched);
      adam.step(params, grads, lr);
      ++step;
    }

    const attacks::NetworkClassifier net(params);
    const geometry::AngleStats angles = geometry::angle_stats(params.classifier_W(), target);
    EpochLog log{epoch,
                 attacks::clean_accuracy(net, train_probe),
                 attacks::clean_accuracy(net, test_probe),
                 *angles.penalty_value,
                 angles.min_pair_angle * 180.0 / M_PI,
                 lr};
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

DataSplits load_data(const DatasetSpec& source) {
  DataSplits out;
  const std::string& name = source.name;
  if (name == "blobs") {
    out.train = data::synth_blobs(source.blobs_classes, source.blobs_dim, source.blobs_per_class,
                                  source.blobs_spread, source.blobs_seed);
    out.test = data::synth_blobs(source.blobs_classes, source.blobs_dim, source.blobs_test_per_class,
                                 source.blobs_spread, source.blobs_seed + 1);
  } else if (name == "idx") {
    if (source.train_images.empty() || source.train_labels.empty()) {
      throw ConfigError("dataset.name = idx needs dataset.idx.train_images and train_labels");
    }
    out.train = data::load_idx(source.train_images, source.train_labels);
    out.test = source.test_images.empty()
                   ? out.train
                   : data::load_idx(source.test_images, source.test_labels, out.train.classes);
  } else {
    const std::string root = resolved_data_root(source);
    if (root.empty()) throw ConfigError("no data root: set dataset.root or ETFW_DATA_ROOT");
    if (name == "mnist") {
      out.train = data::load_mnist(root, true);
      out.test = data::load_mnist(root, false);
    } else {
      const bool c100 = name == "cifar100";
      const std::filesystem::path dir = std::filesystem::path(root) / name;
      std::vector<std::string> train_files, test_files;
      if (c100) {
        train_files = {(dir / "train.bin").string()};
        test_files = {(dir / "test.bin").string()};
      } else {
        for (int i = 1; i <= 5; ++i) train_files.push_back((dir / fmt::format("data_batch_{}.bin", i)).string());
        test_files = {(dir / "test_batch.bin").string()};
      }
      out.train = data::load_cifar(train_files, c100);
      out.test = data::load_cifar(test_files, c100);
    }
  }
  out.train = limited(out.train, source.train_limit);
  out.test = limited(out.test, source.test_limit);
  return out;
}

}  // namespace etfw::harness
