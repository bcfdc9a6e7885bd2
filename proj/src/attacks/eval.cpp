#include <algorithm>
#include <atomic>
#include <thread>

#include "etfw/attacks/attacks.hpp"

namespace etfw::attacks {

namespace {

struct ChunkCounts {
  std::size_t clean = 0, robust = 0, successes = 0;
  double perturbation = 0;
};

ChunkCounts run_chunk(const Classifier& model, const data::LabeledDataset& ds,
                      const AttackConfig& cfg, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  const data::LabeledDataset part = ds.select(idx);
  const auto clean = model.predict(part.inputs);
  const AttackResult r = run_attack(model, part.inputs, part.labels, cfg, begin);
  ChunkCounts c;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const bool ok = clean[i] == part.labels[i];
    c.clean += ok;
    // Robust: clean-correct and no in-budget adversarial. Minimal-perturbation
    // attacks may return a misclassified point outside the budget; that is not a break.
    c.robust += ok && !r.success[i];
    if (r.success[i]) {
      ++c.successes;
      c.perturbation += r.perturbation_norm[i];
    }
  }
  return c;
}

}  // namespace

RobustResult robust_accuracy(const Classifier& model, const data::LabeledDataset& ds,
                             const AttackConfig& cfg, const EvalOptions& options) {
  cfg.validate();
  const std::size_t n = ds.size(), chunk = std::max<std::size_t>(1, options.chunk);
  const std::size_t chunks = (n + chunk - 1) / chunk;
  std::vector<ChunkCounts> counts(chunks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < chunks; c = next++) {
      counts[c] = run_chunk(model, ds, cfg, c * chunk, std::min(n, (c + 1) * chunk));
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(1, chunks));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  RobustResult r;
  r.samples = n;
  std::size_t successes = 0;
  for (const auto& c : counts) {
    r.clean_correct += c.clean;
    r.robust_correct += c.robust;
    successes += c.successes;
    r.mean_perturbation += c.perturbation;
  }
  if (n) {
    r.clean_accuracy = double(r.clean_correct) / double(n);
    r.robust_accuracy = double(r.robust_correct) / double(n);
  }
  if (successes) r.mean_perturbation /= double(successes);
  return r;
}

double clean_accuracy(const Classifier& model, const data::LabeledDataset& ds, std::size_t chunk) {
  std::size_t correct = 0;
  for (std::size_t b = 0; b < ds.size(); b += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(ds.size(), b + chunk); ++i) idx.push_back(i);
    const data::LabeledDataset part = ds.select(idx);
    const auto pred = model.predict(part.inputs);
    for (std::size_t i = 0; i < idx.size(); ++i) correct += pred[i] == part.labels[i];
  }
  return ds.size() ? double(correct) / double(ds.size()) : 0.0;
}

}  // namespace etfw::attacks
