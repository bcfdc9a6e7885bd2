#include "etfw/harness/config.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "etfw/numcore/rng.hpp"

namespace etfw::harness {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  if (v == "inf") return std::numeric_limits<double>::infinity();
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not a number", key, v));
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not a non-negative integer", key, v));
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(fmt::format("{}: '{}' is not true/false", key, v));
}

std::vector<std::size_t> to_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_u64(key, item));
  }
  return out;
}

std::string fmt_double(double v) { return std::isinf(v) ? (v > 0 ? "inf" : "-inf") : fmt::format("{}", v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::string norm_name(geometry::PenaltyNorm n) {
  return n == geometry::PenaltyNorm::frobenius ? "frobenius" : "squared_frobenius";
}

template <typename Owner>
struct Binding {
  KeyDoc doc;
  std::function<void(Owner&, const std::string&, const std::string&)> set;
  std::function<std::string(const Owner&)> get;
};

#define ETFW_SIZE(field) \
  [](auto& c, const std::string& k, const std::string& v) { c.field = to_u64(k, v); }, \
      [](const auto& c) { return fmt::format("{}", c.field); }
#define ETFW_DOUBLE(field) \
  [](auto& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
      [](const auto& c) { return fmt_double(c.field); }
#define ETFW_BOOL(field) \
  [](auto& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
      [](const auto& c) { return fmt_bool(c.field); }
#define ETFW_STRING(field) \
  [](auto& c, const std::string&, const std::string& v) { c.field = v; }, \
      [](const auto& c) { return c.field; }

const std::vector<Binding<RunConfig>>& run_bindings() {
  static const std::vector<Binding<RunConfig>> b = {
      {{"dataset.name", "mnist", "mnist | cifar10 | cifar100 | idx | blobs"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         static const std::set<std::string> ok{"mnist", "cifar10", "cifar100", "idx", "blobs"};
         if (!ok.count(v)) throw ConfigError(fmt::format("{}: unknown dataset '{}'", k, v));
         c.dataset.name = v;
       },
       [](const RunConfig& c) { return c.dataset.name; }},
      {{"dataset.root", "", "data root holding mnist/ or cifar10/; empty uses $ETFW_DATA_ROOT"},
       ETFW_STRING(dataset.root)},
      {{"dataset.train_limit", "0", "first N training samples (0 = all)"}, ETFW_SIZE(dataset.train_limit)},
      {{"dataset.test_limit", "0", "first N test samples (0 = all)"}, ETFW_SIZE(dataset.test_limit)},
      {{"dataset.augment_crop", "false", "4-pixel pad + random crop per epoch"}, ETFW_BOOL(dataset.augment_crop)},
      {{"dataset.augment_flip", "false", "random horizontal flip per epoch"}, ETFW_BOOL(dataset.augment_flip)},
      {{"dataset.idx.train_images", "", "IDX image file (dataset.name = idx)"}, ETFW_STRING(dataset.train_images)},
      {{"dataset.idx.train_labels", "", "IDX label file"}, ETFW_STRING(dataset.train_labels)},
      {{"dataset.idx.test_images", "", "IDX image file for evaluation"}, ETFW_STRING(dataset.test_images)},
      {{"dataset.idx.test_labels", "", "IDX label file for evaluation"}, ETFW_STRING(dataset.test_labels)},
      {{"dataset.blobs.classes", "3", "K for synthetic blobs"}, ETFW_SIZE(dataset.blobs_classes)},
      {{"dataset.blobs.dim", "2", "input dimension of the blobs"}, ETFW_SIZE(dataset.blobs_dim)},
      {{"dataset.blobs.per_class", "100", "training points per class"}, ETFW_SIZE(dataset.blobs_per_class)},
      {{"dataset.blobs.test_per_class", "50", "test points per class"}, ETFW_SIZE(dataset.blobs_test_per_class)},
      {{"dataset.blobs.spread", "0.05", "Gaussian standard deviation"}, ETFW_DOUBLE(dataset.blobs_spread)},
      {{"dataset.blobs.seed", "0", "blob sampling seed (test split uses seed + 1)"}, ETFW_SIZE(dataset.blobs_seed)},
      {{"model.family", "cnn4", "cnn4 | mlp"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v != "cnn4" && v != "mlp") throw ConfigError(fmt::format("{}: unknown family '{}'", k, v));
         c.model.family = v;
       },
       [](const RunConfig& c) { return c.model.family; }},
      {{"model.hidden", "", "mlp hidden widths or cnn4 channels, comma separated (empty = default)"},
       [](RunConfig& c, const std::string& k, const std::string& v) { c.model.hidden = to_list(k, v); },
       [](const RunConfig& c) { return fmt::format("{}", fmt::join(c.model.hidden, ",")); }},
      {{"model.p", "64", "feature width P"}, ETFW_SIZE(model.features)},
      {{"model.activation", "tanh", "final encoder activation: tanh | relu | prelu | leaky_relu"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         try {
           c.model.activation = model::parse_activation(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(fmt::format("{}: {}", k, e.what()));
         }
       },
       [](const RunConfig& c) { return model::to_string(c.model.activation); }},
      {{"model.bias", "false", "learn a classifier bias"}, ETFW_BOOL(model.bias)},
      {{"train.alpha", "100", "penalty coefficient (0 = plain cross-entropy)"}, ETFW_DOUBLE(train.alpha)},
      {{"train.s", "0.1", "target row norm of the classifier"}, ETFW_DOUBLE(train.s)},
      {{"train.penalty_norm", "squared_frobenius", "squared_frobenius | frobenius"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "frobenius") c.train.penalty_norm = geometry::PenaltyNorm::frobenius;
         else if (v == "squared_frobenius") c.train.penalty_norm = geometry::PenaltyNorm::squared_frobenius;
         else throw ConfigError(fmt::format("{}: unknown norm '{}'", k, v));
       },
       [](const RunConfig& c) { return norm_name(c.train.penalty_norm); }},
      {{"train.lr", "0.01", "initial Adam learning rate"}, ETFW_DOUBLE(train.lr)},
      {{"train.lr_decay", "0.9", "multiplicative learning-rate decay"}, ETFW_DOUBLE(train.lr_decay)},
      {{"train.decay_every", "0", "epochs between decays; 0 = max(1, round(epochs*60/400)) below 400 epochs"},
       ETFW_SIZE(train.decay_every)},
      {{"train.epochs", "20", "training epochs"}, ETFW_SIZE(train.epochs)},
      {{"train.batch_size", "128", "minibatch size"}, ETFW_SIZE(train.batch_size)},
      {{"train.seed", "0", "root seed: init, shuffle and default attack streams"}, ETFW_SIZE(train.seed)},
      {{"train.adv", "false", "replace each batch by its PGD perturbation (adversarial-training baseline)"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (to_bool(k, v)) {
           if (!c.train.adv_training) c.train.adv_training.emplace();
         } else {
           c.train.adv_training.reset();
         }
       },
       [](const RunConfig& c) { return fmt_bool(c.train.adv_training.has_value()); }},
      {{"train.adv.epsilon", "0.3", "PGD budget for adversarial training"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (c.train.adv_training) c.train.adv_training->epsilon = to_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.train.adv_training.value_or(model::AdvTrainingConfig{}).epsilon); }},
      {{"train.adv.steps", "40", "PGD steps for adversarial training"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (c.train.adv_training) c.train.adv_training->steps = to_u64(k, v);
       },
       [](const RunConfig& c) { return fmt::format("{}", c.train.adv_training.value_or(model::AdvTrainingConfig{}).steps); }},
      {{"train.adv.step_size", "0.01", "PGD step size for adversarial training"},
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (c.train.adv_training) c.train.adv_training->step_size = to_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.train.adv_training.value_or(model::AdvTrainingConfig{}).step_size); }},
      {{"eval.limit", "1000", "first N test samples for clean and robust accuracy (0 = all)"}, ETFW_SIZE(eval.limit)},
      {{"eval.workers", "1", "threads for robust-accuracy evaluation"}, ETFW_SIZE(eval.workers)},
      {{"eval.chunk", "50", "samples per evaluation work unit (fixed for determinism)"}, ETFW_SIZE(eval.chunk)},
      {{"log.train_eval_limit", "2000", "training samples scored for the per-epoch log (0 = all)"},
       ETFW_SIZE(log.train_eval_limit)},
      {{"log.test_eval_limit", "0", "test samples scored for the per-epoch log (0 = all)"}, ETFW_SIZE(log.test_eval_limit)},
      {{"output.dir", "out", "directory for checkpoint, logs and reports"}, ETFW_STRING(output_dir)},
  };
  return b;
}

const std::vector<Binding<attacks::AttackConfig>>& attack_bindings() {
  using attacks::AttackConfig;
  static const std::vector<Binding<AttackConfig>> b = {
      {{"name", "", "report label (e.g. PGD40)"}, ETFW_STRING(name)},
      {{"kind", "pgd", "fgsm | pgd | deepfool | cw | mta"},
       [](AttackConfig& c, const std::string& k, const std::string& v) {
         try {
           c.kind = attacks::parse_kind(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(fmt::format("{}: {}", k, e.what()));
         }
       },
       [](const AttackConfig& c) { return attacks::to_string(c.kind); }},
      {{"norm", "linf", "linf | l2"},
       [](AttackConfig& c, const std::string& k, const std::string& v) {
         try {
           c.norm = attacks::parse_norm(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(fmt::format("{}: {}", k, e.what()));
         }
       },
       [](const AttackConfig& c) { return attacks::to_string(c.norm); }},
      {{"eps", "0.3", "budget in pixel units (0 = null attack)"}, ETFW_DOUBLE(epsilon)},
      {{"steps", "40", "iterations"}, ETFW_SIZE(steps)},
      {{"step_size", "0.01", "per-iteration step (Adam rate for cw)"}, ETFW_DOUBLE(step_size)},
      {{"overshoot", "0.02", "DeepFool overshoot"}, ETFW_DOUBLE(overshoot)},
      {{"random_start", "true", "uniform start in the epsilon ball (pgd, mta)"}, ETFW_BOOL(random_start)},
      {{"cw_search_steps", "9", "C&W binary-search rounds"}, ETFW_SIZE(cw_search_steps)},
      {{"cw_confidence", "0", "C&W margin kappa"}, ETFW_DOUBLE(cw_confidence)},
      {{"cw_initial_c", "0.01", "C&W initial constant"}, ETFW_DOUBLE(cw_initial_c)},
      {{"seed", "derived", "random-start seed; default derives from train.seed and the attack index"},
       ETFW_SIZE(seed)},
  };
  return b;
}

#undef ETFW_SIZE
#undef ETFW_DOUBLE
#undef ETFW_BOOL
#undef ETFW_STRING

attacks::AttackConfig preset(const std::string& key, const std::string& name) {
  if (name == "pgd20") return attacks::pgd20();
  if (name == "pgd40") return attacks::pgd40();
  if (name == "mta100") return attacks::mta100();
  if (name == "mta200") return attacks::mta200();
  if (name == "cw_mnist") return attacks::cw_l2_preset(3);
  if (name == "cw_cifar") return attacks::cw_l2_preset(1);
  if (name == "deepfool") return attacks::deepfool_preset(attacks::Norm::linf, 0.3);
  if (name == "fgsm") {
    attacks::AttackConfig c;
    c.name = "FGSM";
    c.kind = attacks::AttackKind::fgsm;
    c.steps = 1;
    return c;
  }
  throw ConfigError(fmt::format("{}: unknown preset '{}'", key, name));
}

}  // namespace

std::size_t RunConfig::effective_decay_every() const {
  if (train.decay_every) return train.decay_every;
  if (train.epochs >= 400) return 60;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(train.epochs * 60.0 / 400.0)));
}

const std::vector<KeyDoc>& documented_keys() {
  static const std::vector<KeyDoc> docs = [] {
    std::vector<KeyDoc> out;
    for (const auto& b : run_bindings()) out.push_back(b.doc);
    out.push_back({"attack.N.preset", "",
                   "pgd20 | pgd40 | mta100 | mta200 | cw_mnist | cw_cifar | deepfool | fgsm; "
                   "applied before the other attack.N keys"});
    for (const auto& b : attack_bindings()) {
      out.push_back({"attack.N." + b.doc.key, b.doc.default_value, b.doc.description});
    }
    return out;
  }();
  return docs;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, std::pair<std::string, int>> seen;  // key -> (value, line)
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key = value", lineno));
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(fmt::format("line {}: empty key", lineno));
    if (seen.count(key)) {
      throw ConfigError(fmt::format("line {}: '{}' repeats line {}", lineno, key, seen[key].second));
    }
    seen[key] = {value, lineno};
  }

  // train.adv must be known before train.adv.*; bindings run in documentation order.
  for (const auto& b : run_bindings()) {
    if (auto it = seen.find(b.doc.key); it != seen.end()) {
      b.set(cfg, b.doc.key, it->second.first);
      seen.erase(it);
    }
  }

  std::map<std::size_t, std::map<std::string, std::string>> attack_keys;
  for (const auto& [key, entry] : seen) {
    const bool is_attack = key.rfind("attack.", 0) == 0;
    const auto dot = key.find('.', 7);
    if (!is_attack || dot == std::string::npos) {
      throw ConfigError(fmt::format("line {}: unknown key '{}'", entry.second, key));
    }
    const std::string index = key.substr(7, dot - 7);
    attack_keys[to_u64(key, index)][key.substr(dot + 1)] = entry.first;
  }
  std::size_t expected = 0;
  for (auto& [index, fields] : attack_keys) {
    if (index != expected++) throw ConfigError(fmt::format("attack indices must be 0,1,2,...; got {}", index));
    const std::string prefix = fmt::format("attack.{}.", index);
    attacks::AttackConfig a;
    a.name = fmt::format("attack{}", index);
    if (auto it = fields.find("preset"); it != fields.end()) {
      a = preset(prefix + "preset", it->second);
      fields.erase(it);
    }
    a.seed = derive_seed(derive_seed(cfg.train.seed, "attack"), index);
    for (const auto& b : attack_bindings()) {
      if (auto it = fields.find(b.doc.key); it != fields.end()) {
        b.set(a, prefix + b.doc.key, it->second);
        fields.erase(it);
      }
    }
    if (!fields.empty()) {
      throw ConfigError(fmt::format("unknown key '{}{}'", prefix, fields.begin()->first));
    }
    try {
      a.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(fmt::format("{}: {}", prefix.substr(0, prefix.size() - 1), e.what()));
    }
    cfg.attacks.push_back(a);
  }

  if (cfg.train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (cfg.train.alpha < 0) throw ConfigError("train.alpha must be >= 0");
  if (!(cfg.train.s > 0)) throw ConfigError("train.s must be > 0");
  if (!(cfg.train.lr > 0)) throw ConfigError("train.lr must be > 0");
  if (cfg.model.features == 0) throw ConfigError("model.p must be >= 1");
  if (cfg.eval.chunk == 0) throw ConfigError("eval.chunk must be >= 1");
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::vector<std::pair<std::string, std::string>> echo(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& b : run_bindings()) {
    if (b.doc.key.rfind("train.adv.", 0) == 0 && !cfg.train.adv_training) continue;
    out.emplace_back(b.doc.key, b.get(cfg));
  }
  for (std::size_t i = 0; i < cfg.attacks.size(); ++i) {
    for (const auto& b : attack_bindings()) {
      out.emplace_back(fmt::format("attack.{}.{}", i, b.doc.key), b.get(cfg.attacks[i]));
    }
  }
  return out;
}

std::string echo_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : echo(cfg)) out += fmt::format("{} = {}\n", k, v);
  return out;
}

std::string resolved_data_root(const DatasetSpec& source) {
  if (!source.root.empty()) return source.root;
  const char* env = std::getenv("ETFW_DATA_ROOT");
  return env ? env : "";
}

model::ArchSpec arch_for(const RunConfig& cfg, const data::LabeledDataset& train) {
  model::ArchSpec a;
  a.family = cfg.model.family;
  a.input = train.sample_shape();
  a.features = cfg.model.features;
  a.classes = train.classes;
  a.activation = cfg.model.activation;
  a.classifier_bias = cfg.model.bias;
  if (a.family == "cnn4") {
    if (a.input.size() != 3) throw ConfigError("model.family = cnn4 needs image data (C,H,W)");
    a.hidden = cfg.model.hidden.empty() ? std::vector<std::size_t>{32, 32, 64, 64} : cfg.model.hidden;
    if (a.hidden.size() != 4) throw ConfigError("model.hidden for cnn4 needs 4 channel counts");
  } else {
    a.input = {train.sample_size()};
    a.hidden = cfg.model.hidden;
  }
  try {
    return model::ArchSpec::parse(a.id());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace etfw::harness
