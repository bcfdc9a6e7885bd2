#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "etfw/data/data.hpp"
#include "etfw/model/model.hpp"
#include "etfw/numcore/tensor.hpp"

namespace etfw::attacks {

using numcore::Tensor;

/// Anything with differentiable logits. x is [N, sample...].
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Tensor logits(const Tensor& x) const = 0;
  virtual std::size_t num_classes() const = 0;
  std::vector<std::size_t> predict(const Tensor& x) const;
};

class NetworkClassifier final : public Classifier {
 public:
  explicit NetworkClassifier(model::ModelParams params) : params_(std::move(params)) {}
  Tensor logits(const Tensor& x) const override;
  std::size_t num_classes() const override { return params_.arch.classes; }
  const model::ModelParams& params() const { return params_; }

 private:
  model::ModelParams params_;
};

/// logits = x W^T + b over flattened samples. W [K,d], b [K] (may be empty).
class AffineClassifier final : public Classifier {
 public:
  AffineClassifier(Tensor weights, Tensor bias);
  Tensor logits(const Tensor& x) const override;
  std::size_t num_classes() const override { return weights_.dim(0); }
  const Tensor& weights() const { return weights_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weights_, bias_;
};

enum class AttackKind { fgsm, pgd, deepfool, cw, mta };
enum class Norm { linf, l2 };

AttackKind parse_kind(std::string_view s);
Norm parse_norm(std::string_view s);
std::string to_string(AttackKind k);
std::string to_string(Norm n);

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

struct AttackConfig {
  std::string name;  // report label, e.g. "PGD40"
  AttackKind kind = AttackKind::pgd;
  Norm norm = Norm::linf;
  double epsilon = 0.3;
  std::size_t steps = 40;
  double step_size = 0.01;
  double overshoot = 0.02;
  bool random_start = true;
  std::size_t cw_search_steps = 9;
  double cw_confidence = 0;
  double cw_initial_c = 1e-2;
  std::uint64_t seed = 0;
  /// Valid input range. [0,1] for images; the geometric oracles widen it.
  double box_min = 0;
  double box_max = 1;

  /// epsilon >= 0 (0 is the null attack, +inf is unbounded), steps >= 1,
  /// step_size > 0 where used, box_min < box_max.
  void validate() const;
};

/// Table presets.
AttackConfig pgd20();   // eps 8/255, 20 steps of 0.0031
AttackConfig pgd40();   // eps 0.3, 40 steps of 0.01
AttackConfig mta100();  // 100 steps of 0.0031
AttackConfig mta200();  // 200 steps of 0.01
AttackConfig cw_l2_preset(double epsilon);  // 1000 steps of 0.01
AttackConfig deepfool_preset(Norm norm, double epsilon);  // 50 steps, overshoot 0.02

/// Per-sample outcome for a batch.
struct AttackResult {
  Tensor x_adv;                        // same shape as x
  std::vector<bool> success;           // prediction != y and within budget
  std::vector<double> perturbation_norm;  // in the attack norm
  std::vector<std::size_t> iterations_used;
};

/// dL/dx of the summed per-sample cross-entropy toward `labels`; zeros when
/// the logits do not depend on x.
Tensor input_gradient(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels);

double norm_of(std::span<const Real> v, Norm norm);

AttackResult fgsm(const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
                  double epsilon, double box_min = 0, double box_max = 1);

/// `first_index` is the global index of row 0; random starts are seeded per
/// (cfg.seed, global index) so results do not depend on batching.
AttackResult pgd(const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
                 const AttackConfig& cfg, std::size_t first_index = 0);

/// Untargeted DeepFool. Labels default to the model's clean predictions; a
/// sample whose prediction already differs from its label returns at once.
/// The final point is projected into the epsilon ball of cfg.norm.
AttackResult deepfool(const Classifier& model, const Tensor& x, const AttackConfig& cfg,
                      std::optional<std::span<const std::size_t>> y = std::nullopt);

/// Successful candidate norms seen during the search, per sample.
struct CwTrace {
  std::vector<std::vector<double>> candidate_norms;
};

/// Carlini-Wagner L2 with tanh change of variables, Adam on w, and a binary
/// search over c. Returns the smallest-norm adversarial found (x itself when
/// none); success also requires ||delta||_2 <= epsilon.
AttackResult cw_l2(const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
                   const AttackConfig& cfg, CwTrace* trace = nullptr);

/// Best of the K-1 targeted PGD runs (descending cross-entropy toward each
/// t != y). The first target in order (y+1, y+2, ... mod K) that succeeds is
/// returned.
AttackResult mta(const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
                 const AttackConfig& cfg, std::size_t first_index = 0);

AttackResult run_attack(const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
                        const AttackConfig& cfg, std::size_t first_index = 0);

struct RobustResult {
  std::size_t samples = 0;
  std::size_t clean_correct = 0;
  std::size_t robust_correct = 0;  // clean-correct and still correct after the attack
  double clean_accuracy = 0;
  double robust_accuracy = 0;
  double mean_perturbation = 0;  // over successful attacks
};

struct EvalOptions {
  std::size_t workers = 1;
  std::size_t chunk = 50;  // fixed chunking keeps results independent of `workers`
};

/// Clean accuracy and conjunction-convention robust accuracy.
RobustResult robust_accuracy(const Classifier& model, const data::LabeledDataset& ds,
                             const AttackConfig& cfg, const EvalOptions& options = {});

double clean_accuracy(const Classifier& model, const data::LabeledDataset& ds,
                      std::size_t chunk = 500);

}  // namespace etfw::attacks
