#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "etfw/geometry/geometry.hpp"
#include "etfw/numcore/tape.hpp"
#include "etfw/numcore/tensor.hpp"

namespace etfw::model {

using numcore::Shape;
using numcore::Tensor;

enum class Activation { tanh, relu, prelu, leaky_relu };

Activation parse_activation(std::string_view name);
std::string to_string(Activation a);

inline constexpr Real kPreluInit = 0.25;
inline constexpr Real kLeakySlope = 0.01;

/// Architecture description, serialized as arch_id, e.g.
///   "cnn4;in=1x28x28;p=64;k=10;act=tanh;bias=0"
///   "mlp;in=2;hidden=16,16;p=2;k=3;act=tanh;bias=0"
/// cnn4: conv3x3(c0) relu conv3x3(c1) relu pool2 conv3x3(c2) relu conv3x3(c3)
/// relu pool2, flatten, dense to P, final activation. Channels default to
/// 32,32,64,64 ("ch=" overrides). mlp: dense+relu per hidden width, then
/// dense to P and the final activation.
struct ArchSpec {
  std::string family = "mlp";
  Shape input;                      // per-sample shape
  std::vector<std::size_t> hidden;  // mlp widths or cnn4 channels
  std::size_t features = 0;         // P
  std::size_t classes = 0;          // K
  Activation activation = Activation::tanh;
  bool classifier_bias = false;

  std::string id() const;
  static ArchSpec parse(std::string_view id);
  std::size_t input_size() const { return numcore::numel(input); }
};

ArchSpec mlp_arch(std::size_t in, std::vector<std::size_t> hidden, std::size_t features,
                  std::size_t classes, Activation act, bool bias = false);
ArchSpec cnn4_arch(Shape input, std::size_t features, std::size_t classes, Activation act,
                   bool bias = false);

/// Named parameter tensors in a fixed order. The encoder comes first, then
/// "act.slope" (prelu only), "classifier.W" [K,P] and "classifier.b" [K]
/// when enabled. Dense weights are stored [in,out].
struct ModelParams {
  ArchSpec arch;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::string arch_id() const { return arch.id(); }
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& classifier_W() const { return get("classifier.W"); }
  std::size_t parameter_count() const;
};

/// Names and shapes implied by an architecture, in storage order.
std::vector<std::pair<std::string, Shape>> param_layout(const ArchSpec& arch);

/// Encoder: fan-in scaled uniform (bound sqrt(3/fan_in)), zero biases.
/// classifier_W = factor_gram(K, P, s) + N(0, (0.01 s)^2), classifier bias 0.
ModelParams init_params(const ArchSpec& arch, double s, std::uint64_t seed);

/// Same params with every tensor registered as a leaf on `tape`.
ModelParams watch(numcore::Tape& tape, const ModelParams& params);

/// Gradients for each tensor of a watched ModelParams, in storage order.
std::vector<Tensor> collect(const numcore::Gradients& grads, const ModelParams& watched);

struct Forward {
  Tensor features;  // [N,P]
  Tensor logits;    // [N,K]
};

/// Accepts x as [N, input...] or [N, input_size]. Raises ShapeError when the
/// per-sample size disagrees with the architecture.
Forward forward(const ModelParams& params, const Tensor& x);
Tensor logits(const ModelParams& params, const Tensor& x);

/// Feature bound for the tanh activation: every row norm strictly below
/// sqrt(P). Returns the largest row norm divided by sqrt(P).
double tanh_feature_ratio(const Tensor& features);

/// Pairwise-halfspace classification region evaluated literally: the first i with
/// (w_i - w_j)^T f >= 0 for every j != i.
std::size_t region_classify(const Tensor& weights, std::span<const Real> f);
std::vector<std::size_t> region_classify_rows(const Tensor& weights, const Tensor& features);

/// Mean over the batch of -log softmax(logits)[y].
Tensor sce_loss(const Tensor& logits, std::span<const std::size_t> labels);

/// Madry-style baseline: each batch replaced by its PGD perturbation.
struct AdvTrainingConfig {
  double epsilon = 0.3;
  std::size_t steps = 40;
  double step_size = 0.01;
  bool random_start = true;
};

struct TrainConfig {
  double alpha = 100;
  double s = 0.1;
  double lr = 0.01;
  double lr_decay = 0.9;
  std::size_t decay_every = 60;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  geometry::PenaltyNorm penalty_norm = geometry::PenaltyNorm::squared_frobenius;
  std::optional<AdvTrainingConfig> adv_training;
};

/// sce_loss + alpha * penalty(classifier_W, gram_target(K, s), norm).
Tensor total_loss(const ModelParams& params, const Tensor& x, std::span<const std::size_t> labels,
                  const TrainConfig& cfg);

class Adam {
 public:
  explicit Adam(const ModelParams& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  /// In-place update of params.tensors. grads must match them in count and shape.
  void step(ModelParams& params, const std::vector<Tensor>& grads, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Binary checkpoint: "ETFW", u32 version, length-prefixed arch_id, records of
/// (length-prefixed name, u32 rank, u32 dims..., f64 payload), trailing u64
/// sum of payload bytes. All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);
std::uint64_t checkpoint_checksum(std::string_view bytes);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DemoVariant {
  std::vector<std::size_t> predictions;  // count per class
  std::vector<double> accuracy;          // per class, against the pre-activation region
};

struct DemoResult {
  Tensor weights;  // [3,2], headings 90, 330, 210 degrees
  std::size_t samples = 0;
  DemoVariant relu, tanh;
  std::size_t origin_class = 0;  // prediction for f = 0
};

/// Three unit class vectors 120 degrees apart, with the third row pointing
/// into the negative orthant. Pre-activations z on a uniform grid over
/// [-3,3]^2 are labeled by their region under W, then classified from
/// relu(z) and from tanh(z).
DemoResult relu_failure_demo(std::size_t grid = 121);

}  // namespace etfw::model
