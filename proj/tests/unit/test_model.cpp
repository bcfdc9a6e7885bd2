#include <fmt/format.h>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "etfw/geometry/geometry.hpp"
#include "etfw/model/model.hpp"
#include "etfw/numcore/grad_check.hpp"
#include "etfw/numcore/ops.hpp"

using namespace etfw;
using namespace etfw::model;
using numcore::Tensor;

namespace {

Tensor uniform(numcore::Shape shape, std::uint64_t seed, double lo = 0, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<Real>(u(rng));
  return t;
}

ArchSpec small_cnn(Activation act, bool bias = false) {
  return ArchSpec::parse(fmt::format("cnn4;in=1x16x16;ch=2,2,3,3;p=4;k=3;act={};bias={}",
                                     to_string(act), bias ? 1 : 0));
}

}  // namespace

TEST(Arch, IdRoundTrip) {
  for (const char* id : {"cnn4;in=1x28x28;p=64;k=10;act=tanh;bias=0",
                         "mlp;in=2;hidden=16,16;p=2;k=3;act=tanh;bias=0",
                         "mlp;in=5;hidden=;p=3;k=4;act=prelu;bias=1",
                         "cnn4;in=3x32x32;ch=8,8,16,16;p=16;k=10;act=leaky_relu;bias=0"}) {
    EXPECT_EQ(ArchSpec::parse(id).id(), id);
  }
}

TEST(Arch, RejectsMalformed) {
  EXPECT_THROW(ArchSpec::parse("resnet;in=2;p=2;k=3"), std::invalid_argument);
  EXPECT_THROW(ArchSpec::parse("mlp;in=2;p=2"), std::invalid_argument);
  EXPECT_THROW(ArchSpec::parse("mlp;in=2;p=2;k=3;depth=4"), std::invalid_argument);
  EXPECT_THROW(ArchSpec::parse("mlp;in=2;p=2;k=3;act=sigmoid"), std::invalid_argument);
  EXPECT_THROW(ArchSpec::parse("cnn4;in=784;p=2;k=3"), std::invalid_argument);
}

TEST(Arch, Cnn4MnistLayout) {
  const auto layout = param_layout(cnn4_arch({1, 28, 28}, 64, 10, Activation::tanh));
  ASSERT_EQ(layout.size(), 11u);
  EXPECT_EQ(layout[8].first, "fc.w");
  EXPECT_EQ(layout[8].second, (numcore::Shape{1024, 64}));
  EXPECT_EQ(layout.back().second, (numcore::Shape{10, 64}));
}

TEST(Init, ClassifierStartsNearSimplex) {
  const ModelParams p = init_params(cnn4_arch({1, 28, 28}, 64, 10, Activation::tanh), 0.1, 3);
  const auto target = geometry::gram_target(10, 0.1);
  const double pen = geometry::penalty_value(p.classifier_W(), target, geometry::PenaltyNorm::frobenius);
  EXPECT_GT(pen, 0);
  EXPECT_LT(pen, 0.1 * geometry::penalty_value(Tensor({10, 64}), target, geometry::PenaltyNorm::frobenius));
}

TEST(Init, FanInBoundAndZeroBias) {
  const ModelParams p = init_params(mlp_arch(9, {5}, 3, 3, Activation::relu), 1, 0);
  for (Real v : p.get("dense0.w").data()) EXPECT_LE(std::abs(v), std::sqrt(3.0 / 9));
  for (Real v : p.get("dense0.b").data()) EXPECT_EQ(v, 0);
}

TEST(Init, DeterministicPerSeed) {
  const auto arch = small_cnn(Activation::prelu);
  const ModelParams a = init_params(arch, 0.1, 8), b = init_params(arch, 0.1, 8),
                    c = init_params(arch, 0.1, 9);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
  EXPECT_NE(serialize_checkpoint(a), serialize_checkpoint(c));
  EXPECT_EQ(a.get("act.slope")[0], Real(0.25));
}

TEST(Forward, IdentityTanhAtOriginGivesZeroLogits) {
  ModelParams p = init_params(mlp_arch(2, {}, 2, 2, Activation::tanh), 1, 0);
  p.get("fc.w") = Tensor::matrix({{1, 0}, {0, 1}});
  p.get("classifier.W") = Tensor::matrix({{1, 0}, {0, 1}});
  const Forward f = forward(p, Tensor({1, 2}));
  EXPECT_EQ(f.logits[0], 0);
  EXPECT_EQ(f.logits[1], 0);
}

TEST(Forward, ReluFeaturesNonnegative) {
  const ModelParams p = init_params(small_cnn(Activation::relu), 0.1, 1);
  const Forward f = forward(p, uniform({20, 1, 16, 16}, 2));
  for (Real v : f.features.data()) EXPECT_GE(v, 0);
}

TEST(Forward, TanhFeatureNormBelowSqrtP) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelParams p = init_params(mlp_arch(6, {8}, 5, 3, Activation::tanh), 0.1, seed);
    for (auto& v : p.get("fc.w").mutable_data()) v *= 4;
    const Forward f = forward(p, uniform({50, 6}, seed + 100, -5, 5));
    EXPECT_LT(tanh_feature_ratio(f.features), 1.0);
    // Saturated pre-activations (|z| > ~19) round to exactly +-1.
    for (Real v : f.features.data()) EXPECT_LE(std::abs(v), 1);
  }
}

TEST(Forward, TanhCoordinatesStrictlyInsideOnPixelInputs) {
  const ModelParams p = init_params(small_cnn(Activation::tanh), 0.1, 2);
  const Forward f = forward(p, uniform({30, 1, 16, 16}, 3));
  for (Real v : f.features.data()) EXPECT_LT(std::abs(v), 1);
}

TEST(Forward, SaturatedTanhTripsRuntimeCheck) {
  ModelParams p = init_params(mlp_arch(1, {}, 2, 2, Activation::tanh), 0.1, 0);
  p.get("fc.w") = Tensor::matrix({{100, -100}});
  const bool was = numcore::finite_check_enabled();
  numcore::set_finite_check(true);
  EXPECT_THROW(forward(p, Tensor::matrix({{1}})), std::domain_error);
  numcore::set_finite_check(false);
  EXPECT_NO_THROW(forward(p, Tensor::matrix({{1}})));
  numcore::set_finite_check(was);
}

TEST(Forward, FeatureAndLogitWidths) {
  const ModelParams p = init_params(cnn4_arch({1, 28, 28}, 64, 10, Activation::tanh), 0.1, 0);
  const Forward f = forward(p, uniform({3, 784}, 5));
  EXPECT_EQ(f.features.shape(), (numcore::Shape{3, 64}));
  EXPECT_EQ(f.logits.shape(), (numcore::Shape{3, 10}));
}

TEST(Forward, ShapeMismatch) {
  const ModelParams p = init_params(mlp_arch(4, {3}, 2, 3, Activation::tanh), 0.1, 0);
  EXPECT_THROW(forward(p, Tensor({2, 5})), numcore::ShapeError);
}

TEST(Forward, ClassifierBiasShiftsLogits) {
  ModelParams p = init_params(mlp_arch(3, {}, 2, 3, Activation::tanh, true), 0.1, 0);
  const Tensor x = uniform({2, 3}, 1);
  const Tensor before = forward(p, x).logits;
  p.get("classifier.b") = Tensor::vector({1, 2, 3});
  const Tensor after = forward(p, x).logits;
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(after[i] - before[i], (i % 3) + 1, 1e-12);
}

TEST(Region, IdentityPicksLargerCoordinate) {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Real f[2] = {2, 1};
  EXPECT_EQ(region_classify(eye, f), 0u);
}

TEST(Region, BoundaryTieGoesToLowestIndex) {
  const Tensor w = Tensor::matrix({{1, 0}, {0, 1}, {-1, 0}});
  const Real f[2] = {3, 3};
  EXPECT_EQ(region_classify(w, f), 0u);
  const Tensor v = Tensor::matrix({{1, 0}, {0, 1}, {0, 1}});
  const Real g[2] = {0, 2};
  EXPECT_EQ(region_classify(v, g), 1u);
}

TEST(Region, AgreesWithArgmaxOfLogits) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<std::size_t> dims(2, 12);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = dims(rng), p = dims(rng);
    Tensor w({k, p}), f({1, p});
    for (auto& v : w.mutable_data()) v = n(rng);
    for (auto& v : f.mutable_data()) v = n(rng);
    const Tensor logit = numcore::matmul(f, numcore::transpose(w));
    // Oracle: every pairwise inequality of the region definition, checked directly.
    const std::size_t got = region_classify(w, f.data());
    for (std::size_t j = 0; j < k; ++j) {
      double m = 0;
      for (std::size_t c = 0; c < p; ++c) m += (w.at(got, c) - w.at(j, c)) * f[c];
      ASSERT_GE(m, -1e-12);
    }
    ASSERT_EQ(got, numcore::argmax_rows(logit)[0]);
  }
}

TEST(Sce, UniformLogitsGiveLogK) {
  const std::vector<std::size_t> y{0, 3, 6};
  EXPECT_NEAR(sce_loss(Tensor({3, 7}, 0.4), y).item(), std::log(7.0), 1e-14);
}

TEST(Sce, DominantTrueLogitDrivesLossToZero) {
  const std::vector<std::size_t> y{1};
  EXPECT_LT(sce_loss(Tensor::matrix({{0, 50, 0}}), y).item(), 1e-20);
  EXPECT_LT(sce_loss(Tensor::matrix({{0, 800, 0}}), y).item(), 1e-300);
}

TEST(Sce, TwoLogitExample) {
  const std::vector<std::size_t> y{0};
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1));
  EXPECT_NEAR(sce_loss(Tensor::matrix({{1, 0}}), y).item(), expected, 1e-15);
  EXPECT_NEAR(expected, 0.31326, 1e-5);
}

TEST(Sce, LabelOutOfRange) {
  const std::vector<std::size_t> y{2};
  EXPECT_THROW(sce_loss(Tensor::matrix({{1, 0}}), y), std::out_of_range);
}

TEST(TotalLoss, AlphaZeroIsSce) {
  const ModelParams p = init_params(small_cnn(Activation::tanh), 0.1, 0);
  const Tensor x = uniform({4, 256}, 1);
  const std::vector<std::size_t> y{0, 1, 2, 1};
  TrainConfig cfg;
  cfg.alpha = 0;
  EXPECT_EQ(total_loss(p, x, y, cfg).item(), sce_loss(logits(p, x), y).item());
}

TEST(TotalLoss, PenaltyVanishesOnExactFactor) {
  ModelParams p = init_params(small_cnn(Activation::tanh), 0.1, 0);
  p.get("classifier.W") = geometry::factor_gram(3, 4, 0.1);
  const Tensor x = uniform({4, 256}, 1);
  const std::vector<std::size_t> y{0, 1, 2, 1};
  const TrainConfig cfg;
  EXPECT_NEAR(total_loss(p, x, y, cfg).item(), sce_loss(logits(p, x), y).item(), 1e-10);
}

TEST(TotalLoss, Defaults) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.alpha, 100);
  EXPECT_EQ(cfg.s, 0.1);
  EXPECT_EQ(cfg.lr, 0.01);
  EXPECT_EQ(cfg.penalty_norm, geometry::PenaltyNorm::squared_frobenius);
}

struct GradCase {
  Activation act;
  geometry::PenaltyNorm norm;
  bool bias;
};

class TotalLossGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(TotalLossGradient, MatchesFiniteDifferences) {
  const GradCase c = GetParam();
  for (const ArchSpec& arch : {small_cnn(c.act, c.bias), mlp_arch(5, {6, 4}, 3, 4, c.act, c.bias)}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      ModelParams p = init_params(arch, 0.5, seed);
      // Move the classifier off the target so the penalty gradient is not ~0.
      for (auto& v : p.get("classifier.W").mutable_data()) v *= Real(1.7);
      const Tensor x = uniform({3, arch.input_size()}, seed + 50);
      const std::vector<std::size_t> y{0, 2, 1};
      TrainConfig cfg;
      cfg.alpha = 3;
      cfg.s = 0.5;
      cfg.penalty_norm = c.norm;
      for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        const auto r = numcore::grad_check(
            [&](const Tensor& t) {
              ModelParams q = p;
              q.tensors[i] = t;
              return total_loss(q, x, y, cfg);
            },
            p.tensors[i]);
        EXPECT_LT(r.max_rel_error, 1e-5) << arch.id() << " " << p.names[i] << " seed " << seed;
      }
      const auto rx = numcore::grad_check(
          [&](const Tensor& t) { return total_loss(p, t, y, cfg); }, x);
      EXPECT_LT(rx.max_rel_error, 1e-5) << arch.id() << " input seed " << seed;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(
    Activations, TotalLossGradient,
    ::testing::Values(GradCase{Activation::tanh, geometry::PenaltyNorm::squared_frobenius, false},
                      GradCase{Activation::tanh, geometry::PenaltyNorm::frobenius, false},
                      GradCase{Activation::relu, geometry::PenaltyNorm::squared_frobenius, false},
                      GradCase{Activation::relu, geometry::PenaltyNorm::frobenius, false},
                      GradCase{Activation::prelu, geometry::PenaltyNorm::squared_frobenius, true},
                      GradCase{Activation::leaky_relu, geometry::PenaltyNorm::frobenius, true}),
    [](const auto& info) {
      return to_string(info.param.act) +
             (info.param.norm == geometry::PenaltyNorm::frobenius ? "_fro" : "_sqfro") +
             (info.param.bias ? "_bias" : "");
    });

TEST(TotalLoss, WatchedGradientsMatchPerTensorChecks) {
  const ModelParams p = init_params(mlp_arch(4, {5}, 3, 3, Activation::tanh), 0.2, 4);
  const Tensor x = uniform({2, 4}, 9);
  const std::vector<std::size_t> y{1, 2};
  const TrainConfig cfg;
  numcore::Tape tape;
  const ModelParams w = watch(tape, p);
  const auto grads = collect(tape.backward(total_loss(w, x, y, cfg)), w);
  ASSERT_EQ(grads.size(), p.tensors.size());
  const std::size_t wi = p.tensors.size() - 1;
  const double h = 1e-6;
  Tensor up = p.tensors[wi].clone(), down = p.tensors[wi].clone();
  up.mutable_data()[0] += h;
  down.mutable_data()[0] -= h;
  ModelParams pu = p, pd = p;
  pu.tensors[wi] = up;
  pd.tensors[wi] = down;
  const double numeric = (total_loss(pu, x, y, cfg).item() - total_loss(pd, x, y, cfg).item()) / (2 * h);
  EXPECT_NEAR(grads[wi][0], numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ModelParams p = init_params(mlp_arch(3, {4}, 2, 3, Activation::tanh), 0.1, 0);
  const ModelParams before = p;
  Adam opt(p);
  std::vector<Tensor> zeros;
  for (const auto& t : p.tensors) zeros.emplace_back(t.shape());
  opt.step(p, zeros, 0.01);
  EXPECT_EQ(serialize_checkpoint(p), serialize_checkpoint(before));
}

TEST(Adam, FirstStepIsSignTimesLr) {
  ModelParams p = init_params(mlp_arch(3, {4}, 2, 3, Activation::tanh), 0.1, 0);
  const ModelParams before = p;
  Adam opt(p);
  std::vector<Tensor> grads;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (const auto& t : p.tensors) {
    Tensor g(t.shape());
    for (auto& v : g.mutable_data()) v = n(rng);
    grads.push_back(g);
  }
  opt.step(p, grads, 0.01);
  // m_hat = g, v_hat = g^2: update = lr g / (|g| + eps).
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    for (std::size_t j = 0; j < p.tensors[i].size(); ++j) {
      const double g = grads[i][j];
      const double expected = 0.01 * g / (std::abs(g) + 1e-8);
      EXPECT_NEAR(before.tensors[i][j] - p.tensors[i][j], expected, 1e-12);
    }
  }
  EXPECT_EQ(opt.steps_taken(), 1u);
}

TEST(Adam, ShapeMismatch) {
  ModelParams p = init_params(mlp_arch(3, {4}, 2, 3, Activation::tanh), 0.1, 0);
  Adam opt(p);
  std::vector<Tensor> grads;
  for (const auto& t : p.tensors) grads.emplace_back(t.shape());
  grads[0] = Tensor({1, 1});
  EXPECT_THROW(opt.step(p, grads, 0.01), std::invalid_argument);
  grads.pop_back();
  EXPECT_THROW(opt.step(p, grads, 0.01), std::invalid_argument);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  for (auto act : {Activation::tanh, Activation::prelu}) {
    const ModelParams p = init_params(small_cnn(act, true), 0.1, 12);
    const std::string bytes = serialize_checkpoint(p);
    const ModelParams q = deserialize_checkpoint(bytes);
    EXPECT_EQ(q.arch_id(), p.arch_id());
    EXPECT_EQ(serialize_checkpoint(q), bytes);
  }
}

TEST(Checkpoint, LayoutIsLittleEndianWithByteSum) {
  ModelParams p = init_params(mlp_arch(1, {}, 1, 2, Activation::tanh), 1, 0);
  p.get("fc.w") = Tensor::matrix({{1.0}});
  p.get("fc.b") = Tensor::vector({0.0});
  p.get("classifier.W") = Tensor::matrix({{2.0}, {-2.0}});
  const std::string b = serialize_checkpoint(p);
  EXPECT_EQ(b.substr(0, 4), "ETFW");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 0);
  const std::string id = p.arch_id();
  EXPECT_EQ(static_cast<unsigned char>(b[8]), id.size());
  EXPECT_EQ(b.substr(12, id.size()), id);
  // 1.0 = 00 00 00 00 00 00 f0 3f; 2.0 = ... 00 40; -2.0 = ... 00 c0.
  const std::uint64_t expected = (0xf0 + 0x3f) + 0 + 0x40 + 0xc0;
  EXPECT_EQ(checkpoint_checksum(b), expected);
  std::size_t pos = 12 + id.size();
  EXPECT_EQ(static_cast<unsigned char>(b[pos]), 4u);  // "fc.w"
  EXPECT_EQ(b.substr(pos + 4, 4), "fc.w");
}

TEST(Checkpoint, DetectsCorruption) {
  const std::string good = serialize_checkpoint(init_params(small_cnn(Activation::tanh), 0.1, 0));
  std::string flipped = good;
  flipped[good.size() - 20] ^= 0x10;
  EXPECT_THROW(deserialize_checkpoint(flipped), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, good.size() - 3)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint("ETFX" + good.substr(4)), CheckpointError);
  std::string version = good;
  version[4] = 2;
  EXPECT_THROW(deserialize_checkpoint(version), CheckpointError);
}

TEST(ReluDemo, NegativeOrthantClassIsUnreachable) {
  const DemoResult r = relu_failure_demo();
  // Row 0 heads at 90 degrees, row 2 at 210: w0 - w2 has both components positive.
  EXPECT_GT(r.weights.at(0, 0) - r.weights.at(2, 0), 0);
  EXPECT_GT(r.weights.at(0, 1) - r.weights.at(2, 1), 0);
  EXPECT_EQ(r.relu.predictions[2], 0u);
  EXPECT_EQ(r.relu.accuracy[2], 0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_GT(r.tanh.predictions[c], 0u) << c;
  EXPECT_EQ(r.origin_class, 0u);
}

TEST(ReluDemo, AnyNonnegativeFeatureSet) {
  const DemoResult r = relu_failure_demo(3);
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> e(1);
  for (int t = 0; t < 10000; ++t) {
    const Real f[2] = {static_cast<Real>(e(rng)), static_cast<Real>(e(rng))};
    ASSERT_NE(region_classify(r.weights, f), 2u);
  }
}

TEST(ReluDemo, Deterministic) {
  const DemoResult a = relu_failure_demo(), b = relu_failure_demo();
  EXPECT_EQ(a.relu.predictions, b.relu.predictions);
  EXPECT_EQ(a.tanh.predictions, b.tanh.predictions);
}
