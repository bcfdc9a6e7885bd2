#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "etfw/numcore/grad_check.hpp"
#include "etfw/numcore/ops.hpp"
#include "etfw/numcore/tape.hpp"

using namespace etfw;
using namespace etfw::numcore;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, Real lo = -1, Real hi = 1) {
  std::uniform_real_distribution<Real> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_data()) v = u(rng);
  return t;
}

// Keeps inputs away from kinks of relu-like ops and from max-pool ties.
Tensor nudge_from_zero(Tensor t, Real margin = 0.05) {
  for (auto& v : t.mutable_data()) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

// Weighted sum makes every output coordinate matter to the scalar.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

}  // namespace

TEST(Ops, MatmulIdentityIsNeutral) {
  const Tensor a = Tensor::matrix({{1.5, -2}, {0.25, 7}});
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_TRUE(bitwise_equal(matmul(eye, a), a));
}

TEST(Ops, MatmulSmallExample) {
  const Tensor c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5}, {6}}));
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 17);
  EXPECT_EQ(c[1], 39);
}

TEST(Ops, TanhOfZeroIsZero) {
  const Tensor y = numcore::tanh(Tensor::zeros({3, 4}));
  for (Real v : y.data()) EXPECT_EQ(v, 0);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 5, 5}), Tensor::zeros({4, 3, 3, 3}), Tensor()),
               ShapeError);
  EXPECT_THROW(add_row_bias(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
}

TEST(Ops, ScalarOperandBroadcasts) {
  const Tensor y = mul(Tensor::vector({1, 2, 3}), Tensor::scalar(2));
  EXPECT_EQ(y[2], 6);
}

TEST(Ops, PickRejectsOutOfRangeIndex) {
  const std::vector<std::size_t> idx{0, 3};
  EXPECT_THROW(pick(Tensor::zeros({2, 3}), idx), std::out_of_range);
}

TEST(Ops, Conv2dMatchesDirectLoops) {
  std::mt19937_64 rng(7);
  for (std::size_t stride : {1, 2}) {
    for (std::size_t pad : {0, 1}) {
      const Tensor x = random_tensor({2, 3, 6, 5}, rng);
      const Tensor w = random_tensor({4, 3, 3, 3}, rng);
      const Tensor b = random_tensor({4}, rng);
      const Tensor y = conv2d(x, w, b, {stride, pad});
      const std::size_t oh = (6 + 2 * pad - 3) / stride + 1, ow = (5 + 2 * pad - 3) / stride + 1;
      ASSERT_EQ(y.shape(), (Shape{2, 4, oh, ow}));
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 4; ++o)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
              double acc = b[o];
              for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t ki = 0; ki < 3; ++ki)
                  for (std::size_t kj = 0; kj < 3; ++kj) {
                    const long r = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                    const long q = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                    if (r < 0 || q < 0 || r >= 6 || q >= 5) continue;
                    acc += x[((n * 3 + c) * 6 + r) * 5 + q] * w[((o * 3 + c) * 3 + ki) * 3 + kj];
                  }
              EXPECT_NEAR(y[((n * 4 + o) * oh + i) * ow + j], acc, 1e-12);
            }
    }
  }
}

TEST(Ops, MaxPoolPicksFirstOnTies) {
  const Tensor x({1, 1, 2, 2}, std::vector<Real>{3, 3, 1, 3});
  Tape tape;
  const Tensor xt = tape.watch(x);
  const Tensor y = max_pool2d(xt, 2, 2);
  EXPECT_EQ(y[0], 3);
  const Tensor g = tape.backward(sum(y)).wrt(xt);
  EXPECT_EQ(g[0], 1);
  EXPECT_EQ(g[1], 0);
  EXPECT_EQ(g[3], 0);
}

TEST(Tensor, CopiesBehaveAsValues) {
  Tensor a = Tensor::vector({1, 2, 3});
  Tensor b = a;
  b.mutable_data()[0] = 10;
  EXPECT_EQ(a[0], 1);
  EXPECT_EQ(b[0], 10);
}

TEST(Tensor, ConstructorChecksElementCount) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<Real>{1, 2, 3}), ShapeError);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  const Tensor x = tape.watch(Tensor::matrix({{1, -2}, {3, 0.5}}));
  const Tensor g = tape.backward(sum(x)).wrt(x);
  for (Real v : g.data()) EXPECT_EQ(v, 1);
}

TEST(Backward, SquareGivesTwiceInput) {
  Tape tape;
  const Tensor v = Tensor::vector({1.5, -2, 0.25});
  const Tensor x = tape.watch(v);
  const Tensor g = tape.backward(sum(mul(x, x))).wrt(x);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(g[i], 2 * v[i]);
}

TEST(Backward, TanhMatmulMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({5, 1}, rng);
  const Tensor w = random_tensor({3, 5}, rng);
  const auto r = grad_check([&](const Tensor& wt) { return sum(numcore::tanh(matmul(wt, x))); },
                            w, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Backward, NonScalarLossIsRejected) {
  Tape tape;
  const Tensor x = tape.watch(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(mul(x, x)), ShapeError);
}

TEST(Backward, LossFromAnotherTapeIsRejected) {
  Tape a, b;
  const Tensor x = a.watch(Tensor::vector({1, 2}));
  EXPECT_THROW(b.backward(sum(x)), std::invalid_argument);
}

TEST(Backward, UnusedWatchedTensorGetsZeros) {
  Tape tape;
  const Tensor x = tape.watch(Tensor::vector({1, 2}));
  const Tensor y = tape.watch(Tensor::vector({3, 4, 5}));
  const Gradients g = tape.backward(sum(x));
  EXPECT_FALSE(g.contains(y));
  EXPECT_EQ(g.wrt(y).shape(), (Shape{3}));
}

TEST(Backward, TapeIsResetUnlessRetained) {
  Tape tape;
  const Tensor x = tape.watch(Tensor::vector({1, 2}));
  const Tensor loss = sum(mul(x, x));
  tape.backward(loss, /*retain=*/true);
  EXPECT_GT(tape.size(), 0u);
  const Tensor g = tape.backward(loss).wrt(x);
  EXPECT_EQ(g[1], 4);
  EXPECT_EQ(tape.size(), 0u);
  // Values from the consumed tape are plain constants now.
  EXPECT_FALSE(loss.requires_grad());
}

TEST(Backward, ReusedInputAccumulates) {
  Tape tape;
  const Tensor x = tape.watch(Tensor::vector({3}));
  const Tensor y = add(mul(x, x), scale(x, 4));
  EXPECT_EQ(tape.backward(sum(y)).wrt(x)[0], 2 * 3 + 4);
}

TEST(GradCheck, ExactForLinearFunctions) {
  std::mt19937_64 rng(3);
  const auto r = grad_check([](const Tensor& t) { return sum(t); }, random_tensor({4, 3}, rng));
  EXPECT_LT(r.max_rel_error, 1e-10);
}

TEST(GradCheck, DetectsWrongBackwardRule) {
  // Cube with a backward rule that forgets the factor 3.
  auto bad_cube = [](const Tensor& x) {
    Tensor out(x.shape());
    auto d = out.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = x[i] * x[i] * x[i];
    return record_op(std::move(out), {&x},
                     [xv = x.detached()](const Tensor& g, std::span<Tensor> gi,
                                         std::span<const bool>) {
                       Tensor gx(g.shape());
                       auto o = gx.mutable_data();
                       for (std::size_t i = 0; i < o.size(); ++i) o[i] = g[i] * xv[i] * xv[i];
                       gi[0] = std::move(gx);
                     });
  };
  const auto r = grad_check([&](const Tensor& t) { return sum(bad_cube(t)); },
                            Tensor::vector({0.5, 1.5, -2}));
  EXPECT_GT(r.max_rel_error, 1e-2);
}

TEST(FiniteCheck, FlagsNonFiniteResults) {
  set_finite_check(true);
  EXPECT_THROW(numcore::log(Tensor::vector({-1})), NonFiniteError);
  EXPECT_THROW(numcore::exp(Tensor::vector({1e6})), NonFiniteError);
  set_finite_check(false);
  EXPECT_NO_THROW(numcore::log(Tensor::vector({-1})));
}

// Every primitive, 50 seeded inputs, central differences at h = 1e-6.
struct OpCase {
  std::string name;
  Shape shape;
  std::function<Tensor(const Tensor&, std::mt19937_64&)> build;  // returns a scalar
  bool positive = false;
};

void PrintTo(const OpCase& c, std::ostream* os) { *os << c.name; }

class PrimitiveGradients : public ::testing::TestWithParam<OpCase> {};

TEST_P(PrimitiveGradients, MatchCentralDifferences) {
  const OpCase& c = GetParam();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed * 7919 + 1);
    const Tensor x = c.positive ? random_tensor(c.shape, rng, 0.2, 2.0)
                                : nudge_from_zero(random_tensor(c.shape, rng));
    const auto f = [&](const Tensor& t) {
      std::mt19937_64 local(seed + 100);
      return c.build(t, local);
    };
    const auto r = grad_check(f, x, 1e-6);
    ASSERT_LT(r.max_rel_error, 1e-5) << c.name << " seed " << seed << " coord " << r.worst_index
                                     << " analytic " << r.analytic << " numeric " << r.numeric;
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllOps, PrimitiveGradients,
    ::testing::Values(
        OpCase{"add", {3, 4}, [](const Tensor& x, auto& rng) { return weighted_sum(add(x, random_tensor({3, 4}, rng)), 1); }},
        OpCase{"add_scalar_operand", {3, 4}, [](const Tensor& x, auto&) { return weighted_sum(add(Tensor::scalar(0.3), x), 1); }},
        OpCase{"sub", {3, 4}, [](const Tensor& x, auto& rng) { return weighted_sum(sub(random_tensor({3, 4}, rng), x), 2); }},
        OpCase{"mul", {3, 4}, [](const Tensor& x, auto& rng) { return weighted_sum(mul(x, random_tensor({3, 4}, rng)), 3); }},
        OpCase{"mul_self", {5}, [](const Tensor& x, auto&) { return weighted_sum(mul(x, x), 3); }},
        OpCase{"scale", {6}, [](const Tensor& x, auto&) { return weighted_sum(scale(x, -2.5), 4); }},
        OpCase{"matmul_lhs", {3, 4}, [](const Tensor& x, auto& rng) { return weighted_sum(matmul(x, random_tensor({4, 2}, rng)), 5); }},
        OpCase{"matmul_rhs", {4, 2}, [](const Tensor& x, auto& rng) { return weighted_sum(matmul(random_tensor({3, 4}, rng), x), 6); }},
        OpCase{"transpose", {3, 2}, [](const Tensor& x, auto&) { return weighted_sum(transpose(x), 7); }},
        OpCase{"add_row_bias_x", {3, 4}, [](const Tensor& x, auto& rng) { return weighted_sum(add_row_bias(x, random_tensor({4}, rng)), 8); }},
        OpCase{"add_row_bias_b", {4}, [](const Tensor& b, auto& rng) { return weighted_sum(add_row_bias(random_tensor({3, 4}, rng), b), 8); }},
        OpCase{"conv2d_x", {2, 2, 5, 5}, [](const Tensor& x, auto& rng) { return weighted_sum(conv2d(x, random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng), {2, 1}), 9); }},
        OpCase{"conv2d_w", {3, 2, 3, 3}, [](const Tensor& w, auto& rng) { return weighted_sum(conv2d(random_tensor({2, 2, 5, 4}, rng), w, Tensor(), {1, 1}), 10); }},
        OpCase{"conv2d_b", {3}, [](const Tensor& b, auto& rng) { return weighted_sum(conv2d(random_tensor({2, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng), b, {1, 0}), 11); }},
        OpCase{"max_pool2d", {2, 2, 4, 4}, [](const Tensor& x, auto&) { return weighted_sum(max_pool2d(x, 2, 2), 12); }},
        OpCase{"relu", {10}, [](const Tensor& x, auto&) { return weighted_sum(relu(x), 13); }},
        OpCase{"leaky_relu", {10}, [](const Tensor& x, auto&) { return weighted_sum(leaky_relu(x, 0.01), 14); }},
        OpCase{"prelu_x", {10}, [](const Tensor& x, auto&) { return weighted_sum(prelu(x, Tensor::vector({0.25})), 15); }},
        OpCase{"prelu_slope", {1}, [](const Tensor& a, auto& rng) { return weighted_sum(prelu(nudge_from_zero(random_tensor({8}, rng)), a), 16); }},
        OpCase{"tanh", {10}, [](const Tensor& x, auto&) { return weighted_sum(numcore::tanh(x), 17); }},
        OpCase{"exp", {10}, [](const Tensor& x, auto&) { return weighted_sum(numcore::exp(x), 18); }},
        OpCase{"log", {10}, [](const Tensor& x, auto&) { return weighted_sum(numcore::log(x), 19); }, true},
        OpCase{"sqrt", {10}, [](const Tensor& x, auto&) { return weighted_sum(numcore::sqrt(x), 20); }, true},
        OpCase{"clamp", {10}, [](const Tensor& x, auto&) { return weighted_sum(clamp(scale(x, 0.5), -0.3, 0.3), 21); }},
        OpCase{"sum", {3, 3}, [](const Tensor& x, auto&) { return sum(mul(x, x)); }},
        OpCase{"mean", {3, 3}, [](const Tensor& x, auto&) { return mean(mul(x, x)); }},
        OpCase{"logsumexp_rows", {4, 5}, [](const Tensor& x, auto&) { return weighted_sum(logsumexp_rows(scale(x, 3)), 22); }},
        OpCase{"pick", {4, 3}, [](const Tensor& x, auto&) {
                 const std::vector<std::size_t> idx{2, 0, 1, 2};
                 return weighted_sum(pick(x, idx), 23);
               }},
        OpCase{"reshape", {2, 6}, [](const Tensor& x, auto&) { return weighted_sum(reshape(x, {3, 4}), 24); }},
        OpCase{"slice_rows", {5, 2}, [](const Tensor& x, auto&) { return weighted_sum(slice_rows(x, 1, 4), 25); }}),
    [](const ::testing::TestParamInfo<OpCase>& info) { return info.param.name; });

TEST(Properties, BackwardIsLinearInTheLoss) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor x0 = random_tensor({4, 3}, rng);
    const Tensor w = random_tensor({3, 2}, rng);
    auto l1 = [&](const Tensor& x) { return sum(numcore::tanh(matmul(x, w))); };
    auto l2 = [&](const Tensor& x) { return sum(mul(x, x)); };

    Tape t1;
    const Tensor a = t1.watch(x0);
    const Tensor g1 = t1.backward(l1(a)).wrt(a);
    Tape t2;
    const Tensor b = t2.watch(x0);
    const Tensor g2 = t2.backward(l2(b)).wrt(b);
    Tape t3;
    const Tensor c = t3.watch(x0);
    const Tensor g12 = t3.backward(add(l1(c), l2(c))).wrt(c);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      const double expect = g1[i] + g2[i];
      EXPECT_LE(std::abs(g12[i] - expect), 1e-12 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST(Properties, ForwardIndependentOfRecording) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({2, 1, 6, 6}, rng);
  const Tensor w = random_tensor({3, 1, 3, 3}, rng);
  const Tensor v = random_tensor({12, 4}, rng);
  auto net = [&](const Tensor& in) {
    Tensor h = relu(conv2d(in, w, Tensor(), {}));
    h = max_pool2d(h, 2, 2);
    h = reshape(h, {2, 12});
    return logsumexp_rows(numcore::tanh(matmul(h, v)));
  };
  const Tensor plain = net(x);
  Tape tape;
  const Tensor recorded = net(tape.watch(x));
  EXPECT_TRUE(recorded.requires_grad());
  EXPECT_TRUE(bitwise_equal(plain, recorded));
}

TEST(Tensor, StorageIs64ByteAligned) {
  std::vector<Tensor> keep;
  for (std::size_t n : {1, 3, 7, 17, 1000}) {
    keep.emplace_back(Shape{n});
    keep.push_back(Tensor(Shape{n}, std::vector<Real>(n, 1)).clone());
    for (const auto& t : keep) EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data().data()) % 64, 0u);
  }
}
