#include "etfw/model/model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "etfw/numcore/ops.hpp"
#include "etfw/numcore/rng.hpp"

namespace etfw::model {

namespace ops = numcore;

const Tensor& ModelParams::get(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return tensors[i];
  }
  throw std::out_of_range(fmt::format("no parameter '{}' in {}", name, arch_id()));
}

Tensor& ModelParams::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

ModelParams init_params(const ArchSpec& arch, double s, std::uint64_t seed) {
  ModelParams p{arch, {}, {}};
  Rng rng(derive_seed(seed, "init"));
  for (auto& [name, shape] : param_layout(arch)) {
    Tensor t(shape);
    if (name == "classifier.W") {
      t = geometry::factor_gram(arch.classes, arch.features, s);
      std::normal_distribution<double> noise(0, 0.01 * s);
      for (auto& v : t.mutable_data()) v += static_cast<Real>(noise(rng));
    } else if (name == "act.slope") {
      t = Tensor(shape, kPreluInit);
    } else if (name.ends_with(".w")) {
      // conv [o,c,kh,kw] or dense [in,out]
      const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : t.mutable_data()) v = static_cast<Real>(u(rng));
    }
    p.names.push_back(name);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

ModelParams watch(numcore::Tape& tape, const ModelParams& params) {
  ModelParams out{params.arch, params.names, {}};
  out.tensors.reserve(params.tensors.size());
  for (const auto& t : params.tensors) out.tensors.push_back(tape.watch(t));
  return out;
}

std::vector<Tensor> collect(const numcore::Gradients& grads, const ModelParams& watched) {
  std::vector<Tensor> out;
  out.reserve(watched.tensors.size());
  for (const auto& t : watched.tensors) out.push_back(grads.wrt(t));
  return out;
}

namespace {

Tensor dense(const Tensor& h, const ModelParams& p, const std::string& prefix) {
  return ops::add_row_bias(ops::matmul(h, p.get(prefix + ".w")), p.get(prefix + ".b"));
}

Tensor final_activation(const Tensor& z, const ModelParams& p) {
  switch (p.arch.activation) {
    case Activation::tanh: return ops::tanh(z);
    case Activation::relu: return ops::relu(z);
    case Activation::prelu: return ops::prelu(z, p.get("act.slope"));
    case Activation::leaky_relu: return ops::leaky_relu(z, kLeakySlope);
  }
  throw std::logic_error("unreachable activation");
}

}  // namespace

Forward forward(const ModelParams& params, const Tensor& x) {
  const ArchSpec& a = params.arch;
  if (x.rank() < 2 || x.size() != x.dim(0) * a.input_size()) {
    throw ops::ShapeError("forward", x.shape(), "per-sample size differs from " + a.id());
  }
  const std::size_t n = x.dim(0);
  Tensor h;
  if (a.family == "cnn4") {
    h = ops::reshape(x, {n, a.input[0], a.input[1], a.input[2]});
    for (std::size_t l = 1; l <= 4; ++l) {
      h = ops::relu(ops::conv2d(h, params.get(fmt::format("conv{}.w", l)),
                                params.get(fmt::format("conv{}.b", l))));
      if (l % 2 == 0) h = ops::max_pool2d(h, 2, 2);
    }
    h = ops::reshape(h, {n, h.size() / n});
  } else {
    h = x.rank() == 2 ? x : ops::reshape(x, {n, a.input_size()});
    for (std::size_t l = 0; l < a.hidden.size(); ++l) {
      h = ops::relu(dense(h, params, fmt::format("dense{}", l)));
    }
  }
  Forward out;
  out.features = final_activation(dense(h, params, "fc"), params);
  if (a.activation == Activation::tanh && numcore::finite_check_enabled() &&
      tanh_feature_ratio(out.features) >= 1) {
    throw std::domain_error("forward: tanh feature norm reached sqrt(P)");
  }
  out.logits = ops::matmul(out.features, ops::transpose(params.classifier_W()));
  if (a.classifier_bias) out.logits = ops::add_row_bias(out.logits, params.get("classifier.b"));
  return out;
}

Tensor logits(const ModelParams& params, const Tensor& x) { return forward(params, x).logits; }

double tanh_feature_ratio(const Tensor& features) {
  const std::size_t n = features.dim(0), p = features.dim(1);
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0;
    for (std::size_t j = 0; j < p; ++j) sq += features[i * p + j] * features[i * p + j];
    worst = std::max(worst, std::sqrt(sq / static_cast<double>(p)));
  }
  return worst;
}

std::size_t region_classify(const Tensor& weights, std::span<const Real> f) {
  const std::size_t k = weights.dim(0), p = weights.dim(1);
  if (f.size() != p) throw ops::ShapeError("region_classify", weights.shape(), Shape{f.size()});
  const auto w = weights.data();
  auto margin = [&](std::size_t i, std::size_t j) {
    Real m = 0;
    for (std::size_t c = 0; c < p; ++c) m += (w[i * p + c] - w[j * p + c]) * f[c];
    return m;
  };
  for (std::size_t i = 0; i < k; ++i) {
    bool inside = true;
    for (std::size_t j = 0; j < k && inside; ++j) inside = j == i || margin(i, j) >= 0;
    if (inside) return i;
  }
  // Rounding can leave f outside every region; fall back to the largest score.
  std::size_t best = 0;
  Real best_score = -std::numeric_limits<Real>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    Real s = 0;
    for (std::size_t c = 0; c < p; ++c) s += w[i * p + c] * f[c];
    if (s > best_score) best_score = s, best = i;
  }
  return best;
}

std::vector<std::size_t> region_classify_rows(const Tensor& weights, const Tensor& features) {
  const std::size_t n = features.dim(0), p = features.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = region_classify(weights, features.data().subspan(i * p, p));
  }
  return out;
}

Tensor sce_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0)) {
    throw ops::ShapeError("sce_loss", logits.shape(), Shape{labels.size()});
  }
  for (std::size_t y : labels) {
    if (y >= logits.dim(1)) {
      throw std::out_of_range(fmt::format("sce_loss: label {} outside 0..{}", y, logits.dim(1) - 1));
    }
  }
  return ops::mean(ops::sub(ops::logsumexp_rows(logits), ops::pick(logits, labels)));
}

Tensor total_loss(const ModelParams& params, const Tensor& x, std::span<const std::size_t> labels,
                  const TrainConfig& cfg) {
  const Tensor sce = sce_loss(forward(params, x).logits, labels);
  if (cfg.alpha == 0) return sce;
  const auto target = geometry::gram_target(params.arch.classes, cfg.s);
  return ops::add(sce, ops::scale(geometry::penalty(params.classifier_W(), target, cfg.penalty_norm),
                                  static_cast<Real>(cfg.alpha)));
}

Adam::Adam(const ModelParams& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& t : params.tensors) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void Adam::step(ModelParams& params, const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params.tensors.size() || m_.size() != params.tensors.size()) {
    throw std::invalid_argument("adam: gradient count differs from parameter count");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params.tensors[i].shape() || m_[i].size() != grads[i].size()) {
      throw ops::ShapeError("adam_step", params.tensors[i].shape(), grads[i].shape());
    }
  }
  ++t_;
  const double c1 = 1 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto p = params.tensors[i].mutable_data();
    const auto g = grads[i].data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1 - beta2_) * g[j] * g[j];
      p[j] -= static_cast<Real>(lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_));
    }
  }
}

DemoResult relu_failure_demo(std::size_t grid) {
  constexpr double deg = 3.14159265358979323846 / 180;
  DemoResult r;
  r.weights = Tensor({3, 2});
  {
    auto w = r.weights.mutable_data();
    const double headings[3] = {90, 330, 210};
    for (std::size_t i = 0; i < 3; ++i) {
      w[2 * i] = static_cast<Real>(std::cos(headings[i] * deg));
      w[2 * i + 1] = static_cast<Real>(std::sin(headings[i] * deg));
    }
  }
  r.relu = {std::vector<std::size_t>(3, 0), std::vector<double>(3, 0)};
  r.tanh = r.relu;
  std::vector<std::size_t> per_class(3, 0);
  for (std::size_t a = 0; a < grid; ++a) {
    for (std::size_t b = 0; b < grid; ++b) {
      const double step = grid > 1 ? 6.0 / static_cast<double>(grid - 1) : 0;
      const Real z[2] = {static_cast<Real>(-3 + step * a), static_cast<Real>(-3 + step * b)};
      const std::size_t label = region_classify(r.weights, z);
      ++per_class[label];
      const Real fr[2] = {std::max<Real>(z[0], 0), std::max<Real>(z[1], 0)};
      const Real ft[2] = {std::tanh(z[0]), std::tanh(z[1])};
      const std::size_t pr = region_classify(r.weights, fr);
      const std::size_t pt = region_classify(r.weights, ft);
      ++r.relu.predictions[pr];
      ++r.tanh.predictions[pt];
      if (pr == label) r.relu.accuracy[label] += 1;
      if (pt == label) r.tanh.accuracy[label] += 1;
      ++r.samples;
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    if (per_class[c]) {
      r.relu.accuracy[c] /= static_cast<double>(per_class[c]);
      r.tanh.accuracy[c] /= static_cast<double>(per_class[c]);
    }
  }
  const Real origin[2] = {0, 0};
  r.origin_class = region_classify(r.weights, origin);
  return r;
}

}  // namespace etfw::model
