#include "etfw/attacks/attacks.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "etfw/numcore/ops.hpp"
#include "etfw/numcore/rng.hpp"
#include "etfw/numcore/tape.hpp"

namespace etfw::attacks {

namespace ops = numcore;

std::vector<std::size_t> Classifier::predict(const Tensor& x) const {
  return ops::argmax_rows(logits(x.detached()));
}

Tensor NetworkClassifier::logits(const Tensor& x) const { return model::logits(params_, x); }

AffineClassifier::AffineClassifier(Tensor weights, Tensor bias)
    : weights_(std::move(weights)), bias_(std::move(bias)) {
  if (weights_.rank() != 2) throw ops::ShapeError("AffineClassifier", weights_.shape(), "expected [K,d]");
  if (!bias_.empty() && bias_.shape() != numcore::Shape{weights_.dim(0)}) {
    throw ops::ShapeError("AffineClassifier", weights_.shape(), bias_.shape());
  }
}

Tensor AffineClassifier::logits(const Tensor& x) const {
  const std::size_t n = x.dim(0);
  const Tensor flat = x.rank() == 2 ? x : ops::reshape(x, {n, x.size() / n});
  Tensor out = ops::matmul(flat, ops::transpose(weights_));
  return bias_.empty() ? out : ops::add_row_bias(out, bias_);
}

AttackKind parse_kind(std::string_view s) {
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "pgd") return AttackKind::pgd;
  if (s == "deepfool") return AttackKind::deepfool;
  if (s == "cw") return AttackKind::cw;
  if (s == "mta") return AttackKind::mta;
  throw std::invalid_argument(fmt::format("unknown attack kind '{}'", s));
}

Norm parse_norm(std::string_view s) {
  if (s == "linf") return Norm::linf;
  if (s == "l2") return Norm::l2;
  throw std::invalid_argument(fmt::format("unknown norm '{}'", s));
}

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
    case AttackKind::deepfool: return "deepfool";
    case AttackKind::cw: return "cw";
    case AttackKind::mta: return "mta";
  }
  return "?";
}

std::string to_string(Norm n) { return n == Norm::linf ? "linf" : "l2"; }

void AttackConfig::validate() const {
  if (!(epsilon >= 0)) throw std::invalid_argument(fmt::format("attack epsilon {} < 0", epsilon));
  if (steps < 1) throw std::invalid_argument("attack steps must be >= 1");
  const bool stepped = kind == AttackKind::pgd || kind == AttackKind::mta || kind == AttackKind::cw;
  if (stepped && !(step_size > 0)) throw std::invalid_argument("attack step_size must be > 0");
  if ((kind == AttackKind::pgd || kind == AttackKind::mta || kind == AttackKind::fgsm) &&
      norm != Norm::linf) {
    throw std::invalid_argument(fmt::format("{} supports only the linf norm", to_string(kind)));
  }
  if (kind == AttackKind::cw && norm != Norm::l2) throw std::invalid_argument("cw requires norm l2");
  if (!(box_min < box_max)) throw std::invalid_argument("box_min must be below box_max");
  if (overshoot < 0) throw std::invalid_argument("overshoot must be >= 0");
  if (cw_search_steps < 1) throw std::invalid_argument("cw_search_steps must be >= 1");
}

AttackConfig pgd20() {
  AttackConfig c;
  c.name = "PGD20";
  c.epsilon = 8.0 / 255;
  c.steps = 20;
  c.step_size = 0.0031;
  return c;
}

AttackConfig pgd40() {
  AttackConfig c;
  c.name = "PGD40";
  return c;
}

AttackConfig mta100() {
  AttackConfig c = pgd20();
  c.name = "MTA100";
  c.kind = AttackKind::mta;
  c.steps = 100;
  return c;
}

AttackConfig mta200() {
  AttackConfig c = pgd40();
  c.name = "MTA200";
  c.kind = AttackKind::mta;
  c.steps = 200;
  return c;
}

AttackConfig cw_l2_preset(double epsilon) {
  AttackConfig c;
  c.name = "C&W";
  c.kind = AttackKind::cw;
  c.norm = Norm::l2;
  c.epsilon = epsilon;
  c.steps = 1000;
  c.step_size = 0.01;
  return c;
}

AttackConfig deepfool_preset(Norm norm, double epsilon) {
  AttackConfig c;
  c.name = "DeepFool";
  c.kind = AttackKind::deepfool;
  c.norm = norm;
  c.epsilon = epsilon;
  c.steps = 50;
  return c;
}

namespace {

std::size_t rows(const Tensor& x) { return x.dim(0); }
std::size_t row_size(const Tensor& x) { return x.size() / x.dim(0); }

Real sign(Real v) { return v > 0 ? Real(1) : v < 0 ? Real(-1) : Real(0); }

void check_batch(const Tensor& x, std::span<const std::size_t> y, const Classifier& model) {
  if (x.rank() < 2 || y.size() != x.dim(0)) {
    throw ops::ShapeError("attack", x.shape(), numcore::Shape{y.size()});
  }
  for (std::size_t label : y) {
    if (label >= model.num_classes()) {
      throw std::out_of_range(fmt::format("attack label {} outside 0..{}", label, model.num_classes() - 1));
    }
  }
}

void clamp_box(std::span<Real> v, double lo, double hi) {
  for (auto& e : v) e = static_cast<Real>(std::clamp<double>(e, lo, hi));
}

// Fills norms/success from the returned points.
void finish(AttackResult& r, const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
            Norm norm, double epsilon) {
  const std::size_t n = rows(x), d = row_size(x);
  const auto pred = model.predict(r.x_adv);
  r.success.assign(n, false);
  r.perturbation_norm.assign(n, 0);
  std::vector<Real> delta(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) delta[j] = r.x_adv[i * d + j] - x[i * d + j];
    r.perturbation_norm[i] = norm_of(delta, norm);
    r.success[i] = pred[i] != y[i] && r.perturbation_norm[i] <= epsilon + 1e-9;
  }
}

// Projects the rows of x_adv into the norm ball of radius eps around x.
void project_ball(Tensor& x_adv, const Tensor& x, Norm norm, double eps) {
  if (std::isinf(eps)) return;
  const std::size_t n = rows(x), d = row_size(x);
  auto a = x_adv.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    if (norm == Norm::linf) {
      for (std::size_t j = 0; j < d; ++j) {
        const Real c = x[i * d + j];
        a[i * d + j] = std::clamp(a[i * d + j], static_cast<Real>(c - eps), static_cast<Real>(c + eps));
      }
    } else {
      double sq = 0;
      for (std::size_t j = 0; j < d; ++j) sq += std::pow(a[i * d + j] - x[i * d + j], 2);
      const double len = std::sqrt(sq);
      if (len > eps) {
        // Shrink slightly below eps so rounding cannot leave the ball.
        const double f = eps / len * (1 - 1e-12);
        for (std::size_t j = 0; j < d; ++j) {
          a[i * d + j] = static_cast<Real>(x[i * d + j] + f * (a[i * d + j] - x[i * d + j]));
        }
      }
    }
  }
}

// Sign-gradient iterations shared by pgd and mta. targeted: descend toward `labels`.
Tensor sign_steps(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels,
                  const AttackConfig& cfg, bool targeted, std::size_t first_index,
                  std::uint64_t stream) {
  const std::size_t n = rows(x), d = row_size(x);
  const Real eps = static_cast<Real>(cfg.epsilon);
  Tensor adv = x.clone();
  if (cfg.random_start && cfg.epsilon > 0) {
    auto a = adv.mutable_data();
    std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng(derive_seed(derive_seed(cfg.seed, stream), first_index + i));
      for (std::size_t j = 0; j < d; ++j) a[i * d + j] += static_cast<Real>(u(rng));
    }
    clamp_box(a, cfg.box_min, cfg.box_max);
  }
  const Real step = static_cast<Real>(targeted ? -cfg.step_size : cfg.step_size);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const Tensor g = input_gradient(model, adv, labels);
    auto a = adv.mutable_data();
    for (std::size_t k = 0; k < a.size(); ++k) {
      const Real v = a[k] + step * sign(g[k]);
      const Real c = x[k];
      a[k] = std::clamp(v, c - eps, c + eps);
    }
    clamp_box(a, cfg.box_min, cfg.box_max);
  }
  return adv;
}

}  // namespace

double norm_of(std::span<const Real> v, Norm norm) {
  double out = 0;
  if (norm == Norm::linf) {
    for (Real e : v) out = std::max(out, static_cast<double>(std::abs(e)));
    return out;
  }
  for (Real e : v) out += static_cast<double>(e) * e;
  return std::sqrt(out);
}

Tensor input_gradient(const Classifier& model, const Tensor& x, std::span<const std::size_t> labels) {
  numcore::Tape tape;
  const Tensor xt = tape.watch(x.detached());
  const Tensor lg = model.logits(xt);
  const Tensor loss = ops::sum(ops::sub(ops::logsumexp_rows(lg), ops::pick(lg, labels)));
  if (!loss.requires_grad()) return Tensor(x.shape());
  return tape.backward(loss).wrt(xt);
}

AttackResult fgsm(const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
                  double epsilon, double box_min, double box_max) {
  check_batch(x, y, model);
  if (!(epsilon >= 0)) throw std::invalid_argument("fgsm epsilon < 0");
  const Tensor g = input_gradient(model, x, y);
  AttackResult r;
  r.x_adv = x.clone();
  auto a = r.x_adv.mutable_data();
  const Real eps = static_cast<Real>(epsilon);
  for (std::size_t k = 0; k < a.size(); ++k) a[k] = a[k] + eps * sign(g[k]);
  clamp_box(a, box_min, box_max);
  r.iterations_used.assign(rows(x), 1);
  finish(r, model, x, y, Norm::linf, epsilon);
  return r;
}

AttackResult pgd(const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
                 const AttackConfig& cfg, std::size_t first_index) {
  cfg.validate();
  check_batch(x, y, model);
  AttackResult r;
  r.x_adv = sign_steps(model, x, y, cfg, false, first_index, 0);
  r.iterations_used.assign(rows(x), cfg.steps);
  finish(r, model, x, y, Norm::linf, cfg.epsilon);
  return r;
}

AttackResult mta(const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
                 const AttackConfig& cfg, std::size_t first_index) {
  cfg.validate();
  check_batch(x, y, model);
  const std::size_t n = rows(x), d = row_size(x), k = model.num_classes();
  if (k < 2) throw std::invalid_argument("mta needs at least 2 classes");
  AttackResult best;
  best.x_adv = x.clone();
  best.success.assign(n, false);
  best.perturbation_norm.assign(n, 0);
  best.iterations_used.assign(n, 0);
  std::vector<std::size_t> targets(n);
  for (std::size_t r = 1; r < k; ++r) {
    for (std::size_t i = 0; i < n; ++i) targets[i] = (y[i] + r) % k;
    AttackResult run;
    run.x_adv = sign_steps(model, x, targets, cfg, true, first_index, r);
    finish(run, model, x, y, Norm::linf, cfg.epsilon);
    auto dst = best.x_adv.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      if (best.success[i]) continue;
      // Unsuccessful samples keep the latest run so x_adv is always an attacked point.
      std::copy_n(run.x_adv.data().begin() + i * d, d, dst.begin() + i * d);
      best.success[i] = run.success[i];
      best.perturbation_norm[i] = run.perturbation_norm[i];
      best.iterations_used[i] += cfg.steps;
    }
  }
  return best;
}

AttackResult deepfool(const Classifier& model, const Tensor& x, const AttackConfig& cfg,
                      std::optional<std::span<const std::size_t>> y) {
  cfg.validate();
  const std::size_t n = rows(x), d = row_size(x), k = model.num_classes();
  const std::vector<std::size_t> clean = model.predict(x);
  const std::vector<std::size_t> labels = y ? std::vector<std::size_t>(y->begin(), y->end()) : clean;
  check_batch(x, labels, model);

  AttackResult r;
  r.x_adv = x.clone();
  r.iterations_used.assign(n, 0);
  numcore::Shape one = x.shape();
  one[0] = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (clean[i] != labels[i]) continue;
    const std::size_t label = labels[i];
    std::vector<double> total(d, 0.0);
    Tensor xi(one, std::vector<Real>(x.data().begin() + i * d, x.data().begin() + (i + 1) * d));
    const Tensor x0 = xi.clone();
    for (std::size_t it = 0; it < cfg.steps; ++it) {
      numcore::Tape tape;
      const Tensor xt = tape.watch(xi);
      const Tensor lg = model.logits(xt);
      if (ops::argmax_rows(lg.detached())[0] != label) break;
      std::vector<Tensor> grads(k);
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t pick_j[1] = {j};
        const Tensor lj = ops::sum(ops::pick(lg, pick_j));
        grads[j] = lj.requires_grad() ? tape.backward(lj, true).wrt(xt) : Tensor(one);
      }
      double best_dist = std::numeric_limits<double>::infinity();
      std::vector<double> step;
      for (std::size_t j = 0; j < k; ++j) {
        if (j == label) continue;
        const double f = lg.at(0, j) - lg.at(0, label);
        std::vector<double> w(d);
        double n2 = 0, n1 = 0;
        for (std::size_t c = 0; c < d; ++c) {
          w[c] = grads[j][c] - grads[label][c];
          n2 += w[c] * w[c];
          n1 += std::abs(w[c]);
        }
        const double q = cfg.norm == Norm::l2 ? std::sqrt(n2) : n1;
        if (q == 0) continue;
        const double dist = std::abs(f) / q;
        if (dist < best_dist) {
          best_dist = dist;
          step.assign(d, 0);
          const double mag = std::abs(f);
          for (std::size_t c = 0; c < d; ++c) {
            step[c] = cfg.norm == Norm::l2 ? mag * w[c] / n2 : mag * sign(static_cast<Real>(w[c])) / n1;
          }
        }
      }
      r.iterations_used[i] = it + 1;
      if (step.empty()) break;  // flat logits: no boundary in reach
      auto xd = xi.mutable_data();
      for (std::size_t c = 0; c < d; ++c) {
        total[c] += step[c];
        xd[c] = static_cast<Real>(x0[c] + (1 + cfg.overshoot) * total[c]);
      }
      clamp_box(xd, cfg.box_min, cfg.box_max);
    }
    std::copy(xi.data().begin(), xi.data().end(), r.x_adv.mutable_data().begin() + i * d);
  }
  project_ball(r.x_adv, x, cfg.norm, cfg.epsilon);
  clamp_box(r.x_adv.mutable_data(), cfg.box_min, cfg.box_max);
  finish(r, model, x, labels, cfg.norm, cfg.epsilon);
  return r;
}

AttackResult cw_l2(const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
                   const AttackConfig& cfg, CwTrace* trace) {
  cfg.validate();
  check_batch(x, y, model);
  const std::size_t n = rows(x), d = row_size(x);
  const double lo_box = cfg.box_min, span_box = cfg.box_max - cfg.box_min;
  const bool bounded = std::isfinite(lo_box) && std::isfinite(span_box);
  // Bounded boxes use x = lo + span (tanh(w) + 1) / 2; unbounded ones optimize x directly.
  auto to_w = [&](Real v) {
    if (!bounded) return static_cast<double>(v);
    const double t = std::clamp((v - lo_box) / span_box * 2 - 1, -1 + 1e-6, 1 - 1e-6);
    return std::atanh(t);
  };

  std::vector<double> c_lo(n, 0), c_hi(n, 1e10), c(n, cfg.cw_initial_c);
  std::vector<double> best_norm(n, std::numeric_limits<double>::infinity());
  Tensor best = x.clone();
  if (trace) trace->candidate_norms.assign(n, {});
  Tensor w0(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) w0.mutable_data()[k] = static_cast<Real>(to_w(x[k]));

  std::vector<std::size_t> other(n);
  for (std::size_t round = 0; round < cfg.cw_search_steps; ++round) {
    Tensor w = w0.clone();
    std::vector<double> m(x.size(), 0), v(x.size(), 0);
    std::vector<bool> found(n, false);
    Tensor cvec({n});
    for (std::size_t i = 0; i < n; ++i) cvec.mutable_data()[i] = static_cast<Real>(c[i]);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
      numcore::Tape tape;
      const Tensor wt = tape.watch(w);
      const Tensor xa = bounded ? ops::add_scalar(ops::scale(ops::add_scalar(ops::tanh(wt), 1),
                                                             static_cast<Real>(span_box / 2)),
                                                  static_cast<Real>(lo_box))
                                : wt;
      const Tensor delta = ops::sub(xa, x);
      const Tensor lg = model.logits(xa);
      const auto preds = ops::argmax_rows(lg.detached());
      // Candidate bookkeeping on the current iterate, before the update.
      for (std::size_t i = 0; i < n; ++i) {
        Real top = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < lg.dim(1); ++j) {
          if (j != y[i] && lg.at(i, j) > top) top = lg.at(i, j), other[i] = j;
        }
        const bool adversarial = preds[i] != y[i] && lg.at(i, y[i]) - top <= -cfg.cw_confidence;
        if (!adversarial) continue;
        found[i] = true;
        const double nrm = norm_of(delta.detached().data().subspan(i * d, d), Norm::l2);
        if (trace) trace->candidate_norms[i].push_back(nrm);
        if (nrm < best_norm[i]) {
          best_norm[i] = nrm;
          std::copy_n(xa.data().begin() + i * d, d, best.mutable_data().begin() + i * d);
        }
      }
      const Tensor margin = ops::sub(ops::pick(lg, y), ops::pick(lg, other));
      const Tensor hinge = ops::clamp(margin, static_cast<Real>(-cfg.cw_confidence),
                                      std::numeric_limits<Real>::infinity());
      const Tensor loss = ops::add(ops::sum(ops::mul(delta, delta)), ops::sum(ops::mul(cvec, hinge)));
      if (!loss.requires_grad()) break;
      const Tensor g = tape.backward(loss).wrt(wt);
      auto wd = w.mutable_data();
      const double b1 = 0.9, b2 = 0.999;
      const double c1 = 1 - std::pow(b1, double(step)), c2 = 1 - std::pow(b2, double(step));
      for (std::size_t k = 0; k < wd.size(); ++k) {
        m[k] = b1 * m[k] + (1 - b1) * g[k];
        v[k] = b2 * v[k] + (1 - b2) * g[k] * g[k];
        wd[k] -= static_cast<Real>(cfg.step_size * (m[k] / c1) / (std::sqrt(v[k] / c2) + 1e-8));
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (found[i]) {
        c_hi[i] = std::min(c_hi[i], c[i]);
        c[i] = (c_lo[i] + c_hi[i]) / 2;
      } else {
        c_lo[i] = std::max(c_lo[i], c[i]);
        c[i] = c_hi[i] < 1e10 ? (c_lo[i] + c_hi[i]) / 2 : c[i] * 10;
      }
      c[i] = std::clamp(c[i], 1e-3, 1e10);
    }
  }
  AttackResult r;
  r.x_adv = best;
  clamp_box(r.x_adv.mutable_data(), cfg.box_min, cfg.box_max);
  r.iterations_used.assign(n, cfg.steps * cfg.cw_search_steps);
  finish(r, model, x, y, Norm::l2, cfg.epsilon);
  return r;
}

AttackResult run_attack(const Classifier& model, const Tensor& x, std::span<const std::size_t> y,
                        const AttackConfig& cfg, std::size_t first_index) {
  cfg.validate();
  switch (cfg.kind) {
    case AttackKind::fgsm: return fgsm(model, x, y, cfg.epsilon, cfg.box_min, cfg.box_max);
    case AttackKind::pgd: return pgd(model, x, y, cfg, first_index);
    case AttackKind::deepfool: return deepfool(model, x, cfg, y);
    case AttackKind::cw: return cw_l2(model, x, y, cfg);
    case AttackKind::mta: return mta(model, x, y, cfg, first_index);
  }
  throw std::logic_error("unreachable attack kind");
}

}  // namespace etfw::attacks
