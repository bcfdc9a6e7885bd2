#include "etfw/harness/verify.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <cmath>
#include <ostream>
#include <random>

#include "etfw/attacks/attacks.hpp"
#include "etfw/geometry/geometry.hpp"
#include "etfw/model/model.hpp"
#include "etfw/numcore/grad_check.hpp"
#include "etfw/numcore/ops.hpp"

namespace etfw::harness {

namespace {

using numcore::Tensor;

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t({r, c});
  for (auto& v : t.mutable_data()) v = static_cast<Real>(u(rng));
  return t;
}

OracleCheck check_gradients(bool quick) {
  OracleCheck out{"total_loss_gradients", true, 0, 1e-5, ""};
  using model::Activation;
  std::vector<model::ArchSpec> archs;
  for (Activation act : {Activation::tanh, Activation::relu}) {
    archs.push_back(model::mlp_arch(5, {6, 4}, 3, 4, act));
    if (!quick) {
      model::ArchSpec cnn = model::cnn4_arch({1, 16, 16}, 3, 4, act);
      cnn.hidden = {2, 2, 3, 3};
      archs.push_back(cnn);
    }
  }
  std::size_t checked = 0;
  for (const auto& arch : archs) {
    for (auto norm : {geometry::PenaltyNorm::squared_frobenius, geometry::PenaltyNorm::frobenius}) {
      model::ModelParams p = model::init_params(arch, 0.5, 0);
      for (auto& v : p.get("classifier.W").mutable_data()) v *= Real(1.7);
      std::mt19937_64 rng(50);
      const Tensor x = random_matrix(3, arch.input_size(), rng, 0, 1);
      const std::vector<std::size_t> y{0, 2, 1};
      model::TrainConfig cfg;
      cfg.alpha = 3;
      cfg.s = 0.5;
      cfg.penalty_norm = norm;
      auto record = [&](const numcore::GradCheckResult& r, const std::string& what) {
        ++checked;
        if (r.max_rel_error > out.residual) {
          out.residual = r.max_rel_error;
          out.detail = fmt::format("worst {} on {}", what, arch.id());
        }
      };
      for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        record(numcore::grad_check(
                   [&](const Tensor& t) {
                     model::ModelParams q = p;
                     q.tensors[i] = t;
                     return model::total_loss(q, x, y, cfg);
                   },
                   p.tensors[i]),
               p.names[i]);
      }
      record(numcore::grad_check([&](const Tensor& t) { return model::total_loss(p, t, y, cfg); }, x),
             "input");
    }
  }
  out.passed = out.residual < out.tolerance;
  out.detail = fmt::format("{} tensors; {}", checked, out.detail);
  return out;
}

double region_exit_distance(const attacks::AffineClassifier& m, const Tensor& x, std::size_t y) {
  const Tensor& w = m.weights();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < w.dim(0); ++j) {
    if (j == y) continue;
    double f = m.bias().empty() ? 0.0 : m.bias()[y] - m.bias()[j], n2 = 0;
    for (std::size_t c = 0; c < w.dim(1); ++c) {
      const double d = w.at(y, c) - w.at(j, c);
      f += d * x[c];
      n2 += d * d;
    }
    best = std::min(best, f / std::sqrt(n2));
  }
  return best;
}

OracleCheck check_deepfool(std::size_t trials) {
  OracleCheck out{"deepfool_l2_affine_distance", true, 0, 0.025, ""};
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> kd(2, 6);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t k = kd(rng), d = kd(rng) + 1;
    const attacks::AffineClassifier m(random_matrix(k, d, rng, -1, 1),
                                      numcore::reshape(random_matrix(1, k, rng, -1, 1), {k}));
    const Tensor x = random_matrix(1, d, rng, 0, 1);
    attacks::AttackConfig c = attacks::deepfool_preset(attacks::Norm::l2, attacks::kUnbounded);
    c.box_min = -attacks::kUnbounded;
    c.box_max = attacks::kUnbounded;
    const auto r = attacks::deepfool(m, x, c);
    const double exact = region_exit_distance(m, x, m.predict(x)[0]);
    const double rel = r.success[0] ? std::abs(r.perturbation_norm[0] / exact - 1) : 1.0;
    if (rel > out.residual) out.residual = rel;
  }
  out.passed = out.residual <= out.tolerance;
  out.detail = fmt::format("{} random affine models, relative error", trials);
  return out;
}

OracleCheck check_sign_attack_bounds(std::size_t trials) {
  OracleCheck out{"pgd_fgsm_ball_and_box", true, 0, 0, ""};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> eps_dist(0, 0.5);
  for (std::size_t t = 0; t < trials; ++t) {
    const attacks::AffineClassifier m(random_matrix(3, 5, rng, -1, 1), Tensor());
    const Tensor x = random_matrix(2, 5, rng, 0, 1);
    const auto y = m.predict(x);
    const double eps = eps_dist(rng);
    attacks::AttackResult r;
    if (t % 2) {
      r = attacks::fgsm(m, x, y, eps);
    } else {
      attacks::AttackConfig c;
      c.epsilon = eps;
      c.steps = 5;
      c.step_size = 0.1;
      c.seed = t;
      r = attacks::pgd(m, x, y, c);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = r.x_adv[i];
      const double lo = x[i] - static_cast<Real>(eps), hi = x[i] + static_cast<Real>(eps);
      const double excess = std::max({a - hi, lo - a, -a, a - 1, 0.0});
      out.residual = std::max(out.residual, excess);
    }
  }
  out.passed = out.residual == 0;
  out.detail = fmt::format("{} invocations, largest excess over eps-ball or [0,1]", trials);
  return out;
}

OracleCheck check_relu_demo() {
  const model::DemoResult demo = model::relu_failure_demo();
  OracleCheck out{"relu_unreachable_class", true, 0, 0, ""};
  std::size_t tanh_min = demo.tanh.predictions[0];
  for (std::size_t c : demo.tanh.predictions) tanh_min = std::min(tanh_min, c);
  out.residual = static_cast<double>(demo.relu.predictions[2]);
  out.passed = demo.relu.predictions[2] == 0 && tanh_min > 0;
  out.detail = fmt::format("relu counts {}/{}/{}, tanh counts {}/{}/{}", demo.relu.predictions[0],
                           demo.relu.predictions[1], demo.relu.predictions[2], demo.tanh.predictions[0],
                           demo.tanh.predictions[1], demo.tanh.predictions[2]);
  return out;
}

}  // namespace

std::vector<OracleCheck> run_verification(bool quick) {
  std::vector<OracleCheck> checks;
  checks.push_back(geometry::check_structured_det(1, quick ? 50 : 200));
  checks.push_back(geometry::check_gram_spectrum());
  checks.push_back(geometry::check_factor_residuals());
  checks.push_back(geometry::check_infeasible_rejection());
  checks.push_back(geometry::check_simplex_bound(2, quick ? 20 : 100));
  auto k3 = geometry::check_search_convergence({{3, 2}}, 3);
  k3.name += "_k3_p2";
  checks.push_back(k3);
  if (!quick) checks.push_back(geometry::check_search_convergence({{2, 2}, {4, 3}, {5, 4}, {10, 9}}, 3));
  checks.push_back(check_gradients(quick));
  checks.push_back(check_deepfool(quick ? 20 : 100));
  checks.push_back(check_sign_attack_bounds(quick ? 100 : 1000));
  checks.push_back(check_relu_demo());
  return checks;
}

void print_checks(std::ostream& out, const std::vector<OracleCheck>& checks) {
  out << "check,status,residual,tolerance,detail\n";
  for (const auto& c : checks) {
    fmt::print(out, "{},{},{:.3e},{:.3e},\"{}\"\n", c.name, c.passed ? "pass" : "FAIL", c.residual,
               c.tolerance, c.detail);
  }
}

}  // namespace etfw::harness
