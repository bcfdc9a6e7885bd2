// Acceptance suite: one PASS/FAIL line per criterion. Oracles are computed
// here, independently of the library routine under test.
//
//   acceptance            run every criterion
//   acceptance 1 2 6      run a subset
//
// Result lines also go to acceptance_results.txt in the working directory.

#include <Eigen/Dense>
#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "etfw/attacks/attacks.hpp"
#include "etfw/geometry/geometry.hpp"
#include "etfw/harness/commands.hpp"
#include "etfw/model/model.hpp"
#include "etfw/numcore/ops.hpp"

using namespace etfw;
using numcore::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t({r, c});
  for (auto& v : t.mutable_data()) v = static_cast<Real>(u(rng));
  return t;
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
  return m;
}

Eigen::MatrixXd sigma(std::size_t k, double s) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(k, k, s * s / (1.0 - double(k)));
  m.diagonal().setConstant(s * s);
  return m;
}

double max_pair_cos(Eigen::MatrixXd w) {
  w.rowwise().normalize();
  const Eigen::MatrixXd g = w * w.transpose();
  double best = -2;
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = i + 1; j < g.cols(); ++j) best = std::max(best, g(i, j));
  return best;
}

// Structured determinant vs full-pivot LU.
Outcome criterion1() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> nd(1, 8);
  std::uniform_real_distribution<double> ab(-3, 3);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = nd(rng);
    const double a = ab(rng), b = ab(rng);
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(n, n, b);
    m.diagonal().setConstant(a);
    const double ref = m.fullPivLu().determinant();
    const double got = geometry::structured_det(n, a, b);
    worst = std::max(worst, std::abs(got - ref) / std::max(1e-300, std::abs(ref)));
  }
  return {worst < 1e-9, fmt::format("200 instances, max relative error {:.2e}", worst)};
}

// Factorization residuals and the simplex bound.
Outcome criterion2() {
  double worst = 0;
  std::size_t cases = 0;
  for (std::size_t k = 2; k <= 10; ++k) {
    for (std::size_t p = k - 1; p + 1 <= 17; ++p) {
      if (p == 0) continue;
      for (double s : {0.1, 1.0, 2.5}) {
        const Eigen::MatrixXd w = to_eigen(geometry::factor_gram(k, p, s));
        worst = std::max(worst, (w * w.transpose() - sigma(k, s)).norm());
        ++cases;
      }
    }
  }
  std::mt19937_64 rng(202);
  std::normal_distribution<double> nrm;
  std::uniform_int_distribution<std::size_t> pd(1, 12);
  double beaten = -1;  // largest (bound - max cos); must stay <= 1e-12
  for (std::size_t k = 2; k <= 10; ++k) {
    for (int t = 0; t < 100; ++t) {
      Eigen::MatrixXd w(k, pd(rng));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nrm(rng);
      beaten = std::max(beaten, 1.0 / (1.0 - double(k)) - max_pair_cos(w));
    }
  }
  return {worst < 1e-8 && beaten <= 1e-12,
          fmt::format("{} factorizations, max ||WW^T-S||_F {:.2e}; 900 random W, bound never beaten "
                      "(worst margin {:.3e})",
                      cases, worst, beaten)};
}

// Max-min angle search reaches 1/(1-K).
Outcome criterion3() {
  const std::vector<std::pair<std::size_t, std::size_t>> cases{{2, 2}, {3, 2}, {4, 3}, {5, 4}, {10, 9}};
  geometry::SearchOptions opt;
  opt.restarts = 20;
  bool ok = true;
  std::string parts;
  for (const auto& [k, p] : cases) {
    const auto r = geometry::max_min_angle_search(k, p, 303, 3000, opt);
    const double err = std::abs(max_pair_cos(to_eigen(r.weights)) - 1.0 / (1.0 - double(k)));
    ok = ok && err < 1e-3;
    parts += fmt::format(" ({},{}):{:.1e}", k, p, err);
  }
  return {ok, "|cos* - 1/(1-K)|" + parts};
}

// Central differences of total_loss against tape gradients.
Outcome criterion4() {
  using model::Activation;
  double worst = 0;
  std::string where;
  std::size_t tensors = 0;
  for (Activation act : {Activation::tanh, Activation::relu}) {
    model::ArchSpec cnn = model::cnn4_arch({1, 16, 16}, 3, 4, act);
    cnn.hidden = {2, 2, 3, 3};
    for (const model::ArchSpec& arch : {model::mlp_arch(5, {6, 4}, 3, 4, act), cnn}) {
      for (auto norm : {geometry::PenaltyNorm::squared_frobenius, geometry::PenaltyNorm::frobenius}) {
        for (std::uint64_t seed = 0; seed < 2; ++seed) {
          model::ModelParams p = model::init_params(arch, 0.5, seed);
          for (auto& v : p.get("classifier.W").mutable_data()) v *= Real(1.7);
          std::mt19937_64 rng(seed + 50);
          const Tensor x = random_matrix(3, arch.input_size(), rng, 0, 1);
          const std::vector<std::size_t> y{0, 2, 1};
          model::TrainConfig cfg;
          cfg.alpha = 3;
          cfg.s = 0.5;
          cfg.penalty_norm = norm;

          numcore::Tape tape;
          const model::ModelParams w = model::watch(tape, p);
          const Tensor xw = tape.watch(x);
          const auto g = tape.backward(model::total_loss(w, xw, y, cfg));
          auto compare = [&](const Tensor& analytic, const std::function<double(const Tensor&)>& f,
                             const Tensor& at, const std::string& what) {
            ++tensors;
            Tensor probe = at.clone();
            for (std::size_t i = 0; i < at.size(); ++i) {
              const Real orig = at[i];
              const double h = 1e-6;
              probe.mutable_data()[i] = orig + Real(h);
              const double up = f(probe);
              probe.mutable_data()[i] = orig - Real(h);
              const double down = f(probe);
              probe.mutable_data()[i] = orig;
              const double num = (up - down) / (2 * h);
              const double err = std::abs(analytic[i] - num) / std::max(1.0, std::abs(double(analytic[i])));
              if (err > worst) {
                worst = err;
                where = fmt::format("{} of {}", what, arch.id());
              }
            }
          };
          for (std::size_t i = 0; i < p.tensors.size(); ++i) {
            compare(g.wrt(w.tensors[i]),
                    [&](const Tensor& t) {
                      model::ModelParams q = p;
                      q.tensors[i] = t;
                      return model::total_loss(q, x, y, cfg).item();
                    },
                    p.tensors[i], p.names[i]);
          }
          compare(g.wrt(xw), [&](const Tensor& t) { return model::total_loss(p, t, y, cfg).item(); }, x,
                  "input");
        }
      }
    }
  }
  return {worst < 1e-5, fmt::format("{} tensors, max relative error {:.2e} ({})", tensors, worst, where)};
}

double exit_distance(const attacks::AffineClassifier& m, const Tensor& x, std::size_t y) {
  const Eigen::MatrixXd w = to_eigen(m.weights());
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < w.rows(); ++j) {
    if (std::size_t(j) == y) continue;
    const Eigen::RowVectorXd d = w.row(Eigen::Index(y)) - w.row(j);
    double f = m.bias().empty() ? 0.0 : m.bias()[y] - m.bias()[std::size_t(j)];
    for (Eigen::Index c = 0; c < d.size(); ++c) f += d(c) * x[std::size_t(c)];
    best = std::min(best, f / d.norm());
  }
  return best;
}

// Attack oracles on affine models and the ball/box invariant.
Outcome criterion5() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<std::size_t> kd(2, 6);
  double df_worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = kd(rng), d = kd(rng) + 1;
    const attacks::AffineClassifier m(random_matrix(k, d, rng, -1, 1),
                                      numcore::reshape(random_matrix(1, k, rng, -1, 1), {k}));
    const Tensor x = random_matrix(1, d, rng, 0, 1);
    attacks::AttackConfig c = attacks::deepfool_preset(attacks::Norm::l2, attacks::kUnbounded);
    c.box_min = -attacks::kUnbounded;
    c.box_max = attacks::kUnbounded;
    const auto r = attacks::deepfool(m, x, c);
    const double exact = exit_distance(m, x, m.predict(x)[0]);
    df_worst = std::max(df_worst, r.success[0] ? std::abs(r.perturbation_norm[0] / exact - 1) : 1.0);
  }

  double cw_margin = std::numeric_limits<double>::infinity();  // min over (norm - bound)
  std::size_t cw_found = 0;
  for (int t = 0; t < 20; ++t) {
    const attacks::AffineClassifier m(random_matrix(3, 4, rng, -1, 1), Tensor());
    const Tensor x = random_matrix(1, 4, rng, 0.3, 0.7);
    const auto y = m.predict(x);
    attacks::AttackConfig c = attacks::cw_l2_preset(3);
    c.steps = 200;
    c.cw_search_steps = 6;
    attacks::CwTrace trace;
    const auto r = attacks::cw_l2(m, x, y, c, &trace);
    const double bound = exit_distance(m, x, y[0]);
    for (double cand : trace.candidate_norms[0]) cw_margin = std::min(cw_margin, cand - bound);
    if (r.success[0]) {
      ++cw_found;
      cw_margin = std::min(cw_margin, r.perturbation_norm[0] - bound);
    }
  }

  double excess = 0;
  std::uniform_real_distribution<double> eps_dist(0, 0.5);
  for (int t = 0; t < 1000; ++t) {
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
      c.steps = 1 + t % 7;
      c.step_size = 0.07;
      c.seed = std::uint64_t(t);
      r = attacks::pgd(m, x, y, c);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = r.x_adv[i];
      const double lo = x[i] - Real(eps), hi = x[i] + Real(eps);
      excess = std::max({excess, a - hi, lo - a, -a, a - 1});
    }
  }
  const bool ok = df_worst <= 0.025 && cw_margin >= -1e-3 && excess == 0;
  return {ok, fmt::format("DeepFool max relative error {:.4f}; C&W min (norm - bound) {:.2e} over {} "
                          "successes; PGD/FGSM max excess {:.1e}",
                          df_worst, cw_margin, cw_found, excess)};
}

// Relu features cannot reach the class pointing into the negative quadrant.
Outcome criterion6() {
  const model::DemoResult demo = model::relu_failure_demo();
  constexpr double deg = M_PI / 180;
  const double head[3] = {90, 330, 210};
  std::array<std::size_t, 3> relu{}, tanh{};
  std::mt19937_64 rng(606);
  std::normal_distribution<double> z(0, 3);
  for (int t = 0; t < 100000; ++t) {
    const double a = z(rng), b = z(rng);
    auto winner = [&](double f0, double f1) {
      std::size_t best = 0;
      double top = -1e300;
      for (std::size_t c = 0; c < 3; ++c) {
        const double l = std::cos(head[c] * deg) * f0 + std::sin(head[c] * deg) * f1;
        if (l > top) {
          top = l;
          best = c;
        }
      }
      return best;
    };
    ++relu[winner(std::max(a, 0.0), std::max(b, 0.0))];
    ++tanh[winner(std::tanh(a), std::tanh(b))];
  }
  const bool ok = demo.relu.predictions[2] == 0 && relu[2] == 0 && demo.tanh.predictions[0] > 0 &&
                  demo.tanh.predictions[1] > 0 && demo.tanh.predictions[2] > 0 && tanh[0] > 0 &&
                  tanh[1] > 0 && tanh[2] > 0;
  return {ok, fmt::format("grid relu {}/{}/{} tanh {}/{}/{}; sampled relu {}/{}/{} tanh {}/{}/{}",
                          demo.relu.predictions[0], demo.relu.predictions[1], demo.relu.predictions[2],
                          demo.tanh.predictions[0], demo.tanh.predictions[1], demo.tanh.predictions[2],
                          relu[0], relu[1], relu[2], tanh[0], tanh[1], tanh[2])};
}

// Scaled MNIST experiment.
struct MnistRun {
  double clean_test = 0;   // full test set
  double pgd40 = 0;        // robust accuracy on the first eval.limit test samples
  double residual_ratio = 0;
  std::string checkpoint, report_dir;
};

const char* kMnistBase =
    "dataset.name = mnist\n"
    "dataset.train_limit = 10000\n"
    "model.family = cnn4\n"
    "model.hidden = {channels}\n"
    "model.p = 64\n"
    "train.epochs = 20\n"
    "train.batch_size = 128\n"
    "train.seed = {seed}\n"
    "log.train_eval_limit = 1000\n"
    "log.test_eval_limit = 1000\n"
    "eval.limit = 1000\n"
    "attack.0.preset = pgd40\n"
    "output.dir = {dir}\n";

harness::RunConfig mnist_config(bool penalized, std::uint64_t seed, const fs::path& dir) {
  std::string text = fmt::format(fmt::runtime(kMnistBase), fmt::arg("channels", "16,16,32,32"),
                                 fmt::arg("seed", seed), fmt::arg("dir", dir.string()));
  text += penalized ? "train.alpha = 100\ntrain.penalty_norm = frobenius\nmodel.activation = tanh\n"
                    : "train.alpha = 0\nmodel.activation = relu\n";
  return harness::parse_config(text);
}

MnistRun run_mnist(const harness::RunConfig& cfg, std::ostream& log) {
  MnistRun out;
  const harness::TrainArtifacts art = harness::run_train(cfg, log);
  const harness::EvalReport rep = harness::run_attack(cfg, art.checkpoint, log);
  out.pgd40 = rep.attacks.at(0).robust_accuracy;
  const harness::DataSplits data = harness::load_data(cfg.dataset);
  out.clean_test = attacks::clean_accuracy(attacks::NetworkClassifier(art.result.params), data.test);
  const Eigen::MatrixXd w = to_eigen(art.result.params.classifier_W());
  const Eigen::MatrixXd s = sigma(w.rows(), cfg.train.s);
  out.residual_ratio = (w * w.transpose() - s).norm() / s.norm();
  out.checkpoint = art.checkpoint;
  out.report_dir = cfg.output_dir;
  return out;
}

fs::path work_dir() {
  const fs::path d = fs::temp_directory_path() / "etfw_acceptance";
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool mnist_available() {
  const char* root = std::getenv("ETFW_DATA_ROOT");
  return root && fs::exists(fs::path(root) / "mnist" / "train-images-idx3-ubyte");
}

Outcome criterion7() {
  if (!mnist_available()) return {false, "MNIST not found under $ETFW_DATA_ROOT/mnist"};
  std::ofstream log(work_dir() / "mnist.log");
  bool a = true, b = true, c = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const MnistRun pen = run_mnist(mnist_config(true, seed, work_dir() / fmt::format("pen{}", seed)), log);
    const MnistRun base = run_mnist(mnist_config(false, seed, work_dir() / fmt::format("base{}", seed)), log);
    a = a && pen.clean_test >= 0.95;
    b = b && pen.pgd40 - base.pgd40 >= 0.15;
    c = c && pen.residual_ratio < 0.1;
    detail += fmt::format(" | seed {}: clean {:.4f}, PGD40 {:.3f} vs baseline {:.3f} (clean {:.4f}), "
                          "residual {:.4f} ||S||",
                          seed, pen.clean_test, pen.pgd40, base.pgd40, base.clean_test, pen.residual_ratio);
    std::cout << "  criterion 7 progress: seed " << seed << " done" << std::endl;
  }
  return {a && b && c, fmt::format("(a) {} (b) {} (c) {}{}", a ? "ok" : "FAILED", b ? "ok" : "FAILED",
                                   c ? "ok" : "FAILED", detail)};
}

// Rerun seed 0 of the penalized model into the same directory and compare bytes.
Outcome criterion8() {
  if (!mnist_available()) return {false, "MNIST not found under $ETFW_DATA_ROOT/mnist"};
  const fs::path dir = work_dir() / "pen0";
  std::ofstream log(work_dir() / "determinism.log");
  const harness::RunConfig cfg = mnist_config(true, 0, dir);
  if (!fs::exists(dir / "report.json")) run_mnist(cfg, log);
  const std::string ckpt = slurp(dir / "checkpoint.bin"), report = slurp(dir / "report.json"),
                    train_report = slurp(dir / "train_report.json"), epochs = slurp(dir / "epochs.csv");
  run_mnist(cfg, log);
  const bool ok = ckpt == slurp(dir / "checkpoint.bin") && report == slurp(dir / "report.json") &&
                  train_report == slurp(dir / "train_report.json") && epochs == slurp(dir / "epochs.csv");
  return {ok, fmt::format("checkpoint {} bytes, report {} bytes: {}", ckpt.size(), report.size(),
                          ok ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"structured determinant matches LU (< 1 s)", criterion1},
      {"factor_gram residuals and simplex bound (< 5 s)", criterion2},
      {"max-min angle search reaches 1/(1-K) (< 2 min)", criterion3},
      {"total_loss gradients match finite differences (< 1 min)", criterion4},
      {"attack oracles on affine models (< 2 min)", criterion5},
      {"relu features leave the 210 degree class unreachable (< 1 s)", criterion6},
      {"scaled MNIST experiment, 3 seeds (target < 30 min)", criterion7},
      {"identical config and seed give identical bytes", criterion8},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  std::size_t failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    failed += !o.passed;
    const std::string line = fmt::format("[{}] criterion {}: {} ({:.2f} s) - {}", o.passed ? "PASS" : "FAIL",
                                         i + 1, criteria[i].first, secs, o.detail);
    std::cout << line << std::endl;
    std::ofstream("acceptance_results.txt", std::ios::app) << line << '\n';
  }
  return failed ? 1 : 0;
}
