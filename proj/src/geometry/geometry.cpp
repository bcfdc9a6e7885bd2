#include "etfw/geometry/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

#include "etfw/numcore/ops.hpp"
#include "etfw/numcore/rng.hpp"

namespace etfw::geometry {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_eigen(const Tensor& t) {
  if (t.rank() != 2) throw numcore::ShapeError("geometry", t.shape(), "expected a matrix");
  Matrix m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.size(); ++i) m.data()[i] = t[i];
  return m;
}

Tensor from_eigen(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<Real>(m.data()[i]);
  return t;
}

void check_feasible(std::size_t classes, std::size_t features) {
  if (classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (classes > features + 1) {
    throw InfeasibleError("K = " + std::to_string(classes) + " exceeds P + 1 = " +
                          std::to_string(features + 1));
  }
}

double max_offdiag(const Matrix& gram, std::size_t* bi = nullptr, std::size_t* bj = nullptr) {
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < gram.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < gram.cols(); ++j) {
      if (gram(i, j) > best) {
        best = gram(i, j);
        if (bi) *bi = static_cast<std::size_t>(i);
        if (bj) *bj = static_cast<std::size_t>(j);
      }
    }
  }
  return best;
}

Matrix normalized_rows(const Matrix& w) {
  Matrix out = w;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double n = w.row(i).norm();
    if (n < 1e-12) throw std::invalid_argument("row " + std::to_string(i) + " has zero norm");
    out.row(i) /= n;
  }
  return out;
}

}  // namespace

GramTarget gram_target(std::size_t classes, double row_norm) {
  if (classes < 2) throw std::invalid_argument("gram_target: need K >= 2");
  if (!(row_norm > 0)) throw std::invalid_argument("gram_target: need s > 0");
  GramTarget g{classes, row_norm, Tensor({classes, classes})};
  auto d = g.sigma.mutable_data();
  for (std::size_t i = 0; i < classes; ++i) {
    for (std::size_t j = 0; j < classes; ++j) {
      d[i * classes + j] = static_cast<Real>(i == j ? g.diagonal() : g.off_diagonal());
    }
  }
  return g;
}

double structured_det(std::size_t n, double a, double b) {
  if (n == 0) return 1.0;
  return (a + b * static_cast<double>(n) - b) * std::pow(a - b, static_cast<double>(n - 1));
}

Tensor factor_gram(std::size_t classes, std::size_t features, double row_norm,
                   std::optional<std::uint64_t> rotation_seed) {
  check_feasible(classes, features);
  const GramTarget target = gram_target(classes, row_norm);
  const Matrix sigma = to_eigen(target.sigma);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  if (eig.info() != Eigen::Success) throw std::runtime_error("factor_gram: eigensolver failed");

  // Ascending eigenvalues; index 0 is the null direction (the all-ones vector).
  const Eigen::Index k = static_cast<Eigen::Index>(classes);
  Matrix w = Matrix::Zero(k, static_cast<Eigen::Index>(features));
  for (Eigen::Index c = 1; c < k; ++c) {
    const double lambda = std::max(0.0, eig.eigenvalues()(c));
    w.col(c - 1) = eig.eigenvectors().col(c) * std::sqrt(lambda);
  }
  if (rotation_seed) {
    Rng rng(*rotation_seed);
    std::normal_distribution<double> normal;
    Matrix g(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(features));
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    const Matrix q = qr.householderQ();
    w = w * q;
  }
  return from_eigen(w);
}

Tensor penalty(const Tensor& weights, const GramTarget& target, PenaltyNorm norm) {
  if (weights.rank() != 2 || weights.dim(0) != target.classes) {
    throw numcore::ShapeError("penalty", weights.shape(), target.sigma.shape());
  }
  const Tensor diff = numcore::sub(numcore::matmul(weights, numcore::transpose(weights)),
                                   target.sigma);
  const Tensor squared = numcore::sum(numcore::mul(diff, diff));
  return norm == PenaltyNorm::squared_frobenius ? squared : numcore::sqrt(squared);
}

double penalty_value(const Tensor& weights, const GramTarget& target, PenaltyNorm norm) {
  return penalty(weights.detached(), target, norm).item();
}

double max_pair_cosine(const Tensor& weights) {
  const Matrix w = normalized_rows(to_eigen(weights));
  return max_offdiag(w * w.transpose());
}

AngleStats angle_stats(const Tensor& weights) {
  const Matrix raw = to_eigen(weights);
  if (raw.rows() < 2) throw std::invalid_argument("angle_stats: need at least 2 rows");
  AngleStats stats;
  for (Eigen::Index i = 0; i < raw.rows(); ++i) stats.row_norms.push_back(raw.row(i).norm());
  const Matrix w = normalized_rows(raw);
  stats.max_pair_cos = max_offdiag(w * w.transpose(), &stats.closest_i, &stats.closest_j);
  stats.min_pair_angle = std::acos(std::clamp(stats.max_pair_cos, -1.0, 1.0));
  return stats;
}

AngleStats angle_stats(const Tensor& weights, const GramTarget& target) {
  AngleStats stats = angle_stats(weights);
  stats.penalty_value = penalty_value(weights, target, PenaltyNorm::frobenius);
  return stats;
}

namespace {

struct RestartOutcome {
  Matrix w;
  double max_cos;
};

void project_and_normalize(Matrix& w, const Matrix& grad, double step) {
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const auto g = grad.row(i);
    const Eigen::RowVectorXd tangent = g - g.dot(w.row(i)) * w.row(i);
    w.row(i) -= step * tangent;
    w.row(i).normalize();
  }
}

RestartOutcome run_restart(std::size_t classes, std::size_t features, std::uint64_t seed,
                           std::size_t iterations, const SearchOptions& opt) {
  const Eigen::Index k = static_cast<Eigen::Index>(classes);
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Matrix w(k, static_cast<Eigen::Index>(features));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (w.row(i).norm() < 1e-12) w(i, 0) = 1;
    w.row(i).normalize();
  }

  // Smoothed phase: f = (1/T) log sum_{i<j} exp(T c_ij); df/dw_i = sum_j p_ij w_j.
  Matrix grad(k, w.cols());
  Matrix weights(k, k);
  for (std::size_t it = 0; it < iterations; ++it) {
    const double frac = iterations > 1 ? static_cast<double>(it) / (iterations - 1) : 1.0;
    const double temp = opt.initial_temperature *
                        std::pow(opt.final_temperature / opt.initial_temperature, frac);
    const Matrix gram = w * w.transpose();
    const double top = max_offdiag(gram);
    double z = 0;
    weights.setZero();
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = i + 1; j < k; ++j) {
        const double e = std::exp(temp * (gram(i, j) - top));
        weights(i, j) = weights(j, i) = e;
        z += e;
      }
    }
    weights /= z;
    grad.noalias() = weights * w;
    project_and_normalize(w, grad, opt.step);
  }

  // Polishing: push apart the nearly-active pairs, keep only improving steps.
  double best = max_offdiag(w * w.transpose());
  double step = opt.step * 0.1;
  for (std::size_t it = 0; it < opt.polish_iterations && step > 1e-12; ++it) {
    const Matrix gram = w * w.transpose();
    grad.setZero();
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = i + 1; j < k; ++j) {
        if (gram(i, j) >= best - 1e-9) {
          grad.row(i) += w.row(j);
          grad.row(j) += w.row(i);
        }
      }
    }
    Matrix trial = w;
    project_and_normalize(trial, grad, step);
    const double value = max_offdiag(trial * trial.transpose());
    if (value < best) {
      w = std::move(trial);
      best = value;
    } else {
      step *= 0.5;
    }
  }
  return {std::move(w), best};
}

}  // namespace

SearchResult max_min_angle_search(std::size_t classes, std::size_t features, std::uint64_t seed,
                                  std::size_t iterations, const SearchOptions& options) {
  check_feasible(classes, features);
  const std::size_t restarts = std::max<std::size_t>(1, options.restarts);
  std::vector<RestartOutcome> outcomes(restarts);
  std::size_t threads = options.threads ? options.threads : std::thread::hardware_concurrency();
  threads = std::clamp<std::size_t>(threads, 1, restarts);

  auto worker = [&](std::size_t first) {
    for (std::size_t r = first; r < restarts; r += threads) {
      outcomes[r] = run_restart(classes, features, derive_seed(seed, r), iterations, options);
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker, t);
  }

  std::size_t best = 0;
  for (std::size_t r = 1; r < restarts; ++r) {
    if (outcomes[r].max_cos < outcomes[best].max_cos) best = r;
  }
  return {from_eigen(outcomes[best].w), outcomes[best].max_cos, best};
}

}  // namespace etfw::geometry
