#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "etfw/numcore/tensor.hpp"

namespace etfw::geometry {

using numcore::Tensor;

/// K > P + 1: no K equal-norm vectors in R^P reach pairwise cosine 1/(1-K).
class InfeasibleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Target Gram matrix for K class vectors of norm s that are pairwise
/// equiangular: diagonal s^2, off-diagonal s^2 / (1 - K).
struct GramTarget {
  std::size_t classes = 0;
  double row_norm = 0;
  Tensor sigma;  // [K,K]

  double diagonal() const { return row_norm * row_norm; }
  double off_diagonal() const {
    return row_norm * row_norm / (1.0 - static_cast<double>(classes));
  }
};

GramTarget gram_target(std::size_t classes, double row_norm);

/// Determinant of the n x n matrix with a on the diagonal and b elsewhere,
/// in closed form: (a + (n-1) b) (a - b)^(n-1).
double structured_det(std::size_t n, double a, double b);

/// A K x P matrix with W W^T equal to gram_target(K, s).sigma.
/// Eigendecomposes sigma, keeps the K-1 nonzero eigenpairs as V = U sqrt(L),
/// and zero-pads V to P columns. With a rotation seed, the padded factor is
/// multiplied by a seeded random orthogonal P x P matrix.
Tensor factor_gram(std::size_t classes, std::size_t features, double row_norm,
                   std::optional<std::uint64_t> rotation_seed = std::nullopt);

enum class PenaltyNorm { frobenius, squared_frobenius };

/// ||W W^T - sigma||_F (or its square) as a differentiable scalar.
Tensor penalty(const Tensor& weights, const GramTarget& target, PenaltyNorm norm);
double penalty_value(const Tensor& weights, const GramTarget& target, PenaltyNorm norm);

struct AngleStats {
  double min_pair_angle = 0;  // radians
  double max_pair_cos = 0;
  std::size_t closest_i = 0, closest_j = 0;
  std::vector<double> row_norms;
  std::optional<double> penalty_value;  // Frobenius, when a target was given
};

/// Pairwise angle statistics over normalized rows. Rows with norm below
/// 1e-12 are rejected.
AngleStats angle_stats(const Tensor& weights);
AngleStats angle_stats(const Tensor& weights, const GramTarget& target);

/// Largest cosine between distinct normalized rows.
double max_pair_cosine(const Tensor& weights);

struct SearchOptions {
  std::size_t restarts = 20;
  double initial_temperature = 10;
  double final_temperature = 1000;
  double step = 0.05;
  /// Extra iterations on the exact max-cosine subgradient after annealing.
  std::size_t polish_iterations = 500;
  /// 0 picks std::thread::hardware_concurrency().
  std::size_t threads = 0;
};

struct SearchResult {
  Tensor weights;  // unit rows
  double max_pair_cos = 0;
  std::size_t best_restart = 0;
};

/// Minimizes the largest pairwise cosine of K unit vectors in R^P by
/// projected gradient descent on a log-sum-exp smoothing of the max, with the
/// temperature annealed geometrically, followed by exact polishing. Best of
/// `options.restarts` seeded restarts.
SearchResult max_min_angle_search(std::size_t classes, std::size_t features, std::uint64_t seed,
                                  std::size_t iterations, const SearchOptions& options = {});

}  // namespace etfw::geometry
