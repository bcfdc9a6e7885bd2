#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace etfw::geometry {

/// One line of a verification table: worst residual against its tolerance.
struct OracleCheck {
  std::string name;
  bool passed = false;
  double residual = 0;
  double tolerance = 0;
  std::string detail;
};

/// Determinant by Gaussian elimination with partial pivoting (row-major n x n).
double lu_determinant(std::vector<double> a, std::size_t n);

/// structured_det vs lu_determinant on random (n <= 8, a, b), relative error.
OracleCheck check_structured_det(std::uint64_t seed, std::size_t trials = 200);

/// Eigenvalues of gram_target(K, s) vs {0, s^2 K/(K-1)} for K = 2..max_classes.
OracleCheck check_gram_spectrum(std::size_t max_classes = 12);

/// ||W W^T - sigma||_F for factor_gram over all K <= 10, K <= P+1 <= 17.
OracleCheck check_factor_residuals();

/// factor_gram and the search both reject K > P + 1.
OracleCheck check_infeasible_rejection();

/// Random unit-row W never beat the simplex bound 1/(1-K).
OracleCheck check_simplex_bound(std::uint64_t seed, std::size_t trials = 100,
                                std::size_t max_classes = 12);

/// max_min_angle_search reaches 1/(1-K) within 1e-3 on each (K, P).
OracleCheck check_search_convergence(const std::vector<std::pair<std::size_t, std::size_t>>& cases,
                                     std::uint64_t seed, std::size_t iterations = 3000,
                                     std::size_t restarts = 20);

}  // namespace etfw::geometry
