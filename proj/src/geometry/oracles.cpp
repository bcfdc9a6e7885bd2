#include "etfw/geometry/oracles.hpp"

#include <fmt/format.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "etfw/geometry/geometry.hpp"
#include "etfw/numcore/ops.hpp"
#include "etfw/numcore/rng.hpp"

namespace etfw::geometry {

double lu_determinant(std::vector<double> a, std::size_t n) {
  double det = 1;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t pivot = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r * n + c]) > std::abs(a[pivot * n + c])) pivot = r;
    }
    if (a[pivot * n + c] == 0) return 0;
    if (pivot != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[pivot * n + k]);
      det = -det;
    }
    det *= a[c * n + c];
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / a[c * n + c];
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
    }
  }
  return det;
}

OracleCheck check_structured_det(std::uint64_t seed, std::size_t trials) {
  OracleCheck out{"structured_det_vs_lu", true, 0, 1e-9, ""};
  Rng rng(derive_seed(seed, "structured_det"));
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  std::uniform_real_distribution<double> entry(-3, 3);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = dim(rng);
    const double a = entry(rng), b = entry(rng);
    std::vector<double> m(n * n, b);
    for (std::size_t i = 0; i < n; ++i) m[i * n + i] = a;
    const double closed = structured_det(n, a, b);
    const double lu = lu_determinant(m, n);
    const double rel = std::abs(closed - lu) / std::max(std::abs(lu), 1e-300);
    if (rel > out.residual) {
      out.residual = rel;
      out.detail = fmt::format("n={} a={:.6g} b={:.6g}", n, a, b);
    }
  }
  out.passed = out.residual < out.tolerance;
  return out;
}

OracleCheck check_gram_spectrum(std::size_t max_classes) {
  OracleCheck out{"gram_target_spectrum", true, 0, 1e-9, ""};
  for (double s : {0.1, 1.0, 2.5}) {
    for (std::size_t k = 2; k <= max_classes; ++k) {
      const GramTarget g = gram_target(k, s);
      Eigen::MatrixXd m(k, k);
      for (std::size_t i = 0; i < k * k; ++i) m(i / k, i % k) = g.sigma[i];
      const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues();
      const double top = s * s * k / (k - 1.0);
      double err = std::abs(ev(0));
      for (Eigen::Index i = 1; i < ev.size(); ++i) err = std::max(err, std::abs(ev(i) - top));
      if (err > out.residual) {
        out.residual = err;
        out.detail = fmt::format("K={} s={}", k, s);
      }
    }
  }
  out.passed = out.residual < out.tolerance;
  return out;
}

OracleCheck check_factor_residuals() {
  OracleCheck out{"factor_gram_residual", true, 0, 1e-8, ""};
  for (double s : {0.1, 1.0}) {
    for (std::size_t k = 2; k <= 10; ++k) {
      for (std::size_t p = k - 1; p <= 16; ++p) {
        const Tensor w = factor_gram(k, p, s);
        const double r = penalty_value(w, gram_target(k, s), PenaltyNorm::frobenius);
        if (r > out.residual) {
          out.residual = r;
          out.detail = fmt::format("K={} P={} s={}", k, p, s);
        }
      }
    }
  }
  out.passed = out.residual < out.tolerance;
  return out;
}

OracleCheck check_infeasible_rejection() {
  OracleCheck out{"infeasible_rejected", true, 0, 0, ""};
  std::size_t accepted = 0, cases = 0;
  for (std::size_t p = 1; p <= 6; ++p) {
    for (std::size_t k = p + 2; k <= p + 4; ++k) {
      ++cases;
      bool fg = false, search = false;
      try {
        (void)factor_gram(k, p, 1.0);
      } catch (const InfeasibleError&) {
        fg = true;
      }
      try {
        (void)max_min_angle_search(k, p, 0, 1, {.restarts = 1, .polish_iterations = 0});
      } catch (const InfeasibleError&) {
        search = true;
      }
      if (!fg || !search) {
        ++accepted;
        out.detail = fmt::format("K={} P={} accepted", k, p);
      }
    }
  }
  out.residual = static_cast<double>(accepted);
  out.passed = accepted == 0;
  if (out.passed) out.detail = fmt::format("{} cases rejected", cases);
  return out;
}

OracleCheck check_simplex_bound(std::uint64_t seed, std::size_t trials, std::size_t max_classes) {
  OracleCheck out{"simplex_bound", true, 0, 1e-12, ""};
  // residual: largest amount by which a random W beats 1/(1-K); <= 0 means never.
  out.residual = -std::numeric_limits<double>::infinity();
  Rng rng(derive_seed(seed, "simplex_bound"));
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<std::size_t> dims(1, 16);
  for (std::size_t k = 2; k <= max_classes; ++k) {
    const double bound = 1.0 / (1.0 - static_cast<double>(k));
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t p = dims(rng);
      Tensor w({k, p});
      auto d = w.mutable_data();
      for (auto& v : d) v = static_cast<Real>(normal(rng));
      for (std::size_t i = 0; i < k; ++i) {
        double n = 0;
        for (std::size_t j = 0; j < p; ++j) n += d[i * p + j] * d[i * p + j];
        if (n < 1e-24) d[i * p] = 1, n = 1;
        for (std::size_t j = 0; j < p; ++j) d[i * p + j] /= std::sqrt(n);
      }
      const double beat = bound - max_pair_cosine(w);
      if (beat > out.residual) {
        out.residual = beat;
        out.detail = fmt::format("K={} P={}", k, p);
      }
    }
  }
  out.passed = out.residual < out.tolerance;
  return out;
}

OracleCheck check_search_convergence(const std::vector<std::pair<std::size_t, std::size_t>>& cases,
                                     std::uint64_t seed, std::size_t iterations,
                                     std::size_t restarts) {
  OracleCheck out{"max_min_angle_search", true, 0, 1e-3, ""};
  std::vector<std::string> parts;
  for (auto [k, p] : cases) {
    SearchOptions opt;
    opt.restarts = restarts;
    const SearchResult r = max_min_angle_search(k, p, seed, iterations, opt);
    const double target = 1.0 / (1.0 - static_cast<double>(k));
    const double err = std::abs(r.max_pair_cos - target);
    if (r.max_pair_cos < target - 1e-6) out.passed = false;
    out.residual = std::max(out.residual, err);
    parts.push_back(fmt::format("({},{}):{:.2e}", k, p, err));
  }
  out.detail = fmt::format("{}", fmt::join(parts, " "));
  out.passed = out.passed && out.residual < out.tolerance;
  return out;
}

}  // namespace etfw::geometry
