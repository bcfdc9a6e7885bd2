#pragma once

#include <cstddef>
#include <functional>

#include "etfw/numcore/tensor.hpp"

namespace etfw::numcore {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;

  bool passed(double tol) const { return max_rel_error < tol; }
};

/// Compares the tape gradient of a scalar function against central
/// differences, coordinate by coordinate:
///   max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step = 1e-6);

}  // namespace etfw::numcore
