#include "etfw/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "etfw/numcore/tape.hpp"

namespace etfw::numcore {

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step) {
  Tape tape;
  const Tensor tracked = tape.watch(x);
  const Tensor analytic = tape.backward(f(tracked)).wrt(tracked);

  GradCheckResult result;
  Tensor probe = x.clone();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real original = x[i];
    probe.mutable_data()[i] = original + static_cast<Real>(step);
    const double up = f(probe).item();
    probe.mutable_data()[i] = original - static_cast<Real>(step);
    const double down = f(probe).item();
    probe.mutable_data()[i] = original;

    const double numeric = (up - down) / (2 * step);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    if (i == 0 || err > result.max_rel_error) result = {err, i, a, numeric};
  }
  return result;
}

}  // namespace etfw::numcore
