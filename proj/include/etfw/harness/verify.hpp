#pragma once

#include <iosfwd>
#include <vector>

#include "etfw/geometry/oracles.hpp"

namespace etfw::harness {

using geometry::OracleCheck;

/// Geometry oracles, gradient checks on small nets, attack oracles on affine
/// models and the relu reachability demo. `quick` trims trial counts.
std::vector<OracleCheck> run_verification(bool quick);

/// "check,status,residual,tolerance,detail" CSV, one row per check.
void print_checks(std::ostream& out, const std::vector<OracleCheck>& checks);

}  // namespace etfw::harness
