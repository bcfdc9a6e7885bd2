#pragma once

#include <cstdint>
#include <vector>

#include "etfw/numcore/tensor.hpp"

namespace etfw::numcore::detail {

struct TapeNode {
  std::vector<std::int64_t> inputs;  // -1 for untracked inputs
  BackwardFn backward;               // empty for leaves
  Shape shape;
};

struct TapeState {
  std::vector<TapeNode> nodes;
  bool closed = false;
};

}  // namespace etfw::numcore::detail
