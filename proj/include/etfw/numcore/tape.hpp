#pragma once

#include <cstdint>
#include <memory>
#include <unordered_map>

#include "etfw/numcore/tensor.hpp"

namespace etfw::numcore {

/// Result of a backward pass: dLoss/dT for every watched tensor T.
class Gradients {
 public:
  /// Gradient for a tensor obtained from Tape::watch. Zeros when the loss
  /// does not depend on it.
  Tensor wrt(const Tensor& watched) const;
  bool contains(const Tensor& watched) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  const detail::TapeState* tape_ = nullptr;
  std::unordered_map<std::int64_t, Tensor> grads_;
};

/// Ordered record of primitive ops. Confined to one thread; workers that
/// need gradients in parallel each use their own tape.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;
  ~Tape();

  /// Registers `value` as a differentiable leaf and returns the tracked
  /// handle. Ops fed with the handle are recorded on this tape.
  Tensor watch(const Tensor& value);

  /// Reverse sweep from a scalar loss. Each node is visited once. The tape
  /// is reset afterwards unless `retain` is set.
  Gradients backward(const Tensor& loss, bool retain = false);

  std::size_t size() const;
  void reset();

 private:
  std::shared_ptr<detail::TapeState> state_;
};

/// Appends an op to the tape shared by its inputs. When no input is on a
/// tape, `out` is returned unchanged and `backward` is dropped. Used by every
/// primitive; exposed for custom ops and tests.
Tensor record_op(Tensor out, std::initializer_list<const Tensor*> inputs, BackwardFn backward);

}  // namespace etfw::numcore
