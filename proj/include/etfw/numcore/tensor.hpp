#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace etfw {

#ifdef ETFW_FLOAT32
using Real = float;
#else
using Real = double;
#endif

namespace numcore {

/// Allocates on 64-byte boundaries. Eigen's vectorized reductions split off a
/// scalar head that depends on the buffer address, so buffers handed to Eigen
/// need an alignment that does not vary with allocation history for results
/// to repeat bitwise within one process.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<Real, AlignedAllocator<Real>>;

}  // namespace numcore

}  // namespace etfw

namespace etfw::numcore {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Thrown when operand shapes do not conform for an op.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string_view op, const Shape& lhs, const Shape& rhs);
  ShapeError(std::string_view op, const Shape& shape, std::string_view what);
};

/// Thrown by the finite-value check when an op produces NaN or Inf.
class NonFiniteError : public std::domain_error {
 public:
  explicit NonFiniteError(std::string_view op);
};

/// Enables the per-op NaN/Inf scan. Defaults to on in debug builds.
void set_finite_check(bool enabled);
bool finite_check_enabled();

class Tape;
class Tensor;

namespace detail {
struct TapeState;
}

/// Backward rule of a recorded op: given dL/d(output), fill dL/d(input k)
/// for every k with needed[k] set. Unneeded slots may be left empty.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor> grad_in,
                                      std::span<const bool> needed)>;

/// Dense row-major tensor. Copies share storage; writes through
/// mutable_data() copy on demand, so a Tensor behaves as a value.
///
/// A tensor produced by an op with at least one recorded input carries a
/// reference to the tape node that produced it.
class Tensor {
 public:
  /// An empty rank-1 tensor with zero elements.
  Tensor();
  explicit Tensor(Shape shape, Real fill = 0);
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor scalar(Real value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Real{0}); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Real{1}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows);
  static Tensor vector(std::initializer_list<Real> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_->size(); }
  bool empty() const { return data_->empty(); }

  std::span<const Real> data() const { return *data_; }
  /// Detaches from the tape and from any shared storage before returning.
  std::span<Real> mutable_data();

  Real operator[](std::size_t i) const { return (*data_)[i]; }
  Real at(std::size_t row, std::size_t col) const;
  Real item() const;

  /// True when this tensor is a node on a live tape.
  bool requires_grad() const;
  /// Same values, no tape node.
  Tensor detached() const;
  /// Deep copy with independent storage.
  Tensor clone() const;

 private:
  friend class Tape;
  friend class Gradients;
  friend Tensor record_op(Tensor out, std::initializer_list<const Tensor*> inputs,
                          BackwardFn backward);

  Shape shape_;
  std::shared_ptr<Storage> data_;
  std::shared_ptr<detail::TapeState> tape_;
  std::int64_t node_ = -1;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);
Real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace etfw::numcore
