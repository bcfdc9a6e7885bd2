#include "etfw/numcore/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "tape_state.hpp"

namespace etfw::numcore {

namespace {

#ifdef NDEBUG
std::atomic<bool> g_finite_check{false};
#else
std::atomic<bool> g_finite_check{true};
#endif

}  // namespace

void set_finite_check(bool enabled) { g_finite_check.store(enabled, std::memory_order_relaxed); }
bool finite_check_enabled() { return g_finite_check.load(std::memory_order_relaxed); }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(std::string_view op, const Shape& lhs, const Shape& rhs)
    : std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(lhs) + " vs " +
                            to_string(rhs)) {}

ShapeError::ShapeError(std::string_view op, const Shape& shape, std::string_view what)
    : std::invalid_argument(std::string(op) + ": invalid shape " + to_string(shape) + " (" +
                            std::string(what) + ")") {}

NonFiniteError::NonFiniteError(std::string_view op)
    : std::domain_error(std::string(op) + ": produced a non-finite value") {}

Tensor::Tensor() : shape_{0}, data_(std::make_shared<Storage>()) {}

Tensor::Tensor(Shape shape, Real fill)
    : shape_(std::move(shape)), data_(std::make_shared<Storage>(numel(shape_), fill)) {}

Tensor::Tensor(Shape shape, std::vector<Real> values)
    : shape_(std::move(shape)), data_(std::make_shared<Storage>(values.begin(), values.end())) {
  if (numel(shape_) != data_->size()) {
    throw ShapeError("tensor", shape_,
                     "expected " + std::to_string(numel(shape_)) + " values, got " +
                         std::to_string(data_->size()));
  }
}

Tensor Tensor::scalar(Real value) { return Tensor(Shape{}, std::vector<Real>{value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Real>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<Real> values;
  values.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw std::invalid_argument("Tensor::matrix: ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<Real> values) {
  return Tensor({values.size()}, std::vector<Real>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("dim", shape_, "axis out of range");
  return shape_[axis];
}

std::span<Real> Tensor::mutable_data() {
  tape_.reset();
  node_ = -1;
  if (data_.use_count() > 1) data_ = std::make_shared<Storage>(*data_);
  return *data_;
}

Real Tensor::at(std::size_t row, std::size_t col) const {
  if (shape_.size() != 2) throw ShapeError("at", shape_, "expected a matrix");
  return (*data_)[row * shape_[1] + col];
}

Real Tensor::item() const {
  if (data_->size() != 1) throw ShapeError("item", shape_, "expected one element");
  return (*data_)[0];
}

bool Tensor::requires_grad() const { return node_ >= 0 && tape_ && !tape_->closed; }

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = std::make_shared<Storage>(*data_);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(Real)) == 0;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff", a.shape(), b.shape());
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace etfw::numcore
