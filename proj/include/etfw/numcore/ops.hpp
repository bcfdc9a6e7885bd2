#pragma once

#include <cstddef>
#include <span>

#include "etfw/numcore/tape.hpp"
#include "etfw/numcore/tensor.hpp"

// Differentiable primitives. Every op records a tape node when any input is
// tracked. Elementwise binaries accept equal shapes, or a rank-0 operand;
// no other broadcasting exists.
namespace etfw::numcore {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor add_scalar(const Tensor& a, Real value);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m,n] -> [n,m]
Tensor transpose(const Tensor& a);
/// x [n,f] + bias [f] added to every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x [n,c,h,w], weight [o,c,kh,kw], bias [o] or empty -> [n,o,oh,ow].
/// Lowered to im2col + matmul per sample.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              Conv2dOptions options = {});
/// Non-overlapping or strided max pooling on [n,c,h,w]; ties go to the first
/// element in row-major window order.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride);

/// Subgradient 0 at exactly 0.
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, Real slope);
/// Single learnable slope, shape [1].
Tensor prelu(const Tensor& x, const Tensor& slope);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
/// Gradient passes where lo <= x <= hi.
Tensor clamp(const Tensor& x, Real lo, Real hi);

/// Sum of all elements -> rank-0.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [n,k] -> [n], stable log(sum(exp(row))).
Tensor logsumexp_rows(const Tensor& x);
/// [n,k] -> [n], element (i, index[i]).
Tensor pick(const Tensor& x, std::span<const std::size_t> index);

Tensor reshape(const Tensor& x, Shape shape);
/// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(Real s, const Tensor& a) { return scale(a, s); }

/// Row-wise argmax of a [n,k] tensor, lowest index on ties.
std::vector<std::size_t> argmax_rows(const Tensor& x);

}  // namespace etfw::numcore
