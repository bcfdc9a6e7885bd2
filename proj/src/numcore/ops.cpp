#include "etfw/numcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace etfw::numcore {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::span<Real> d, std::size_t rows, std::size_t cols) {
  return MutMap(d.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tensor finish(const char* op, Tensor out, std::initializer_list<const Tensor*> inputs,
              BackwardFn backward) {
  if (finite_check_enabled()) {
    for (Real v : out.data()) {
      if (!std::isfinite(v)) throw NonFiniteError(op);
    }
  }
  return record_op(std::move(out), inputs, std::move(backward));
}

// Binary elementwise: equal shapes, or one rank-0 operand.
Shape binary_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.rank() == 0) return b.shape();
  if (b.rank() == 0) return a.shape();
  throw ShapeError(op, a.shape(), b.shape());
}

inline Real elem(const Tensor& t, std::size_t i) { return t.size() == 1 ? t[0] : t[i]; }

// Collapses a gradient back onto an operand that may have been a broadcast
// scalar.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  Real s = 0;
  for (Real v : g.data()) s += v;
  return Tensor(target, std::vector<Real>{s});
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return out;
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(op, t.shape(), "expected rank " + std::to_string(rank));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out(binary_shape("add", a, b));
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = elem(a, i) + elem(b, i);
  return finish("add", std::move(out), {&a, &b},
                [sa = a.shape(), sb = b.shape()](const Tensor& g, std::span<Tensor> gi,
                                                 std::span<const bool> need) {
                  if (need[0]) gi[0] = reduce_to(g, sa);
                  if (need[1]) gi[1] = reduce_to(g, sb);
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out(binary_shape("sub", a, b));
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = elem(a, i) - elem(b, i);
  return finish("sub", std::move(out), {&a, &b},
                [sa = a.shape(), sb = b.shape()](const Tensor& g, std::span<Tensor> gi,
                                                 std::span<const bool> need) {
                  if (need[0]) gi[0] = reduce_to(g, sa);
                  if (need[1]) gi[1] = reduce_to(map_unary(g, [](Real v) { return -v; }), sb);
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out(binary_shape("mul", a, b));
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = elem(a, i) * elem(b, i);
  return finish("mul", std::move(out), {&a, &b},
                [av = a.detached(), bv = b.detached()](const Tensor& g, std::span<Tensor> gi,
                                                       std::span<const bool> need) {
                  if (need[0]) {
                    Tensor ga(g.shape());
                    auto d = ga.mutable_data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * elem(bv, i);
                    gi[0] = reduce_to(ga, av.shape());
                  }
                  if (need[1]) {
                    Tensor gb(g.shape());
                    auto d = gb.mutable_data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * elem(av, i);
                    gi[1] = reduce_to(gb, bv.shape());
                  }
                });
}

Tensor scale(const Tensor& a, Real factor) {
  return finish("scale", map_unary(a, [factor](Real v) { return v * factor; }), {&a},
                [factor](const Tensor& g, std::span<Tensor> gi, std::span<const bool>) {
                  gi[0] = map_unary(g, [factor](Real v) { return v * factor; });
                });
}

Tensor add_scalar(const Tensor& a, Real value) {
  return finish("add_scalar", map_unary(a, [value](Real v) { return v + value; }), {&a},
                [](const Tensor& g, std::span<Tensor> gi, std::span<const bool>) { gi[0] = g; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  as_matrix(out.mutable_data(), m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, k, n);
  return finish(
      "matmul", std::move(out), {&a, &b},
      [av = a.detached(), bv = b.detached(), m, k, n](const Tensor& g, std::span<Tensor> gi,
                                                      std::span<const bool> need) {
        if (need[0]) {
          Tensor ga({m, k});
          as_matrix(ga.mutable_data(), m, k).noalias() =
              as_matrix(g, m, n) * as_matrix(bv, k, n).transpose();
          gi[0] = std::move(ga);
        }
        if (need[1]) {
          Tensor gb({k, n});
          as_matrix(gb.mutable_data(), k, n).noalias() =
              as_matrix(av, m, k).transpose() * as_matrix(g, m, n);
          gi[1] = std::move(gb);
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  as_matrix(out.mutable_data(), n, m) = as_matrix(a, m, n).transpose();
  return finish("transpose", std::move(out), {&a},
                [m, n](const Tensor& g, std::span<Tensor> gi, std::span<const bool>) {
                  Tensor ga({m, n});
                  as_matrix(ga.mutable_data(), m, n) = as_matrix(g, n, m).transpose();
                  gi[0] = std::move(ga);
                });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_row_bias", x.shape(), bias.shape());
  }
  const std::size_t n = x.dim(0), f = x.dim(1);
  Tensor out = x.clone();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) o[i * f + j] += bias[j];
  }
  return finish("add_row_bias", std::move(out), {&x, &bias},
                [n, f](const Tensor& g, std::span<Tensor> gi, std::span<const bool> need) {
                  if (need[0]) gi[0] = g;
                  if (need[1]) {
                    Tensor gb({f});
                    auto d = gb.mutable_data();
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < f; ++j) d[j] += g[i * f + j];
                    }
                    gi[1] = std::move(gb);
                  }
                });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, oh, ow, stride, pad;
  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
};

void im2col(const Real* img, const ConvGeometry& g, Real* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        Real* dst = col + ((ch * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t x = 0; x < g.ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            dst[y * g.ow + x] =
                inside ? img[(ch * g.h + static_cast<std::size_t>(iy)) * g.w +
                             static_cast<std::size_t>(ix)]
                       : Real{0};
          }
        }
      }
    }
  }
}

void col2im_add(const Real* col, const ConvGeometry& g, Real* img) {
  const std::size_t cols = g.col_cols();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const Real* src = col + ((ch * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t x = 0; x < g.ow; ++x) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(ch * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                src[y * g.ow + x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions options) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d", x.shape(), weight.shape());
  }
  const bool has_bias = !bias.empty();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    throw ShapeError("conv2d", weight.shape(), bias.shape());
  }
  if (options.stride == 0) throw ShapeError("conv2d", x.shape(), "stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2),
                 weight.dim(3), 0, 0, options.stride, options.padding};
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw ShapeError("conv2d", x.shape(), weight.shape());
  }
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const std::size_t rows = g.col_rows(), cols = g.col_cols();
  const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.o * cols;
  Tensor out({g.n, g.o, g.oh, g.ow});
  auto o = out.mutable_data();
  Storage col(rows * cols);
  const auto wm = as_matrix(weight, g.o, rows);
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(x.data().data() + s * in_stride, g, col.data());
    auto dst = as_matrix(o.subspan(s * out_stride, out_stride), g.o, cols);
    dst.noalias() = wm * ConstMap(col.data(), static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(cols));
    if (has_bias) {
      for (std::size_t oc = 0; oc < g.o; ++oc) dst.row(static_cast<Eigen::Index>(oc)).array() += bias[oc];
    }
  }

  return finish(
      "conv2d", std::move(out), {&x, &weight, &bias},
      [xv = x.detached(), wv = weight.detached(), g, has_bias](
          const Tensor& grad, std::span<Tensor> gi, std::span<const bool> need) {
        const std::size_t rows = g.col_rows(), cols = g.col_cols();
        const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.o * cols;
        Storage col(rows * cols);
        Tensor gx, gw, gb;
        if (need[0]) gx = Tensor(xv.shape());
        if (need[1]) gw = Tensor(wv.shape());
        if (need[2] && has_bias) gb = Tensor({g.o});
        const auto wm = as_matrix(wv, g.o, rows);
        for (std::size_t s = 0; s < g.n; ++s) {
          const auto gout = ConstMap(grad.data().data() + s * out_stride,
                                     static_cast<Eigen::Index>(g.o),
                                     static_cast<Eigen::Index>(cols));
          if (need[1]) {
            im2col(xv.data().data() + s * in_stride, g, col.data());
            as_matrix(gw.mutable_data(), g.o, rows).noalias() +=
                gout * ConstMap(col.data(), static_cast<Eigen::Index>(rows),
                                static_cast<Eigen::Index>(cols))
                           .transpose();
          }
          if (need[2] && has_bias) {
            auto d = gb.mutable_data();
            for (std::size_t oc = 0; oc < g.o; ++oc) d[oc] += gout.row(static_cast<Eigen::Index>(oc)).sum();
          }
          if (need[0]) {
            MutMap(col.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))
                .noalias() = wm.transpose() * gout;
            col2im_add(col.data(), g, gx.mutable_data().data() + s * in_stride);
          }
        }
        if (need[0]) gi[0] = std::move(gx);
        if (need[1]) gi[1] = std::move(gw);
        if (need[2]) gi[2] = has_bias ? std::move(gb) : Tensor();
      });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank("max_pool2d", x, 4);
  if (kernel == 0 || stride == 0 || x.dim(2) < kernel || x.dim(3) < kernel) {
    throw ShapeError("max_pool2d", x.shape(), "window does not fit");
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor out({n, c, oh, ow});
  auto o = out.mutable_data();
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(o.size());
  const auto in = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = base + (y * stride) * w + xx * stride;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::size_t idx = base + (y * stride + ki) * w + xx * stride + kj;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t oi = (plane * oh + y) * ow + xx;
        o[oi] = in[best];
        (*argmax)[oi] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return finish("max_pool2d", std::move(out), {&x},
                [argmax, shape = x.shape()](const Tensor& g, std::span<Tensor> gi,
                                            std::span<const bool>) {
                  Tensor gx(shape);
                  auto d = gx.mutable_data();
                  for (std::size_t i = 0; i < g.size(); ++i) d[(*argmax)[i]] += g[i];
                  gi[0] = std::move(gx);
                });
}

Tensor relu(const Tensor& x) {
  return finish("relu", map_unary(x, [](Real v) { return v > 0 ? v : Real{0}; }), {&x},
                [xv = x.detached()](const Tensor& g, std::span<Tensor> gi, std::span<const bool>) {
                  Tensor gx(g.shape());
                  auto d = gx.mutable_data();
                  for (std::size_t i = 0; i < d.size(); ++i) d[i] = xv[i] > 0 ? g[i] : Real{0};
                  gi[0] = std::move(gx);
                });
}

Tensor leaky_relu(const Tensor& x, Real slope) {
  return finish("leaky_relu", map_unary(x, [slope](Real v) { return v > 0 ? v : slope * v; }),
                {&x},
                [xv = x.detached(), slope](const Tensor& g, std::span<Tensor> gi,
                                           std::span<const bool>) {
                  Tensor gx(g.shape());
                  auto d = gx.mutable_data();
                  for (std::size_t i = 0; i < d.size(); ++i) d[i] = xv[i] > 0 ? g[i] : slope * g[i];
                  gi[0] = std::move(gx);
                });
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
  if (slope.size() != 1) throw ShapeError("prelu", slope.shape(), "slope must hold one value");
  const Real a = slope[0];
  return finish("prelu", map_unary(x, [a](Real v) { return v > 0 ? v : a * v; }), {&x, &slope},
                [xv = x.detached(), a, sshape = slope.shape()](
                    const Tensor& g, std::span<Tensor> gi, std::span<const bool> need) {
                  if (need[0]) {
                    Tensor gx(g.shape());
                    auto d = gx.mutable_data();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] = xv[i] > 0 ? g[i] : a * g[i];
                    gi[0] = std::move(gx);
                  }
                  if (need[1]) {
                    Real s = 0;
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (!(xv[i] > 0)) s += g[i] * xv[i];
                    }
                    gi[1] = Tensor(sshape, std::vector<Real>{s});
                  }
                });
}

Tensor tanh(const Tensor& x) {
  Tensor y = map_unary(x, [](Real v) { return std::tanh(v); });
  return finish("tanh", y, {&x},
                [yv = y.detached()](const Tensor& g, std::span<Tensor> gi, std::span<const bool>) {
                  Tensor gx(g.shape());
                  auto d = gx.mutable_data();
                  for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * (1 - yv[i] * yv[i]);
                  gi[0] = std::move(gx);
                });
}

Tensor exp(const Tensor& x) {
  Tensor y = map_unary(x, [](Real v) { return std::exp(v); });
  return finish("exp", y, {&x},
                [yv = y.detached()](const Tensor& g, std::span<Tensor> gi, std::span<const bool>) {
                  Tensor gx(g.shape());
                  auto d = gx.mutable_data();
                  for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * yv[i];
                  gi[0] = std::move(gx);
                });
}

Tensor log(const Tensor& x) {
  return finish("log", map_unary(x, [](Real v) { return std::log(v); }), {&x},
                [xv = x.detached()](const Tensor& g, std::span<Tensor> gi, std::span<const bool>) {
                  Tensor gx(g.shape());
                  auto d = gx.mutable_data();
                  for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] / xv[i];
                  gi[0] = std::move(gx);
                });
}

Tensor sqrt(const Tensor& x) {
  Tensor y = map_unary(x, [](Real v) { return std::sqrt(v); });
  return finish("sqrt", y, {&x},
                [yv = y.detached()](const Tensor& g, std::span<Tensor> gi, std::span<const bool>) {
                  Tensor gx(g.shape());
                  auto d = gx.mutable_data();
                  for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] / (2 * yv[i]);
                  gi[0] = std::move(gx);
                });
}

Tensor clamp(const Tensor& x, Real lo, Real hi) {
  return finish("clamp", map_unary(x, [lo, hi](Real v) { return std::clamp(v, lo, hi); }), {&x},
                [xv = x.detached(), lo, hi](const Tensor& g, std::span<Tensor> gi,
                                            std::span<const bool>) {
                  Tensor gx(g.shape());
                  auto d = gx.mutable_data();
                  for (std::size_t i = 0; i < d.size(); ++i) {
                    d[i] = (xv[i] >= lo && xv[i] <= hi) ? g[i] : Real{0};
                  }
                  gi[0] = std::move(gx);
                });
}

Tensor sum(const Tensor& x) {
  Real s = 0;
  for (Real v : x.data()) s += v;
  return finish("sum", Tensor::scalar(s), {&x},
                [shape = x.shape()](const Tensor& g, std::span<Tensor> gi, std::span<const bool>) {
                  gi[0] = Tensor(shape, g[0]);
                });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean", x.shape(), "empty tensor");
  Real s = 0;
  for (Real v : x.data()) s += v;
  const Real n = static_cast<Real>(x.size());
  return finish("mean", Tensor::scalar(s / n), {&x},
                [shape = x.shape(), n](const Tensor& g, std::span<Tensor> gi,
                                       std::span<const bool>) { gi[0] = Tensor(shape, g[0] / n); });
}

Tensor logsumexp_rows(const Tensor& x) {
  require_rank("logsumexp_rows", x, 2);
  const std::size_t n = x.dim(0), k = x.dim(1);
  if (k == 0) throw ShapeError("logsumexp_rows", x.shape(), "rows are empty");
  Tensor out({n});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = x.data().data() + i * k;
    const Real m = *std::max_element(row, row + k);
    Real s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    o[i] = m + std::log(s);
  }
  return finish("logsumexp_rows", out, {&x},
                [xv = x.detached(), ov = out.detached(), n, k](
                    const Tensor& g, std::span<Tensor> gi, std::span<const bool>) {
                  Tensor gx({n, k});
                  auto d = gx.mutable_data();
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < k; ++j) {
                      d[i * k + j] = g[i] * std::exp(xv[i * k + j] - ov[i]);
                    }
                  }
                  gi[0] = std::move(gx);
                });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
  require_rank("pick", x, 2);
  const std::size_t n = x.dim(0), k = x.dim(1);
  if (index.size() != n) throw ShapeError("pick", x.shape(), Shape{index.size()});
  Tensor out({n});
  auto o = out.mutable_data();
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= k) {
      throw std::out_of_range("pick: index " + std::to_string(idx[i]) + " out of range for " +
                              std::to_string(k) + " columns");
    }
    o[i] = x[i * k + idx[i]];
  }
  return finish("pick", std::move(out), {&x},
                [idx = std::move(idx), n, k](const Tensor& g, std::span<Tensor> gi,
                                             std::span<const bool>) {
                  Tensor gx({n, k});
                  auto d = gx.mutable_data();
                  for (std::size_t i = 0; i < n; ++i) d[i * k + idx[i]] = g[i];
                  gi[0] = std::move(gx);
                });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) throw ShapeError("reshape", x.shape(), shape);
  Tensor out(shape, std::vector<Real>(x.data().begin(), x.data().end()));
  return finish("reshape", std::move(out), {&x},
                [from = x.shape()](const Tensor& g, std::span<Tensor> gi, std::span<const bool>) {
                  gi[0] = Tensor(from, std::vector<Real>(g.data().begin(), g.data().end()));
                });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.dim(0)) {
    throw ShapeError("slice_rows", x.shape(),
                     "rows [" + std::to_string(begin) + "," + std::to_string(end) + ")");
  }
  const std::size_t row = x.dim(0) ? x.size() / x.dim(0) : 0;
  Shape shape = x.shape();
  shape[0] = end - begin;
  Tensor out(shape, std::vector<Real>(x.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                                      x.data().begin() + static_cast<std::ptrdiff_t>(end * row)));
  return finish("slice_rows", std::move(out), {&x},
                [from = x.shape(), begin, row](const Tensor& g, std::span<Tensor> gi,
                                               std::span<const bool>) {
                  Tensor gx(from);
                  auto d = gx.mutable_data();
                  std::copy(g.data().begin(), g.data().end(),
                            d.begin() + static_cast<std::ptrdiff_t>(begin * row));
                  gi[0] = std::move(gx);
                });
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  require_rank("argmax_rows", x, 2);
  const std::size_t n = x.dim(0), k = x.dim(1);
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = x.data().data() + i * k;
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = best;
  }
  return out;
}

}  // namespace etfw::numcore
