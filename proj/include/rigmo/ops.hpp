#pragma once

// Differentiable tensor operations. Every op checks its output for NaN/Inf
// and records itself on the tape when any operand is tracked.

#include "rigmo/tensor.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>

namespace rigmo {

namespace detail {

inline Tensor finish(const char *name, Shape shape, std::vector<double> values,
                     const std::vector<const Tensor *> &parents,
                     Tape::Backward backward) {
  check_finite(values, name);
  Tensor out(std::move(shape), std::move(values));
  Tape *tape = nullptr;
  for (const Tensor *p : parents)
    if (p->tracked()) {
      tape = p->tape();
      break;
    }
  if (!tape)
    return out;
  return tape->record(std::move(out), parents, std::move(backward));
}

inline Shape broadcast_shape(const Shape &a, const Shape &b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides of `in` viewed with the shape `out` (zero along broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape &in,
                                                  const Shape &out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    const std::size_t axis = k + (r - in.size());
    strides[axis] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  return strides;
}

/// Calls f(out_index, a_index, b_index) over the broadcast output.
template <class F>
void for_each_broadcast(const Shape &out, const Shape &a, const Shape &b, F f) {
  const std::size_t n = numel(out);
  if (n == 0)
    return;
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t r = out.size();
  std::vector<std::size_t> counter(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t k = r; k-- > 0;) {
      if (++counter[k] < out[k]) {
        ia += sa[k];
        ib += sb[k];
        break;
      }
      ia -= sa[k] * (out[k] - 1);
      ib -= sb[k] * (out[k] - 1);
      counter[k] = 0;
    }
  }
}

template <class Fwd, class DA, class DB>
Tensor binary(const char *name, const Tensor &a, const Tensor &b, Fwd fwd,
              DA da, DB db) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  std::vector<double> out(numel(out_shape));
  const auto &av = a.values();
  const auto &bv = b.values();
  for_each_broadcast(out_shape, a.shape(), b.shape(),
                     [&](std::size_t o, std::size_t i, std::size_t j) {
                       out[o] = fwd(av[i], bv[j]);
                     });
  Shape as = a.shape(), bs = b.shape();
  std::vector<double> acopy = a.tracked() || b.tracked() ? av : std::vector<double>{};
  std::vector<double> bcopy = a.tracked() || b.tracked() ? bv : std::vector<double>{};
  return finish(
      name, out_shape, std::move(out), {&a, &b},
      [as, bs, out_shape, acopy, bcopy, da,
       db](std::span<const double> g, std::span<std::vector<double> *> pg) {
        for_each_broadcast(out_shape, as, bs,
                           [&](std::size_t o, std::size_t i, std::size_t j) {
                             if (pg[0])
                               (*pg[0])[i] += g[o] * da(acopy[i], bcopy[j]);
                             if (pg[1])
                               (*pg[1])[j] += g[o] * db(acopy[i], bcopy[j]);
                           });
      });
}

/// Elementwise op whose derivative is expressed through input x and output y.
template <class Fwd, class D>
Tensor unary(const char *name, const Tensor &x, Fwd fwd, D d) {
  std::vector<double> out(x.size());
  const auto &xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = fwd(xv[i]);
  if (!x.tracked())
    return finish(name, x.shape(), std::move(out), {&x}, {});
  std::vector<double> xs = xv, ys = out;
  return finish(name, x.shape(), std::move(out), {&x},
                [xs, ys, d](std::span<const double> g,
                            std::span<std::vector<double> *> pg) {
                  auto &gx = *pg[0];
                  for (std::size_t i = 0; i < g.size(); ++i)
                    gx[i] += g[i] * d(xs[i], ys[i]);
                });
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  if (axis < 0)
    axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError("axis out of range");
  return static_cast<std::size_t>(axis);
}

/// Splits a shape around `axis` into (outer, extent, inner) element counts.
inline std::tuple<std::size_t, std::size_t, std::size_t>
split_at(const Shape &shape, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i)
    outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i)
    inner *= shape[i];
  return {outer, shape[axis], inner};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor &a, const Tensor &b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor &a, const Tensor &b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor &a, const Tensor &b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor reciprocal(const Tensor &x) {
  return detail::unary(
      "reciprocal", x, [](double v) { return 1.0 / v; },
      [](double, double y) { return -y * y; });
}

inline Tensor div(const Tensor &a, const Tensor &b) { return mul(a, reciprocal(b)); }

inline Tensor operator+(const Tensor &a, const Tensor &b) { return add(a, b); }
inline Tensor operator-(const Tensor &a, const Tensor &b) { return sub(a, b); }
inline Tensor operator*(const Tensor &a, const Tensor &b) { return mul(a, b); }
inline Tensor operator/(const Tensor &a, const Tensor &b) { return div(a, b); }
inline Tensor operator+(const Tensor &a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor &a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor &a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator*(double s, const Tensor &a) { return mul(Tensor::scalar(s), a); }

inline Tensor neg(const Tensor &x) {
  return detail::unary(
      "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}
inline Tensor operator-(const Tensor &x) { return neg(x); }

inline Tensor square(const Tensor &x) {
  return detail::unary(
      "square", x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

inline Tensor sin(const Tensor &x) {
  return detail::unary(
      "sin", x, [](double v) { return std::sin(v); },
      [](double v, double) { return std::cos(v); });
}

inline Tensor cos(const Tensor &x) {
  return detail::unary(
      "cos", x, [](double v) { return std::cos(v); },
      [](double v, double) { return -std::sin(v); });
}

inline Tensor exp(const Tensor &x) {
  return detail::unary(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

inline Tensor sqrt(const Tensor &x) {
  return detail::unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

inline Tensor tanh(const Tensor &x) {
  return detail::unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

/// max(x, c). At x == c the gradient passes through (active side).
inline Tensor max_scalar(const Tensor &x, double c) {
  return detail::unary(
      "max_scalar", x, [c](double v) { return v >= c ? v : c; },
      [c](double v, double) { return v >= c ? 1.0 : 0.0; });
}

/// Hinge max(0, x - threshold).
inline Tensor hinge(const Tensor &x, double threshold) {
  return detail::unary(
      "hinge", x, [threshold](double v) { return v >= threshold ? v - threshold : 0.0; },
      [threshold](double v, double) { return v >= threshold ? 1.0 : 0.0; });
}

/// Clamp to [lo, hi]; identity gradient on the closed interval, zero outside.
inline Tensor clamp(const Tensor &x, double lo, double hi) {
  if (lo > hi)
    throw std::invalid_argument("clamp: lo > hi");
  return detail::unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

/// Clamp against constant elementwise bounds (broadcast to x).
inline Tensor clamp(const Tensor &x, const Tensor &lo, const Tensor &hi) {
  const Shape lo_s = detail::broadcast_shape(x.shape(), lo.shape());
  const Shape hi_s = detail::broadcast_shape(x.shape(), hi.shape());
  if (lo_s != x.shape() || hi_s != x.shape())
    throw ShapeError("clamp bounds must broadcast to the operand");
  std::vector<double> lov(x.size()), hiv(x.size());
  detail::for_each_broadcast(x.shape(), x.shape(), lo.shape(),
                             [&](std::size_t o, std::size_t, std::size_t j) {
                               lov[o] = lo[j];
                             });
  detail::for_each_broadcast(x.shape(), x.shape(), hi.shape(),
                             [&](std::size_t o, std::size_t, std::size_t j) {
                               hiv[o] = hi[j];
                             });
  std::vector<double> out(x.size());
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (lov[i] > hiv[i])
      throw std::invalid_argument("clamp: lo > hi");
    const double v = x[i];
    out[i] = std::clamp(v, lov[i], hiv[i]);
    mask[i] = (v >= lov[i] && v <= hiv[i]) ? 1.0 : 0.0;
  }
  return detail::finish("clamp", x.shape(), std::move(out), {&x},
                        [mask](std::span<const double> g,
                               std::span<std::vector<double> *> pg) {
                          for (std::size_t i = 0; i < g.size(); ++i)
                            (*pg[0])[i] += g[i] * mask[i];
                        });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor &x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> v = x.values();
  return detail::finish("reshape", std::move(shape), std::move(v), {&x},
                        [](std::span<const double> g,
                           std::span<std::vector<double> *> pg) {
                          auto &gx = *pg[0];
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gx[i] += g[i];
                        });
}

inline Tensor detach(const Tensor &x) { return x.detached(); }

inline Tensor broadcast_to(const Tensor &x, const Shape &shape) {
  if (detail::broadcast_shape(x.shape(), shape) != shape)
    throw ShapeError("cannot broadcast " + shape_str(x.shape()) + " to " +
                     shape_str(shape));
  std::vector<double> out(numel(shape));
  detail::for_each_broadcast(shape, x.shape(), shape,
                             [&](std::size_t o, std::size_t i, std::size_t) {
                               out[o] = x[i];
                             });
  Shape xs = x.shape();
  return detail::finish("broadcast_to", shape, std::move(out), {&x},
                        [xs, shape](std::span<const double> g,
                                    std::span<std::vector<double> *> pg) {
                          detail::for_each_broadcast(
                              shape, xs, shape,
                              [&](std::size_t o, std::size_t i, std::size_t) {
                                (*pg[0])[i] += g[o];
                              });
                        });
}

/// Elements [begin, end) along one axis.
inline Tensor slice(const Tensor &x, long axis_in, std::size_t begin,
                    std::size_t end) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
  if (begin > end || end > x.dim(axis))
    throw ShapeError("slice range out of bounds for " + shape_str(x.shape()));
  auto [outer, extent, inner] = detail::split_at(x.shape(), axis);
  const std::size_t len = end - begin;
  Shape shape = x.shape();
  shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>((o * extent + begin) * inner),
                len * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  return detail::finish(
      "slice", shape, std::move(out), {&x},
      [outer = outer, extent = extent, inner = inner, begin,
       len](std::span<const double> g, std::span<std::vector<double> *> pg) {
        auto &gx = *pg[0];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t k = 0; k < len * inner; ++k)
            gx[(o * extent + begin) * inner + k] += g[o * len * inner + k];
      });
}

/// Index a single position along an axis, dropping that axis.
inline Tensor select(const Tensor &x, long axis_in, std::size_t index) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
  Tensor s = slice(x, static_cast<long>(axis), index, index + 1);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(s, shape);
}

inline Tensor concat(const std::vector<Tensor> &xs, long axis_in) {
  if (xs.empty())
    throw ShapeError("concat of empty list");
  const std::size_t axis = detail::normalize_axis(axis_in, xs[0].rank());
  Shape shape = xs[0].shape();
  std::size_t total = 0;
  for (const auto &x : xs) {
    if (x.rank() != shape.size())
      throw ShapeError("concat rank mismatch");
    for (std::size_t k = 0; k < shape.size(); ++k)
      if (k != axis && x.dim(k) != shape[k])
        throw ShapeError("concat shape mismatch: " + shape_str(x.shape()) +
                         " vs " + shape_str(shape));
    total += x.dim(axis);
  }
  shape[axis] = total;
  auto [outer, extent, inner] = detail::split_at(shape, axis);
  (void)extent;
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto &x : xs) {
    offsets.push_back(off);
    const std::size_t len = x.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(o * len * inner),
                  len * inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + off) * inner));
    off += len;
  }
  std::vector<const Tensor *> parents;
  std::vector<std::size_t> lens;
  for (const auto &x : xs) {
    parents.push_back(&x);
    lens.push_back(x.dim(axis));
  }
  return detail::finish(
      "concat", shape, std::move(out), parents,
      [outer = outer, inner = inner, total, offsets,
       lens](std::span<const double> g, std::span<std::vector<double> *> pg) {
        for (std::size_t p = 0; p < pg.size(); ++p) {
          if (!pg[p])
            continue;
          auto &gx = *pg[p];
          const std::size_t len = lens[p];
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < len * inner; ++k)
              gx[o * len * inner + k] += g[(o * total + offsets[p]) * inner + k];
        }
      });
}

/// Stack equally shaped tensors along a new axis.
inline Tensor stack(const std::vector<Tensor> &xs, long axis_in) {
  if (xs.empty())
    throw ShapeError("stack of empty list");
  const std::size_t axis = detail::normalize_axis(axis_in, xs[0].rank() + 1);
  std::vector<Tensor> expanded;
  expanded.reserve(xs.size());
  for (const auto &x : xs) {
    Shape s = x.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(x, s));
  }
  return concat(expanded, static_cast<long>(axis));
}

/// Swap two axes.
inline Tensor transpose(const Tensor &x, long a_in, long b_in) {
  const std::size_t a = detail::normalize_axis(a_in, x.rank());
  const std::size_t b = detail::normalize_axis(b_in, x.rank());
  Shape shape = x.shape();
  std::swap(shape[a], shape[b]);
  const std::size_t r = x.rank();
  std::vector<std::size_t> in_strides(r);
  std::size_t s = 1;
  for (std::size_t k = r; k-- > 0;) {
    in_strides[k] = s;
    s *= x.dim(k);
  }
  std::vector<std::size_t> perm_strides = in_strides;
  std::swap(perm_strides[a], perm_strides[b]);
  // map[o] = input index of output element o
  std::vector<std::size_t> map(x.size());
  std::vector<std::size_t> counter(r, 0);
  std::size_t idx = 0;
  for (std::size_t o = 0; o < map.size(); ++o) {
    map[o] = idx;
    for (std::size_t k = r; k-- > 0;) {
      if (++counter[k] < shape[k]) {
        idx += perm_strides[k];
        break;
      }
      idx -= perm_strides[k] * (shape[k] - 1);
      counter[k] = 0;
    }
  }
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < out.size(); ++o)
    out[o] = x[map[o]];
  return detail::finish("transpose", shape, std::move(out), {&x},
                        [map](std::span<const double> g,
                              std::span<std::vector<double> *> pg) {
                          for (std::size_t o = 0; o < g.size(); ++o)
                            (*pg[0])[map[o]] += g[o];
                        });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor &x) {
  double s = 0.0;
  for (double v : x.values())
    s += v;
  const std::size_t n = x.size();
  return detail::finish("sum", {}, {s}, {&x},
                        [n](std::span<const double> g,
                            std::span<std::vector<double> *> pg) {
                          for (std::size_t i = 0; i < n; ++i)
                            (*pg[0])[i] += g[0];
                        });
}

inline Tensor sum(const Tensor &x, long axis_in, bool keepdim = false) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
  auto [outer, extent, inner] = detail::split_at(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim)
    shape[axis] = 1;
  else
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += x[(o * extent + e) * inner + i];
  return detail::finish(
      "sum_axis", shape, std::move(out), {&x},
      [outer = outer, extent = extent,
       inner = inner](std::span<const double> g, std::span<std::vector<double> *> pg) {
        auto &gx = *pg[0];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t e = 0; e < extent; ++e)
            for (std::size_t i = 0; i < inner; ++i)
              gx[(o * extent + e) * inner + i] += g[o * inner + i];
      });
}

inline Tensor mean(const Tensor &x) {
  if (x.size() == 0)
    throw ShapeError("mean of empty tensor");
  return sum(x) * (1.0 / static_cast<double>(x.size()));
}

inline Tensor mean(const Tensor &x, long axis_in, bool keepdim = false) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
  if (x.dim(axis) == 0)
    throw ShapeError("mean over empty axis");
  return sum(x, static_cast<long>(axis), keepdim) *
         (1.0 / static_cast<double>(x.dim(axis)));
}

/// Sum of squares of all elements.
inline Tensor sq_norm(const Tensor &x) {
  double s = 0.0;
  for (double v : x.values())
    s += v * v;
  std::vector<double> xs = x.tracked() ? x.values() : std::vector<double>{};
  return detail::finish("sq_norm", {}, {s}, {&x},
                        [xs](std::span<const double> g,
                             std::span<std::vector<double> *> pg) {
                          for (std::size_t i = 0; i < xs.size(); ++i)
                            (*pg[0])[i] += 2.0 * xs[i] * g[0];
                        });
}

/// Euclidean norm along one axis. The gradient at a zero vector is zero.
inline Tensor norm(const Tensor &x, long axis_in, bool keepdim = false) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
  auto [outer, extent, inner] = detail::split_at(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim)
    shape[axis] = 1;
  else
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      double s = 0.0;
      for (std::size_t e = 0; e < extent; ++e) {
        const double v = x[(o * extent + e) * inner + i];
        s += v * v;
      }
      out[o * inner + i] = std::sqrt(s);
    }
  std::vector<double> xs = x.tracked() ? x.values() : std::vector<double>{};
  std::vector<double> ns = x.tracked() ? out : std::vector<double>{};
  return detail::finish(
      "norm", shape, std::move(out), {&x},
      [outer = outer, extent = extent, inner = inner, xs,
       ns](std::span<const double> g, std::span<std::vector<double> *> pg) {
        auto &gx = *pg[0];
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < inner; ++i) {
            const double n = ns[o * inner + i];
            if (n == 0.0)
              continue;
            const double go = g[o * inner + i] / n;
            for (std::size_t e = 0; e < extent; ++e) {
              const std::size_t k = (o * extent + e) * inner + i;
              gx[k] += go * xs[k];
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product over the last two axes; leading axes broadcast.
inline Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul needs rank >= 2 operands");
  const std::size_t n = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t k2 = b.dim(b.rank() - 2), m = b.dim(b.rank() - 1);
  if (k != k2)
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = detail::broadcast_shape(abatch, bbatch);
  const std::size_t nb = numel(batch);
  std::vector<std::size_t> ai(nb), bi(nb);
  detail::for_each_broadcast(batch, abatch, bbatch,
                             [&](std::size_t o, std::size_t i, std::size_t j) {
                               ai[o] = i;
                               bi[o] = j;
                             });
  Shape shape = batch;
  shape.push_back(n);
  shape.push_back(m);
  std::vector<double> out(nb * n * m, 0.0);
  const auto &av = a.values();
  const auto &bv = b.values();
  for (std::size_t p = 0; p < nb; ++p) {
    const double *A = av.data() + ai[p] * n * k;
    const double *B = bv.data() + bi[p] * k * m;
    double *C = out.data() + p * n * m;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t q = 0; q < k; ++q) {
        const double arq = A[r * k + q];
        for (std::size_t c = 0; c < m; ++c)
          C[r * m + c] += arq * B[q * m + c];
      }
  }
  const bool tracked = a.tracked() || b.tracked();
  std::vector<double> acopy = tracked ? av : std::vector<double>{};
  std::vector<double> bcopy = tracked ? bv : std::vector<double>{};
  return detail::finish(
      "matmul", shape, std::move(out), {&a, &b},
      [ai, bi, n, k, m, acopy, bcopy](std::span<const double> g,
                                      std::span<std::vector<double> *> pg) {
        for (std::size_t p = 0; p < ai.size(); ++p) {
          const double *G = g.data() + p * n * m;
          const double *A = acopy.data() + ai[p] * n * k;
          const double *B = bcopy.data() + bi[p] * k * m;
          if (pg[0]) {
            double *GA = pg[0]->data() + ai[p] * n * k;
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t q = 0; q < k; ++q) {
                double s = 0.0;
                for (std::size_t c = 0; c < m; ++c)
                  s += G[r * m + c] * B[q * m + c];
                GA[r * k + q] += s;
              }
          }
          if (pg[1]) {
            double *GB = pg[1]->data() + bi[p] * k * m;
            for (std::size_t r = 0; r < n; ++r)
              for (std::size_t q = 0; q < k; ++q) {
                const double arq = A[r * k + q];
                for (std::size_t c = 0; c < m; ++c)
                  GB[q * m + c] += arq * G[r * m + c];
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing along the leading axis

/// out[e] = x[index[e]] (rows along axis 0).
inline Tensor gather_rows(const Tensor &x, const std::vector<std::size_t> &index) {
  if (x.rank() < 1)
    throw ShapeError("gather_rows needs rank >= 1");
  const std::size_t rows = x.dim(0);
  const std::size_t width = rows ? x.size() / rows : 0;
  Shape shape = x.shape();
  shape[0] = index.size();
  std::vector<double> out(index.size() * width);
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= rows)
      throw ShapeError("gather_rows index out of range");
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(index[e] * width),
                width, out.begin() + static_cast<std::ptrdiff_t>(e * width));
  }
  return detail::finish("gather_rows", shape, std::move(out), {&x},
                        [index, width](std::span<const double> g,
                                       std::span<std::vector<double> *> pg) {
                          auto &gx = *pg[0];
                          for (std::size_t e = 0; e < index.size(); ++e)
                            for (std::size_t c = 0; c < width; ++c)
                              gx[index[e] * width + c] += g[e * width + c];
                        });
}

/// out[index[e]] += x[e]; out has `rows` rows.
inline Tensor scatter_add_rows(const Tensor &x, const std::vector<std::size_t> &index,
                               std::size_t rows) {
  if (x.rank() < 1 || x.dim(0) != index.size())
    throw ShapeError("scatter_add_rows: index length must match rows of x");
  const std::size_t width = index.empty() ? 0 : x.size() / index.size();
  Shape shape = x.shape();
  shape[0] = rows;
  std::vector<double> out(rows * (index.empty() ? numel(Shape(x.shape().begin() + 1, x.shape().end())) : width), 0.0);
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= rows)
      throw ShapeError("scatter_add_rows index out of range");
    for (std::size_t c = 0; c < width; ++c)
      out[index[e] * width + c] += x[e * width + c];
  }
  return detail::finish("scatter_add_rows", shape, std::move(out), {&x},
                        [index, width](std::span<const double> g,
                                       std::span<std::vector<double> *> pg) {
                          auto &gx = *pg[0];
                          for (std::size_t e = 0; e < index.size(); ++e)
                            for (std::size_t c = 0; c < width; ++c)
                              gx[e * width + c] += g[index[e] * width + c];
                        });
}

} // namespace rigmo
