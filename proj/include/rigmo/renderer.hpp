#pragma once

// Orthographic Gaussian point splatting. Output frames are T x C x H x W in
// [-1, 1] with background -1.

#include "rigmo/ops.hpp"
#include "rigmo/linalg.hpp"

#include <thread>

namespace rigmo {

struct Camera {
  Vec3 view{-1, 0, 0}; // direction the camera looks along
  Vec3 up{0, 1, 0};
  Vec3 center{0, 0.5, 0}; // world point at the image center
  double scale = 0.8;     // image heights per world unit
  std::size_t height = 64, width = 64;
  double sigma = 1.5; // splat radius in pixels

  void validate() const {
    if (height < 8 || width < 8)
      throw DataError("camera image must be at least 8 x 8");
    if (!(scale > 0) || !(sigma > 0))
      throw DataError("camera scale and sigma must be positive");
    if (length(view) < 1e-9 || length(up) < 1e-9)
      throw DataError("camera axes must be nonzero");
    if (length(cross(view, up)) < 1e-6 * length(view) * length(up))
      throw DataError("camera view and up axes are parallel");
  }

  /// Orthonormal image basis (right, up).
  std::pair<Vec3, Vec3> basis() const {
    const Vec3 f = normalize(view);
    const Vec3 r = normalize(cross(f, up));
    return {r, cross(r, f)};
  }

  double pixels_per_unit() const { return scale * static_cast<double>(height); }

  /// Continuous pixel coordinates (column, row); pixel centers are integers.
  std::pair<double, double> project(const Vec3 &p) const {
    const auto [r, u] = basis();
    const Vec3 d = p - center;
    const double s = pixels_per_unit();
    return {0.5 * static_cast<double>(width - 1) + s * dot(d, r),
            0.5 * static_cast<double>(height - 1) - s * dot(d, u)};
  }
};

namespace detail {

template <class F> void parallel_frames(std::size_t T, F &&body) {
  const std::size_t workers =
      std::min<std::size_t>(T, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t t = 0; t < T; ++t)
      body(t);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t t = w; t < T; t += workers)
        body(t);
    });
}

} // namespace detail

/// Splats every vertex as a truncated Gaussian
///   k(d) = max(0, exp(-d^2 / 2 sigma^2) - exp(-R^2 / 2 sigma^2)),  R = 4 sigma,
/// accumulates color * k per pixel and maps the sum through 2 tanh(acc) - 1.
/// `colors` is empty (one white channel) or V rows of C in {1, 3} values in [0, 1].
/// Differentiable with respect to the vertices.
inline Tensor render(const Tensor &vertices, const std::vector<std::vector<double>> &colors,
                     const Camera &cam) {
  cam.validate();
  if (vertices.rank() != 3 || vertices.dim(2) != 3)
    throw ShapeError("render expects T x V x 3 vertices, got " + shape_str(vertices.shape()));
  const std::size_t T = vertices.dim(0), V = vertices.dim(1);
  const std::size_t H = cam.height, W = cam.width;
  const std::size_t C = colors.empty() ? 1 : colors.front().size();
  if (!colors.empty()) {
    if (colors.size() != V)
      throw ShapeError("render: color rows do not match vertex count");
    if (C != 1 && C != 3)
      throw ShapeError("render: colors need 1 or 3 channels");
    for (const auto &c : colors) {
      if (c.size() != C)
        throw ShapeError("render: inconsistent color channels");
      for (double x : c)
        if (!(x >= 0.0 && x <= 1.0))
          throw DataError("render: colors must lie in [0, 1]");
    }
  }
  for (double x : vertices.values())
    if (!std::isfinite(x))
      throw DataError("render: non-finite vertex position");

  const auto [right, up] = cam.basis();
  const double s = cam.pixels_per_unit();
  const double sigma = cam.sigma, R = 4.0 * sigma;
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double floor_k = std::exp(-R * R * inv2s2);
  const double cx = 0.5 * static_cast<double>(W - 1), cy = 0.5 * static_cast<double>(H - 1);

  auto color = [&colors](std::size_t v, std::size_t c) {
    return colors.empty() ? 1.0 : colors[v][c];
  };
  // Calls f(pixel index, kernel) for pixels in the support of vertex v.
  auto for_support = [&](std::size_t t, std::size_t v, auto &&f) {
    const double *p = &vertices.values()[(t * V + v) * 3];
    const Vec3 d{p[0] - cam.center[0], p[1] - cam.center[1], p[2] - cam.center[2]};
    const double px = cx + s * dot(d, right), py = cy - s * dot(d, up);
    const long x0 = static_cast<long>(std::ceil(px - R)), x1 = static_cast<long>(std::floor(px + R));
    const long y0 = static_cast<long>(std::ceil(py - R)), y1 = static_cast<long>(std::floor(py + R));
    for (long y = std::max(0L, y0); y <= std::min<long>(static_cast<long>(H) - 1, y1); ++y)
      for (long x = std::max(0L, x0); x <= std::min<long>(static_cast<long>(W) - 1, x1); ++x) {
        const double dx = static_cast<double>(x) - px, dy = static_cast<double>(y) - py;
        const double e = std::exp(-(dx * dx + dy * dy) * inv2s2);
        if (e <= floor_k)
          continue;
        f(static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x), e - floor_k);
      }
  };

  std::vector<double> acc(T * C * H * W, 0.0);
  detail::parallel_frames(T, [&](std::size_t t) {
    double *frame = &acc[t * C * H * W];
    for (std::size_t v = 0; v < V; ++v)
      for_support(t, v, [&](std::size_t pix, double k) {
        for (std::size_t c = 0; c < C; ++c)
          frame[c * H * W + pix] += color(v, c) * k;
      });
  });
  std::vector<double> out(acc.size());
  std::vector<double> slope(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double th = std::tanh(acc[i]);
    out[i] = 2.0 * th - 1.0;
    slope[i] = 2.0 * (1.0 - th * th);
  }

  Tensor verts_copy = vertices.detached();
  return detail::finish(
      "render", {T, C, H, W}, std::move(out), {&vertices},
      [=](std::span<const double> g, std::span<std::vector<double> *> pg) {
        auto &gv = *pg[0];
        // image-plane gradient -> world: px moves with +right, py with -up
        detail::parallel_frames(T, [&](std::size_t t) {
          for (std::size_t v = 0; v < V; ++v) {
            double gx = 0.0, gy = 0.0;
            const double *p = &verts_copy.values()[(t * V + v) * 3];
            const Vec3 d{p[0] - cam.center[0], p[1] - cam.center[1], p[2] - cam.center[2]};
            const double px = cx + s * dot(d, right), py = cy - s * dot(d, up);
            const long x0 = static_cast<long>(std::ceil(px - R));
            const long x1 = static_cast<long>(std::floor(px + R));
            const long y0 = static_cast<long>(std::ceil(py - R));
            const long y1 = static_cast<long>(std::floor(py + R));
            for (long y = std::max(0L, y0); y <= std::min<long>(static_cast<long>(H) - 1, y1); ++y)
              for (long x = std::max(0L, x0); x <= std::min<long>(static_cast<long>(W) - 1, x1);
                   ++x) {
                const double dx = static_cast<double>(x) - px, dy = static_cast<double>(y) - py;
                const double e = std::exp(-(dx * dx + dy * dy) * inv2s2);
                if (e <= floor_k)
                  continue;
                const std::size_t pix = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
                // d/dpx of exp(-d^2 / 2 sigma^2) = e (x - px) / sigma^2
                double w = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                  const std::size_t i = (t * C + c) * H * W + pix;
                  w += g[i] * slope[i] * (colors.empty() ? 1.0 : colors[v][c]);
                }
                gx += w * 2.0 * inv2s2 * e * dx;
                gy += w * 2.0 * inv2s2 * e * dy;
              }
            for (std::size_t e = 0; e < 3; ++e)
              gv[(t * V + v) * 3 + e] += s * (gx * right[e] - gy * up[e]);
          }
        });
      });
}

inline Tensor render(const Tensor &vertices, const Camera &cam) { return render(vertices, {}, cam); }

} // namespace rigmo
