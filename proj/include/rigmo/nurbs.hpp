#pragma once

#include "rigmo/linalg.hpp"
#include "rigmo/ops.hpp"

#include <stdexcept>
#include <vector>

namespace rigmo {

/// Rational B-spline curve in R^3 on a clamped uniform knot vector over [0, 1].
struct NurbsCurve {
  int degree = 3;
  std::vector<Vec3> control_points;
  std::vector<double> weights;
  std::vector<double> knots;

  std::size_t size() const { return control_points.size(); }
};

/// Clamped uniform knots: degree+1 zeros, uniform interior, degree+1 ones.
inline std::vector<double> clamped_uniform_knots(std::size_t control_count, int degree) {
  const auto p = static_cast<std::size_t>(degree);
  if (control_count < p + 1)
    throw std::invalid_argument("need at least degree+1 control points");
  const std::size_t spans = control_count - p;
  std::vector<double> knots;
  knots.reserve(control_count + p + 1);
  for (std::size_t i = 0; i <= p; ++i)
    knots.push_back(0.0);
  for (std::size_t i = 1; i < spans; ++i)
    knots.push_back(static_cast<double>(i) / static_cast<double>(spans));
  for (std::size_t i = 0; i <= p; ++i)
    knots.push_back(1.0);
  return knots;
}

inline NurbsCurve make_nurbs(std::vector<Vec3> control_points, std::vector<double> weights,
                             int degree = 3) {
  if (degree < 1)
    throw std::invalid_argument("degree must be >= 1");
  if (control_points.size() < static_cast<std::size_t>(degree) + 1)
    throw std::invalid_argument("control count " + std::to_string(control_points.size()) +
                                " is below degree+1");
  if (weights.size() != control_points.size())
    throw std::invalid_argument("one weight per control point is required");
  for (double w : weights)
    if (!(w > 0.0))
      throw std::invalid_argument("NURBS weights must be strictly positive");
  NurbsCurve c;
  c.degree = degree;
  c.knots = clamped_uniform_knots(control_points.size(), degree);
  c.control_points = std::move(control_points);
  c.weights = std::move(weights);
  return c;
}

/// All B-spline basis values N_{k,degree}(s), k = 0..n-1, by the Cox-de Boor
/// recursion over the full triangular table. At s == 1 the last basis is 1.
inline std::vector<double> bspline_basis(const std::vector<double> &knots, int degree,
                                         double s) {
  const auto p = static_cast<std::size_t>(degree);
  const std::size_t n = knots.size() - p - 1;
  if (!(s >= knots.front() && s <= knots.back()))
    throw std::out_of_range("curve parameter outside the knot range");
  const std::size_t m = knots.size() - 1;
  std::vector<double> N(m, 0.0);
  if (s == knots.back()) {
    // Right-closed last non-degenerate span.
    std::size_t last = m - 1;
    while (last > 0 && knots[last] == knots[last + 1])
      --last;
    N[last] = 1.0;
  } else {
    for (std::size_t i = 0; i < m; ++i)
      N[i] = (knots[i] <= s && s < knots[i + 1]) ? 1.0 : 0.0;
  }
  for (std::size_t d = 1; d <= p; ++d) {
    for (std::size_t i = 0; i + d < m; ++i) {
      double v = 0.0;
      const double left = knots[i + d] - knots[i];
      const double right = knots[i + d + 1] - knots[i + 1];
      if (left > 0.0)
        v += (s - knots[i]) / left * N[i];
      if (right > 0.0)
        v += (knots[i + d + 1] - s) / right * N[i + 1];
      N[i] = v;
    }
  }
  N.resize(n);
  return N;
}

/// Rational basis R_k(s) = N_k(s) w_k / sum_i N_i(s) w_i.
inline std::vector<double> rational_basis(const NurbsCurve &c, double s) {
  auto N = bspline_basis(c.knots, c.degree, s);
  double denom = 0.0;
  for (std::size_t k = 0; k < N.size(); ++k) {
    N[k] *= c.weights[k];
    denom += N[k];
  }
  for (auto &v : N)
    v /= denom;
  return N;
}

inline Vec3 eval_nurbs(const NurbsCurve &c, double s) {
  if (!(s >= 0.0 && s <= 1.0))
    throw std::out_of_range("NURBS parameter must lie in [0, 1]");
  const auto R = rational_basis(c, s);
  Vec3 out{0, 0, 0};
  for (std::size_t k = 0; k < R.size(); ++k)
    out = out + R[k] * c.control_points[k];
  return out;
}

/// Rational basis sampled at s_t = t / (frames - 1), shape frames x n.
inline Tensor sample_basis(const NurbsCurve &c, std::size_t frames) {
  const std::size_t n = c.size();
  std::vector<double> m(frames * n);
  for (std::size_t t = 0; t < frames; ++t) {
    const double s = frames > 1 ? static_cast<double>(t) / static_cast<double>(frames - 1) : 0.0;
    const auto R = rational_basis(c, s);
    std::copy(R.begin(), R.end(), m.begin() + static_cast<std::ptrdiff_t>(t * n));
  }
  return Tensor({frames, n}, std::move(m));
}

inline Tensor control_tensor(const NurbsCurve &c) {
  std::vector<double> v;
  v.reserve(c.size() * 3);
  for (const auto &p : c.control_points)
    v.insert(v.end(), p.begin(), p.end());
  return Tensor({c.size(), 3}, std::move(v));
}

} // namespace rigmo
