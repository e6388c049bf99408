#pragma once

// Small fixed-size vector/matrix helpers for untracked geometry (rig
// analysis, simulation setup, oracles). Row-major storage.

#include <array>
#include <cmath>

namespace rigmo {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;
using Mat4 = std::array<double, 16>;

inline Vec3 operator+(const Vec3 &a, const Vec3 &b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3 &a, const Vec3 &b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3 &a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3 &a, const Vec3 &b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double length(const Vec3 &a) { return std::sqrt(dot(a, a)); }
inline Vec3 cross(const Vec3 &a, const Vec3 &b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline Vec3 normalize(const Vec3 &a) { return (1.0 / length(a)) * a; }

inline Mat4 identity4() {
  return {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
}

inline Mat4 translation4(const Vec3 &t) {
  Mat4 m = identity4();
  m[3] = t[0];
  m[7] = t[1];
  m[11] = t[2];
  return m;
}

inline Mat4 mul4(const Mat4 &a, const Mat4 &b) {
  Mat4 c{};
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k)
      for (int q = 0; q < 4; ++q)
        c[r * 4 + q] += a[r * 4 + k] * b[k * 4 + q];
  return c;
}

inline Vec3 transform_point(const Mat4 &m, const Vec3 &p) {
  return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
          m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
          m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11]};
}

/// Rigid transform from a rotation block and a translation column.
inline Mat4 rigid4(const Mat3 &r, const Vec3 &t) {
  return {r[0], r[1], r[2], t[0], r[3], r[4], r[5], t[1],
          r[6], r[7], r[8], t[2], 0,    0,    0,    1};
}

/// Inverse of a rigid transform [R | t].
inline Mat4 rigid_inverse(const Mat4 &m) {
  Mat4 out = identity4();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      out[r * 4 + c] = m[c * 4 + r];
  for (int r = 0; r < 3; ++r)
    out[r * 4 + 3] = -(out[r * 4 + 0] * m[3] + out[r * 4 + 1] * m[7] +
                       out[r * 4 + 2] * m[11]);
  return out;
}

} // namespace rigmo
