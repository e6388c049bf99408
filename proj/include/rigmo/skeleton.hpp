#pragma once

#include "rigmo/linalg.hpp"
#include "rigmo/ops.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace rigmo {

enum class JointCategory { Spine, HingeLimb, BallLimb, Foot, Head, Tail, Other };

inline std::string_view to_string(JointCategory c) {
  switch (c) {
  case JointCategory::Spine: return "spine";
  case JointCategory::HingeLimb: return "hinge-limb";
  case JointCategory::BallLimb: return "ball-limb";
  case JointCategory::Foot: return "foot";
  case JointCategory::Head: return "head";
  case JointCategory::Tail: return "tail";
  case JointCategory::Other: return "other";
  }
  return "other";
}

inline std::optional<JointCategory> parse_category(std::string_view s) {
  if (s == "spine") return JointCategory::Spine;
  if (s == "hinge-limb" || s == "hinge") return JointCategory::HingeLimb;
  if (s == "ball-limb" || s == "ball") return JointCategory::BallLimb;
  if (s == "foot") return JointCategory::Foot;
  if (s == "head") return JointCategory::Head;
  if (s == "tail" || s == "appendage" || s == "tail/appendage") return JointCategory::Tail;
  if (s == "other") return JointCategory::Other;
  return std::nullopt;
}

struct Joint {
  std::string name;
  std::optional<std::size_t> parent;
  Vec3 rest_position{0, 0, 0};
  JointCategory category = JointCategory::Other;
  /// False when the category is a default that rig analysis may overwrite.
  bool category_given = false;
};

/// Immutable kinematic tree with precomputed rest data.
struct Skeleton {
  std::vector<Joint> joints;
  std::vector<std::size_t> topo_order;
  std::vector<std::vector<std::size_t>> children;
  std::vector<Vec3> rest_offsets;
  std::vector<Mat4> inverse_bind;
  std::size_t root = 0;

  std::size_t size() const { return joints.size(); }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t j = 0; j < joints.size(); ++j)
      if (joints[j].name == name)
        return j;
    return std::nullopt;
  }

  /// Inverse bind matrices as a constant J x 4 x 4 tensor.
  Tensor inverse_bind_tensor() const {
    std::vector<double> v;
    v.reserve(joints.size() * 16);
    for (const auto &m : inverse_bind)
      v.insert(v.end(), m.begin(), m.end());
    return Tensor({joints.size(), 4, 4}, std::move(v));
  }
};

/// Validates the tree and precomputes depth-first order, bone offsets and
/// inverse bind matrices. Children are visited in input order.
inline Skeleton build_skeleton(std::vector<Joint> joints) {
  const std::size_t n = joints.size();
  if (n == 0)
    throw DataError("skeleton has no joints");
  Skeleton s;
  s.children.assign(n, {});
  std::optional<std::size_t> root;
  for (std::size_t j = 0; j < n; ++j) {
    const auto &p = joints[j].parent;
    if (!p) {
      if (root)
        throw DataError("multiple roots: '" + joints[*root].name + "' and '" +
                        joints[j].name + "'");
      root = j;
      continue;
    }
    if (*p >= n)
      throw DataError("joint '" + joints[j].name + "' has dangling parent index " +
                      std::to_string(*p));
    if (*p == j)
      throw DataError("cycle detected at joint '" + joints[j].name + "'");
    s.children[*p].push_back(j);
  }
  if (!root)
    throw DataError("skeleton has no root (cycle detected)");
  s.root = *root;

  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{*root};
  while (!stack.empty()) {
    const std::size_t j = stack.back();
    stack.pop_back();
    if (seen[j])
      throw DataError("cycle detected at joint '" + joints[j].name + "'");
    seen[j] = true;
    s.topo_order.push_back(j);
    const auto &ch = s.children[j];
    for (auto it = ch.rbegin(); it != ch.rend(); ++it)
      stack.push_back(*it);
  }
  if (s.topo_order.size() != n) {
    for (std::size_t j = 0; j < n; ++j)
      if (!seen[j])
        throw DataError("cycle detected at joint '" + joints[j].name + "'");
  }

  s.rest_offsets.resize(n);
  s.inverse_bind.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto &p = joints[j].parent;
    s.rest_offsets[j] = p ? joints[j].rest_position - joints[*p].rest_position
                          : joints[j].rest_position;
  }
  // The rest pose has identity rotations, so the global rest transform of a
  // joint is a pure translation to its rest position.
  for (std::size_t j = 0; j < n; ++j)
    s.inverse_bind[j] = rigid_inverse(translation4(joints[j].rest_position));
  s.joints = std::move(joints);
  return s;
}

/// Learnable motion state for T frames and J joints.
struct MotionParams {
  Tensor rotations;        // T x J x 3, axis-angle radians
  Tensor root_translation; // T x 3
  Tensor local_offsets;    // T x J x 3

  std::size_t frames() const { return root_translation.dim(0); }
  std::size_t joints() const { return rotations.dim(1); }

  static MotionParams zeros(std::size_t frames, std::size_t joints) {
    return {Tensor::zeros({frames, joints, 3}), Tensor::zeros({frames, 3}),
            Tensor::zeros({frames, joints, 3})};
  }

  void validate(std::size_t joint_count) const {
    const std::size_t t = root_translation.rank() == 2 ? root_translation.dim(0) : 0;
    if (root_translation.shape() != Shape{t, 3} ||
        rotations.shape() != Shape{t, joint_count, 3} ||
        local_offsets.shape() != Shape{t, joint_count, 3})
      throw ShapeError("motion params do not match T=" + std::to_string(t) +
                       ", J=" + std::to_string(joint_count));
    check_finite(rotations.values(), "motion rotations");
    check_finite(root_translation.values(), "motion root translation");
    check_finite(local_offsets.values(), "motion offsets");
  }
};

// ---------------------------------------------------------------------------
// Axis-angle rotations

namespace detail {

/// Rodrigues coefficients R = I + a K + b K^2 (K = skew(r)) and their
/// derivatives divided by theta: c = a'(theta)/theta, d = b'(theta)/theta.
struct RodriguesCoeffs {
  double a, b, c, d;
};

inline RodriguesCoeffs rodrigues_coeffs(double theta) {
  RodriguesCoeffs k{};
  const double t2 = theta * theta;
  if (theta < 1e-6) {
    k.a = 1.0 - t2 / 6.0;
    k.b = 0.5 - t2 / 24.0;
  } else {
    k.a = std::sin(theta) / theta;
    k.b = (1.0 - std::cos(theta)) / t2;
  }
  if (theta < 1e-2) {
    const double t4 = t2 * t2;
    k.c = -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0;
    k.d = -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0;
  } else {
    const double s = std::sin(theta), c = std::cos(theta);
    k.c = (theta * c - s) / (t2 * theta);
    k.d = (theta * s - 2.0 * (1.0 - c)) / (t2 * t2);
  }
  return k;
}

inline Mat3 skew(const Vec3 &r) {
  return {0, -r[2], r[1], r[2], 0, -r[0], -r[1], r[0], 0};
}

inline Mat3 mul3(const Mat3 &a, const Mat3 &b) {
  Mat3 c{};
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k)
      for (int q = 0; q < 3; ++q)
        c[r * 3 + q] += a[r * 3 + k] * b[k * 3 + q];
  return c;
}

} // namespace detail

/// Rodrigues rotation matrix for an axis-angle vector.
inline Mat3 rotation_matrix(const Vec3 &r) {
  const auto k = detail::rodrigues_coeffs(length(r));
  const Mat3 K = detail::skew(r);
  const Mat3 K2 = detail::mul3(K, K);
  Mat3 m{};
  for (int i = 0; i < 9; ++i)
    m[i] = (i % 4 == 0 ? 1.0 : 0.0) + k.a * K[i] + k.b * K2[i];
  return m;
}

/// Batched axis-angle to rotation matrix: (..., 3) -> (..., 3, 3).
inline Tensor axis_angle_to_matrix(const Tensor &r) {
  if (r.rank() < 1 || r.dim(r.rank() - 1) != 3)
    throw ShapeError("axis_angle_to_matrix expects trailing dimension 3, got " +
                     shape_str(r.shape()));
  const std::size_t n = r.size() / 3;
  Shape shape = r.shape();
  shape.push_back(3);
  std::vector<double> out(n * 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Mat3 m = rotation_matrix({r[3 * i], r[3 * i + 1], r[3 * i + 2]});
    std::copy(m.begin(), m.end(), out.begin() + static_cast<std::ptrdiff_t>(9 * i));
  }
  std::vector<double> rs = r.tracked() ? r.values() : std::vector<double>{};
  return detail::finish(
      "axis_angle_to_matrix", shape, std::move(out), {&r},
      [rs, n](std::span<const double> g, std::span<std::vector<double> *> pg) {
        auto &gr = *pg[0];
        for (std::size_t i = 0; i < n; ++i) {
          const Vec3 v{rs[3 * i], rs[3 * i + 1], rs[3 * i + 2]};
          const auto k = detail::rodrigues_coeffs(length(v));
          const Mat3 K = detail::skew(v);
          const Mat3 K2 = detail::mul3(K, K);
          const double *G = g.data() + 9 * i;
          double gK = 0, gK2 = 0;
          for (int e = 0; e < 9; ++e) {
            gK += G[e] * K[e];
            gK2 += G[e] * K2[e];
          }
          for (int axis = 0; axis < 3; ++axis) {
            Vec3 unit{0, 0, 0};
            unit[static_cast<std::size_t>(axis)] = 1.0;
            const Mat3 E = detail::skew(unit);
            const Mat3 EK = detail::mul3(E, K);
            const Mat3 KE = detail::mul3(K, E);
            double s = 0.0;
            for (int e = 0; e < 9; ++e)
              s += G[e] * (k.a * E[e] + k.b * (EK[e] + KE[e]));
            s += v[static_cast<std::size_t>(axis)] * (k.c * gK + k.d * gK2);
            gr[3 * i + static_cast<std::size_t>(axis)] += s;
          }
        }
      });
}

} // namespace rigmo
