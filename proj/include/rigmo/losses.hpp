#pragma once

// Physics-inspired regularizers. Each returns a scalar tensor on the tape of
// its inputs.

#include "rigmo/skeleton.hpp"

#include <map>
#include <string>

namespace rigmo {

/// Per-category rotation magnitude limits in radians.
struct RomLimits {
  std::map<JointCategory, double> limit{
      {JointCategory::Spine, 0.4},    {JointCategory::HingeLimb, 1.5},
      {JointCategory::BallLimb, 1.2}, {JointCategory::Head, 0.6},
      {JointCategory::Tail, 2.0},     {JointCategory::Foot, 1.0},
      {JointCategory::Other, 1.0}};

  double of(JointCategory c) const {
    const auto it = limit.find(c);
    if (it == limit.end())
      throw std::out_of_range("no ROM limit for category " + std::string(to_string(c)));
    return it->second;
  }

  std::vector<double> per_joint(const Skeleton &s) const {
    std::vector<double> out;
    out.reserve(s.size());
    for (const auto &j : s.joints)
      out.push_back(of(j.category));
    return out;
  }
};

/// Linear ramp of a weight over normalized progress u/M: 0 before `start`,
/// 1 after `end`. start == end == 0 means constant.
struct Ramp {
  double start = 0.0;
  double end = 0.0;

  double factor(double progress) const {
    if (progress >= end)
      return 1.0;
    if (progress <= start)
      return 0.0;
    return (progress - start) / (end - start);
  }
};

struct LossWeights {
  double vel = 1.0;
  double accel = 1.0;
  double smooth = 1.0;
  double rom = 10.0;
  double sym = 0.5;
  double cyclic = 1.0;
  double ground = 10.0;
  double contact = 1.0;
  double offset = 1.0;
  double offset_velocity = 1.0; // lambda_delta
  double mosds = 1.0;
  double appear = 0.1;
  double motion = 1.0;
  double phy = 1.0;
  double env = 1.0;

  Ramp mosds_ramp{0.0, 0.1};
  Ramp contact_ramp{0.2, 0.3};

  /// Weights for iteration u of M (1-based).
  LossWeights at(std::size_t u, std::size_t m) const {
    LossWeights w = *this;
    const double p = m ? static_cast<double>(u) / static_cast<double>(m) : 1.0;
    w.mosds *= mosds_ramp.factor(p);
    w.contact *= contact_ramp.factor(p);
    return w;
  }

  void validate() const {
    for (double v : {vel, accel, smooth, rom, sym, cyclic, ground, contact, offset,
                     offset_velocity, mosds, appear, motion, phy, env})
      if (!(v >= 0.0))
        throw DataError("loss weights must be non-negative");
    for (const Ramp &r : {mosds_ramp, contact_ramp})
      if (r.start < 0.0 || r.end < r.start)
        throw DataError("weight ramps need 0 <= start <= end");
  }
};

namespace detail {

/// Per-frame kinematic vector Phi_t = (rotations, root translation), T x (3J+3).
inline Tensor kinematic_sequence(const Tensor &rotations, const Tensor &root) {
  const std::size_t T = rotations.dim(0);
  return concat({reshape(rotations, {T, rotations.size() / T}), root}, 1);
}

inline Tensor temporal_diff(const Tensor &x) {
  const std::size_t T = x.dim(0);
  return slice(x, 0, 1, T) - slice(x, 0, 0, T - 1);
}

} // namespace detail

/// lambda_vel * mean ||dPhi||^2 + lambda_accel * mean ||d^2 Phi||^2.
inline Tensor smoothness_loss(const Tensor &rotations, const Tensor &root, double w_vel,
                              double w_accel) {
  const std::size_t T = rotations.dim(0);
  if (T < 3)
    throw ShapeError("smoothness loss needs at least 3 frames");
  const Tensor phi = detail::kinematic_sequence(rotations, root);
  const Tensor vel = detail::temporal_diff(phi);
  const Tensor acc = detail::temporal_diff(vel);
  return sq_norm(vel) * (w_vel / static_cast<double>(T - 1)) +
         sq_norm(acc) * (w_accel / static_cast<double>(T - 2));
}

/// mean over (t, j) of max(0, ||R_tj|| - limit_j)^2.
inline Tensor rom_loss(const Tensor &rotations, const std::vector<double> &limits) {
  if (limits.size() != rotations.dim(1))
    throw ShapeError("one ROM limit per joint is required");
  const Tensor excess = norm(rotations, 2) - Tensor::vector(limits);
  return mean(square(hinge(excess, 0.0)));
}

/// mean over t and pairs of (||R_left|| - ||R_right||)^2. Zero without pairs.
inline Tensor symmetry_loss(const Tensor &rotations,
                            const std::vector<std::pair<std::size_t, std::size_t>> &pairs) {
  if (pairs.empty())
    return sum(rotations) * 0.0;
  const Tensor n = norm(rotations, 2);
  std::vector<std::size_t> left, right;
  for (auto [l, r] : pairs) {
    left.push_back(l);
    right.push_back(r);
  }
  const Tensor nt = transpose(n, 0, 1); // J x T
  const Tensor d = gather_rows(nt, left) - gather_rows(nt, right);
  return mean(square(d));
}

/// ||Phi_1 - Phi_T||^2 + ||dPhi_1 - dPhi_T||^2.
inline Tensor cyclic_loss(const Tensor &rotations, const Tensor &root) {
  const std::size_t T = rotations.dim(0);
  if (T < 3)
    throw ShapeError("cyclic loss needs at least 3 frames");
  const Tensor phi = detail::kinematic_sequence(rotations, root);
  const Tensor first = select(phi, 0, 0), last = select(phi, 0, T - 1);
  const Tensor v_first = select(phi, 0, 1) - first;
  const Tensor v_last = last - select(phi, 0, T - 2);
  return sq_norm(first - last) + sq_norm(v_first - v_last);
}

/// mean over (t, i) of max(0, -(v_up - ground))^2 for T x V x 3 vertices.
inline Tensor ground_loss(const Tensor &vertices, double ground_height,
                          std::size_t up_axis = 1) {
  if (vertices.rank() != 3 || vertices.dim(2) != 3)
    throw ShapeError("ground loss expects T x V x 3 vertices");
  const Tensor height = select(vertices, 2, up_axis);
  return mean(square(hinge(Tensor::scalar(ground_height) - height, 0.0)));
}

inline constexpr double contact_epsilon = 1e-8;

/// Horizontal foot velocity penalty during contact, averaged over feet.
/// `feet` is T x F x 3. The contact gate h = [p_up < threshold] is computed
/// from values and carries no gradient.
inline Tensor contact_loss(const Tensor &feet, double threshold, std::size_t up_axis = 1) {
  if (feet.rank() != 3 || feet.dim(2) != 3)
    throw ShapeError("contact loss expects T x F x 3 foot positions");
  const std::size_t T = feet.dim(0), F = feet.dim(1);
  if (F == 0 || T < 2)
    return sum(feet) * 0.0;
  const Tensor vel = detail::temporal_diff(feet); // (T-1) x F x 3
  std::vector<double> horizontal(3, 1.0);
  horizontal[up_axis] = 0.0;
  const Tensor speed2 = sum(square(vel) * Tensor::vector(horizontal), 2); // (T-1) x F
  std::vector<double> gate((T - 1) * F);
  std::vector<double> count(F, 0.0);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      const double h = feet.at({t, f, up_axis}) < threshold ? 1.0 : 0.0;
      gate[(t - 1) * F + f] = h;
      count[f] += h;
    }
  std::vector<double> inv(F);
  for (std::size_t f = 0; f < F; ++f)
    inv[f] = 1.0 / (count[f] + contact_epsilon) / static_cast<double>(F);
  const Tensor per_foot = sum(speed2 * Tensor({T - 1, F}, gate), 0);
  return sum(per_foot * Tensor::vector(inv));
}

/// mean_t ||delta_t||^2 + lambda_delta * mean_t ||delta_t - delta_{t-1}||^2.
inline Tensor offset_loss(const Tensor &offsets, double lambda_delta) {
  const std::size_t T = offsets.dim(0);
  if (T < 2)
    throw ShapeError("offset loss needs at least 2 frames");
  const Tensor d = reshape(offsets, {T, offsets.size() / T});
  return sq_norm(d) * (1.0 / static_cast<double>(T)) +
         sq_norm(detail::temporal_diff(d)) * (lambda_delta / static_cast<double>(T - 1));
}

/// Unweighted component losses for one iteration (smoothness already folds
/// in lambda_vel and lambda_accel).
struct LossTerms {
  Tensor proxy;
  Tensor smooth;
  Tensor rom;
  Tensor sym;
  Tensor cyclic;
  Tensor ground;
  Tensor contact;
  Tensor offset;
};

inline Tensor physics_loss(const LossTerms &l, const LossWeights &w) {
  return l.smooth * w.smooth + l.rom * w.rom + l.cyclic * w.cyclic + l.sym * w.sym;
}

inline Tensor environment_loss(const LossTerms &l, const LossWeights &w) {
  return l.ground * w.ground + l.contact * w.contact;
}

inline Tensor total_loss(const LossTerms &l, const LossWeights &w) {
  return l.proxy * w.mosds + physics_loss(l, w) * w.phy + environment_loss(l, w) * w.env +
         l.offset * w.offset;
}

} // namespace rigmo
