#pragma once

// Structural analysis of a skeleton: trunk, limb chains, mirror pairs and a
// coarse body class. Axis convention: +y up, +z forward, +x left.

#include "rigmo/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rigmo {

enum class Morphology { Biped, Quadruped, NonLiving, FlyingAquatic };

inline std::string_view to_string(Morphology m) {
  switch (m) {
  case Morphology::Biped: return "biped";
  case Morphology::Quadruped: return "quadruped";
  case Morphology::NonLiving: return "non-living";
  case Morphology::FlyingAquatic: return "flying-aquatic";
  }
  return "non-living";
}

inline std::optional<Morphology> parse_morphology(std::string_view s) {
  for (auto m : {Morphology::Biped, Morphology::Quadruped, Morphology::NonLiving,
                 Morphology::FlyingAquatic})
    if (to_string(m) == s)
      return m;
  return std::nullopt;
}

enum class Side { Center, Left, Right };

/// Root-to-leaf path hanging off the trunk.
struct LimbChain {
  std::vector<std::size_t> joints;
  bool ground = false;
  std::optional<std::size_t> mirror; // index of the paired chain
  Side side = Side::Center;
  std::string group; // leg, front_leg, arm, tail
};

struct MorphologyReport {
  Morphology morphology = Morphology::NonLiving;

  std::size_t depth = 0;
  std::size_t max_branching = 0;
  std::size_t limb_pairs = 0;
  double bone_mean = 0, bone_std = 0, bone_min = 0, bone_max = 0;

  std::vector<std::size_t> trunk;
  std::vector<LimbChain> chains;
  std::vector<std::size_t> feet;
  std::vector<std::string> group; // per joint: trunk, leg, front_leg, arm, tail, other
  std::vector<Side> side;         // per joint

  /// Joint pairs (left, right) taken element-wise from mirrored chains.
  std::vector<std::pair<std::size_t, std::size_t>> joint_pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto &c : chains)
      if (c.mirror && c.side == Side::Left) {
        const auto &m = chains[*c.mirror];
        for (std::size_t k = 0; k < c.joints.size(); ++k)
          out.emplace_back(c.joints[k], m.joints[k]);
      }
    return out;
  }
};

namespace detail {

inline std::vector<std::size_t> subtree_sizes(const Skeleton &s) {
  std::vector<std::size_t> size(s.size(), 1);
  for (auto it = s.topo_order.rbegin(); it != s.topo_order.rend(); ++it)
    if (const auto &p = s.joints[*it].parent)
      size[*p] += size[*it];
  return size;
}

inline std::size_t largest_child(const std::vector<std::size_t> &candidates,
                                 const std::vector<std::size_t> &sizes) {
  std::size_t best = candidates.front();
  for (std::size_t c : candidates)
    if (sizes[c] > sizes[best])
      best = c;
  return best;
}

} // namespace detail

inline MorphologyReport analyze_morphology(const Skeleton &s) {
  MorphologyReport r;
  const std::size_t n = s.size();
  r.group.assign(n, "other");
  r.side.assign(n, Side::Center);

  Vec3 lo = s.joints[0].rest_position, hi = lo;
  for (const auto &j : s.joints)
    for (std::size_t e = 0; e < 3; ++e) {
      lo[e] = std::min(lo[e], j.rest_position[e]);
      hi[e] = std::max(hi[e], j.rest_position[e]);
    }
  const Vec3 extent = hi - lo;
  const double scale = std::max({extent[0], extent[1], extent[2], 1e-12});
  const double height = extent[1] > 1e-9 * scale ? extent[1] : scale;
  const double tol = 0.05 * scale;
  const double x0 = s.joints[s.root].rest_position[0];

  // Diagnostics.
  std::vector<std::size_t> depth(n, 1);
  for (std::size_t j : s.topo_order)
    if (const auto &p = s.joints[j].parent)
      depth[j] = depth[*p] + 1;
  r.depth = *std::max_element(depth.begin(), depth.end());
  for (const auto &c : s.children)
    r.max_branching = std::max(r.max_branching, c.size());
  std::vector<double> bones;
  for (std::size_t j = 0; j < n; ++j)
    if (s.joints[j].parent)
      bones.push_back(length(s.rest_offsets[j]));
  if (!bones.empty()) {
    r.bone_min = *std::min_element(bones.begin(), bones.end());
    r.bone_max = *std::max_element(bones.begin(), bones.end());
    double sum = 0, sq = 0;
    for (double b : bones)
      sum += b;
    r.bone_mean = sum / static_cast<double>(bones.size());
    for (double b : bones)
      sq += (b - r.bone_mean) * (b - r.bone_mean);
    r.bone_std = std::sqrt(sq / static_cast<double>(bones.size()));
  }

  const auto sizes = detail::subtree_sizes(s);

  // Trunk: follow sagittal children with the largest subtree.
  std::vector<bool> in_trunk(n, false);
  for (std::size_t j = s.root;;) {
    r.trunk.push_back(j);
    in_trunk[j] = true;
    std::vector<std::size_t> mid;
    for (std::size_t c : s.children[j])
      if (std::abs(s.joints[c].rest_position[0] - x0) < tol)
        mid.push_back(c);
    if (mid.empty())
      break;
    j = detail::largest_child(mid, sizes);
  }
  for (std::size_t j : r.trunk)
    r.group[j] = "trunk";

  // Limb chains: non-trunk children of trunk joints, followed to a leaf.
  for (std::size_t t : r.trunk)
    for (std::size_t c : s.children[t]) {
      if (in_trunk[c])
        continue;
      LimbChain chain;
      for (std::size_t j = c;;) {
        chain.joints.push_back(j);
        if (s.children[j].empty())
          break;
        j = detail::largest_child(s.children[j], sizes);
      }
      if (chain.joints.size() < 2)
        continue;
      chain.ground = s.joints[chain.joints.back()].rest_position[1] <= lo[1] + 0.1 * height;
      r.chains.push_back(std::move(chain));
    }

  // Mirror pairs.
  std::size_t ground_chains = 0, ground_pairs = 0, other_pairs = 0;
  for (std::size_t a = 0; a < r.chains.size(); ++a) {
    ground_chains += r.chains[a].ground;
    if (r.chains[a].mirror)
      continue;
    const Vec3 pa = s.joints[r.chains[a].joints.front()].rest_position;
    if (std::abs(pa[0] - x0) < tol)
      continue;
    for (std::size_t b = a + 1; b < r.chains.size(); ++b) {
      if (r.chains[b].mirror || r.chains[b].joints.size() != r.chains[a].joints.size() ||
          r.chains[b].ground != r.chains[a].ground)
        continue;
      const Vec3 pb = s.joints[r.chains[b].joints.front()].rest_position;
      if (std::abs((pa[0] - x0) + (pb[0] - x0)) < tol && std::abs(pa[1] - pb[1]) < tol &&
          std::abs(pa[2] - pb[2]) < tol) {
        r.chains[a].mirror = b;
        r.chains[b].mirror = a;
        const bool a_left = pa[0] > x0;
        r.chains[a].side = a_left ? Side::Left : Side::Right;
        r.chains[b].side = a_left ? Side::Right : Side::Left;
        (r.chains[a].ground ? ground_pairs : other_pairs) += 1;
        break;
      }
    }
  }
  r.limb_pairs = ground_pairs + other_pairs;

  const double horizontal = std::max(extent[0], extent[2]);
  if (ground_chains >= 4 && ground_pairs >= 2)
    r.morphology = Morphology::Quadruped;
  else if (ground_chains == 2 && ground_pairs == 1 && other_pairs >= 1)
    r.morphology = Morphology::Biped;
  else if (horizontal > 1.5 * extent[1] && other_pairs >= 1 && ground_pairs == 0)
    r.morphology = Morphology::FlyingAquatic;
  else
    r.morphology = Morphology::NonLiving;

  // Groups. In quadrupeds the ground pair furthest forward (+z) is front_leg.
  std::optional<std::size_t> front;
  if (r.morphology == Morphology::Quadruped) {
    double best = -1e300;
    for (std::size_t a = 0; a < r.chains.size(); ++a)
      if (r.chains[a].ground && r.chains[a].mirror) {
        const double z = s.joints[r.chains[a].joints.front()].rest_position[2];
        if (z > best) {
          best = z;
          front = a;
        }
      }
  }
  for (std::size_t a = 0; a < r.chains.size(); ++a) {
    auto &c = r.chains[a];
    if (!c.mirror)
      c.group = "tail";
    else if (c.ground)
      c.group = (front && (a == *front || a == *r.chains[*front].mirror)) ? "front_leg" : "leg";
    else
      c.group = "arm";
    for (std::size_t j : c.joints) {
      r.group[j] = c.group;
      r.side[j] = c.side;
    }
    if (c.ground)
      r.feet.push_back(c.joints.back());
  }
  return r;
}

inline Morphology classify_morphology(const Skeleton &s) { return analyze_morphology(s).morphology; }

/// Fills in categories the rig did not state: trunk -> spine with a head at
/// its tip, ground chains -> ball, hinge..., foot, paired chains -> ball,
/// hinge..., other at the leaf, unpaired chains -> tail.
inline void assign_categories(Skeleton &s, const MorphologyReport &r) {
  auto set = [&](std::size_t j, JointCategory c) {
    if (!s.joints[j].category_given)
      s.joints[j].category = c;
  };
  for (std::size_t j = 0; j < s.size(); ++j)
    set(j, JointCategory::Other);
  for (std::size_t k = 0; k < r.trunk.size(); ++k)
    set(r.trunk[k],
        k + 1 == r.trunk.size() && k > 0 ? JointCategory::Head : JointCategory::Spine);
  for (const auto &c : r.chains) {
    const std::size_t m = c.joints.size();
    for (std::size_t k = 0; k < m; ++k) {
      JointCategory cat = JointCategory::Tail;
      if (c.mirror) {
        if (k == 0)
          cat = JointCategory::BallLimb;
        else if (k + 1 == m)
          cat = c.ground ? JointCategory::Foot : JointCategory::Other;
        else
          cat = JointCategory::HingeLimb;
      } else if (c.ground && k + 1 == m) {
        cat = JointCategory::Foot;
      }
      set(c.joints[k], cat);
    }
  }
}

} // namespace rigmo
