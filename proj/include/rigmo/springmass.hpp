#pragma once

// Spring-mass secondary motion around skinned targets. Only dynamic
// vertices are simulated; anchors follow the target exactly.

#include "rigmo/kinematics.hpp"

#include <map>

namespace rigmo {

struct SpringMassParams {
  double k_pos = 80.0;
  double k_struct = 120.0;
  double damping = 4.0;
  double gravity = 9.8;
  double dt = 1.0 / 240.0;
  std::size_t substeps = 5;
  double vel_max = 10.0;
  double d_max_fraction = 0.15; // of the region's rest bounding-box diagonal
  double mass = 1.0;
  double stretch_limit = 0.3; // |dl| <= stretch_limit * l0

  void validate() const {
    if (!(dt > 0) || substeps < 1 || !(vel_max > 0) || !(d_max_fraction > 0) || !(mass > 0) ||
        k_pos < 0 || k_struct < 0 || damping < 0 || !(stretch_limit > 0))
      throw DataError("spring-mass parameters out of range");
  }
};

/// Per-region overrides; unset fields inherit the global parameters.
struct RegionOverride {
  std::optional<double> k_pos, k_struct, damping, mass, d_max_fraction;
};

struct DynamicRegionMask {
  std::vector<bool> dynamic;       // per vertex
  std::vector<double> blend;       // w_i; 0 for anchors
  std::vector<std::string> region; // per vertex; empty means the default region

  std::size_t dynamic_count() const {
    return static_cast<std::size_t>(std::count(dynamic.begin(), dynamic.end(), true));
  }

  void validate(std::size_t vertices) const {
    if (dynamic.size() != vertices || blend.size() != vertices ||
        (!region.empty() && region.size() != vertices))
      throw DataError("mask does not match the vertex count " + std::to_string(vertices));
    for (std::size_t i = 0; i < vertices; ++i) {
      if (!dynamic[i] && blend[i] != 0.0)
        throw DataError("anchor vertex " + std::to_string(i) + " has a nonzero blend weight");
      if (dynamic[i] && !(blend[i] > 0.0 && blend[i] <= 1.0))
        throw DataError("dynamic vertex " + std::to_string(i) + " needs a blend weight in (0, 1]");
    }
  }
};

inline bool is_dynamic_category(JointCategory c) { return c == JointCategory::Tail; }
inline bool is_anchor_category(JointCategory c) {
  return c == JointCategory::Spine || c == JointCategory::Head || c == JointCategory::Foot;
}

/// w_i = total skinning weight on tail/appendage joints. A vertex is an
/// anchor when w_i = 0 or when a spine/head/foot joint strictly outweighs
/// every dynamic-category joint; ties go to dynamic.
inline DynamicRegionMask build_mask(const Skeleton &skel, const SkinnedMesh &mesh) {
  const std::size_t V = mesh.vertex_count();
  DynamicRegionMask m;
  m.dynamic.assign(V, false);
  m.blend.assign(V, 0.0);
  m.region.assign(V, "");
  for (std::size_t i = 0; i < V; ++i) {
    double w = 0.0, best_anchor = 0.0, best_dynamic = 0.0;
    for (auto [j, wj] : mesh.weights[i]) {
      const JointCategory c = skel.joints[j].category;
      if (is_dynamic_category(c)) {
        w += wj;
        best_dynamic = std::max(best_dynamic, wj);
      } else if (is_anchor_category(c)) {
        best_anchor = std::max(best_anchor, wj);
      }
    }
    w = std::clamp(w, 0.0, 1.0);
    if (w > 0.0 && !(best_anchor > best_dynamic)) {
      m.dynamic[i] = true;
      m.blend[i] = w;
    }
  }
  return m;
}

struct SimState {
  Tensor q;   // D x 3 positions of dynamic vertices
  Tensor vel; // D x 3
};

namespace detail {

/// Structural edge whose endpoints are dynamic (index into the simulated
/// set) or anchors (index into the full vertex set, position from the target).
struct SpringEdge {
  std::size_t a, b;
  bool a_dynamic, b_dynamic;
  double rest;
  double k;
};

/// Sum over edges of k * clamp(|d| - l0, +-limit*l0) * d/|d| acting on
/// endpoint a (and the negative on b), with d = p_b - p_a. Edges shorter
/// than 1e-9 exert no force.
inline Tensor structural_forces(const Tensor &q, const Tensor &target,
                                const std::vector<SpringEdge> &edges, double limit) {
  const std::size_t D = q.dim(0);
  std::vector<double> f(D * 3, 0.0);
  struct Local {
    double u[3], len, dl;
    bool inside, active;
  };
  std::vector<Local> cache(edges.size());
  auto pos = [&](std::size_t idx, bool dyn, std::size_t e) {
    return dyn ? q[idx * 3 + e] : target[idx * 3 + e];
  };
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto &s = edges[k];
    Local &c = cache[k];
    double d[3], l2 = 0;
    for (std::size_t e = 0; e < 3; ++e) {
      d[e] = pos(s.b, s.b_dynamic, e) - pos(s.a, s.a_dynamic, e);
      l2 += d[e] * d[e];
    }
    c.len = std::sqrt(l2);
    c.active = c.len >= 1e-9;
    if (!c.active)
      continue;
    const double raw = c.len - s.rest, cap = limit * s.rest;
    c.inside = raw >= -cap && raw <= cap;
    c.dl = std::clamp(raw, -cap, cap);
    for (std::size_t e = 0; e < 3; ++e) {
      c.u[e] = d[e] / c.len;
      const double fe = s.k * c.dl * c.u[e];
      if (s.a_dynamic)
        f[s.a * 3 + e] += fe;
      if (s.b_dynamic)
        f[s.b * 3 + e] -= fe;
    }
  }
  return finish("structural_forces", {D, 3}, std::move(f), {&q, &target},
                [edges, cache](std::span<const double> g, std::span<std::vector<double> *> pg) {
                  for (std::size_t k = 0; k < edges.size(); ++k) {
                    const auto &s = edges[k];
                    const auto &c = cache[k];
                    if (!c.active)
                      continue;
                    // f_a = F(d), f_b = -F(d); dF/dd is symmetric.
                    double ga[3] = {0, 0, 0};
                    for (std::size_t e = 0; e < 3; ++e) {
                      if (s.a_dynamic)
                        ga[e] += g[s.a * 3 + e];
                      if (s.b_dynamic)
                        ga[e] -= g[s.b * 3 + e];
                    }
                    const double radial = c.inside ? 1.0 : 0.0;
                    const double tangential = c.dl / c.len;
                    const double ug = c.u[0] * ga[0] + c.u[1] * ga[1] + c.u[2] * ga[2];
                    double gd[3];
                    for (std::size_t e = 0; e < 3; ++e)
                      gd[e] = s.k * (radial * c.u[e] * ug + tangential * (ga[e] - c.u[e] * ug));
                    auto *to_b = s.b_dynamic ? pg[0] : pg[1];
                    auto *to_a = s.a_dynamic ? pg[0] : pg[1];
                    for (std::size_t e = 0; e < 3; ++e) {
                      if (to_b)
                        (*to_b)[s.b * 3 + e] += gd[e];
                      if (to_a)
                        (*to_a)[s.a * 3 + e] -= gd[e];
                    }
                  }
                });
}

} // namespace detail

/// Rows of x (N x 3) rescaled to norm at most max[i]. Identity inside the
/// ball (boundary included), exact radial-projection Jacobian outside.
inline Tensor clamp_norm_rows(const Tensor &x, const std::vector<double> &max) {
  const std::size_t N = x.dim(0);
  if (x.rank() != 2 || x.dim(1) != 3 || max.size() != N)
    throw ShapeError("clamp_norm_rows expects N x 3 rows and N limits");
  std::vector<double> out(x.values());
  std::vector<double> scale(N, 1.0), norms(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const double n = std::sqrt(x[i * 3] * x[i * 3] + x[i * 3 + 1] * x[i * 3 + 1] +
                               x[i * 3 + 2] * x[i * 3 + 2]);
    norms[i] = n;
    if (n > max[i]) {
      scale[i] = max[i] / n;
      for (std::size_t e = 0; e < 3; ++e)
        out[i * 3 + e] *= scale[i];
    }
  }
  std::vector<double> xv(x.values());
  return detail::finish("clamp_norm_rows", {N, 3}, std::move(out), {&x},
                        [xv, scale, norms](std::span<const double> g,
                                           std::span<std::vector<double> *> pg) {
                          auto &gx = *pg[0];
                          for (std::size_t i = 0; i < scale.size(); ++i) {
                            if (scale[i] == 1.0) {
                              for (std::size_t e = 0; e < 3; ++e)
                                gx[i * 3 + e] += g[i * 3 + e];
                              continue;
                            }
                            // y = m x / |x|: J = (m/|x|) (I - u u^T)
                            double ug = 0;
                            for (std::size_t e = 0; e < 3; ++e)
                              ug += xv[i * 3 + e] / norms[i] * g[i * 3 + e];
                            for (std::size_t e = 0; e < 3; ++e)
                              gx[i * 3 + e] +=
                                  scale[i] * (g[i * 3 + e] - xv[i * 3 + e] / norms[i] * ug);
                          }
                        });
}

/// Simulation topology and per-vertex constants for one mesh and mask.
struct SpringSystem {
  std::size_t vertices = 0;
  std::vector<std::size_t> dynamic; // simulated vertex ids
  std::vector<double> blend;        // per simulated vertex
  std::vector<detail::SpringEdge> edges;
  Tensor k_pos, damping, inv_mass, gravity; // D x 1, D x 1, D x 1, D x 3
  std::vector<double> d_max;                // per simulated vertex
  std::vector<double> vel_max;
  SpringMassParams params;

  std::size_t size() const { return dynamic.size(); }

  static SpringSystem build(const SkinnedMesh &mesh, const DynamicRegionMask &mask,
                            const SpringMassParams &p,
                            const std::map<std::string, RegionOverride> &overrides = {}) {
    p.validate();
    const std::size_t V = mesh.vertex_count();
    mask.validate(V);
    SpringSystem s;
    s.vertices = V;
    s.params = p;
    std::vector<std::size_t> slot(V, SIZE_MAX);
    for (std::size_t i = 0; i < V; ++i)
      if (mask.dynamic[i]) {
        slot[i] = s.dynamic.size();
        s.dynamic.push_back(i);
        s.blend.push_back(mask.blend[i]);
      }
    const std::size_t D = s.dynamic.size();
    auto region_of = [&](std::size_t v) {
      return mask.region.empty() ? std::string() : mask.region[v];
    };
    auto pick = [&](std::size_t v, auto field, double fallback) {
      const auto it = overrides.find(region_of(v));
      if (it != overrides.end() && it->second.*field)
        return *(it->second.*field);
      return fallback;
    };

    // Region rest bounding boxes for the displacement clamp.
    std::map<std::string, std::pair<Vec3, Vec3>> boxes;
    for (std::size_t v : s.dynamic) {
      const Vec3 &r = mesh.rest_vertices[v];
      auto [it, fresh] = boxes.try_emplace(region_of(v), r, r);
      for (std::size_t e = 0; e < 3; ++e) {
        it->second.first[e] = std::min(it->second.first[e], r[e]);
        it->second.second[e] = std::max(it->second.second[e], r[e]);
      }
    }

    // A single-point region has no extent; fall back to the whole mesh, then to unit scale.
    double mesh_diag = 0.0;
    if (V > 0) {
      Vec3 lo = mesh.rest_vertices[0], hi = lo;
      for (const auto &r : mesh.rest_vertices)
        for (std::size_t e = 0; e < 3; ++e) {
          lo[e] = std::min(lo[e], r[e]);
          hi[e] = std::max(hi[e], r[e]);
        }
      mesh_diag = length(hi - lo);
    }

    std::vector<double> kp(D), dmp(D), im(D), grav(D * 3, 0.0);
    s.d_max.resize(D);
    s.vel_max.assign(D, p.vel_max);
    for (std::size_t k = 0; k < D; ++k) {
      const std::size_t v = s.dynamic[k];
      kp[k] = pick(v, &RegionOverride::k_pos, p.k_pos);
      dmp[k] = pick(v, &RegionOverride::damping, p.damping);
      const double m = pick(v, &RegionOverride::mass, p.mass);
      if (!(m > 0))
        throw DataError("region mass must be positive");
      im[k] = 1.0 / m;
      grav[k * 3 + 1] = -p.gravity * m;
      const auto &box = boxes.at(region_of(v));
      double diag = length(box.second - box.first);
      if (!(diag > 0))
        diag = mesh_diag > 0 ? mesh_diag : 1.0;
      s.d_max[k] = pick(v, &RegionOverride::d_max_fraction, p.d_max_fraction) * diag;
      if (!(s.d_max[k] > 0))
        throw DataError("region displacement limit must be positive");
    }
    s.k_pos = Tensor({D, 1}, std::move(kp));
    s.damping = Tensor({D, 1}, std::move(dmp));
    s.inv_mass = Tensor({D, 1}, std::move(im));
    s.gravity = Tensor({D, 3}, std::move(grav));

    for (auto [a, b] : mesh.edges()) {
      const bool da = mask.dynamic[a], db = mask.dynamic[b];
      if (!da && !db)
        continue;
      const double rest = length(mesh.rest_vertices[b] - mesh.rest_vertices[a]);
      if (!(rest > 1e-12))
        continue;
      const std::size_t pivot = da ? a : b;
      s.edges.push_back({da ? slot[a] : a, db ? slot[b] : b, da, db, rest,
                         pick(pivot, &RegionOverride::k_struct, p.k_struct)});
    }
    return s;
  }

  /// One semi-implicit Euler step toward the target (V x 3).
  SimState step(const SimState &state, const Tensor &target) const {
    const Tensor target_dyn = gather_rows(target, dynamic);
    const Tensor force = (state.q - target_dyn) * (-k_pos) +
                         detail::structural_forces(state.q, target, edges, params.stretch_limit) -
                         state.vel * damping + gravity;
    const Tensor vel = clamp_norm_rows(state.vel + force * inv_mass * params.dt, vel_max);
    const Tensor moved = state.q + vel * params.dt;
    const Tensor q = target_dyn + clamp_norm_rows(moved - target_dyn, d_max);
    return {q, vel};
  }

  SimState rest_state(const Tensor &target) const {
    return {gather_rows(target, dynamic), Tensor::zeros({dynamic.size(), 3})};
  }

  /// q_out = target + w (q - target) on dynamic vertices; anchors pass through.
  Tensor blend_output(const SimState &state, const Tensor &target) const {
    if (dynamic.empty())
      return target;
    const Tensor w({dynamic.size(), 1}, blend);
    const Tensor delta = (state.q - gather_rows(target, dynamic)) * w;
    return target + scatter_add_rows(delta, dynamic, vertices);
  }

  /// Runs `substeps` steps per frame of lbs (T x V x 3), starting at rest on
  /// frame 0. The whole rollout is on the tape of lbs.
  Tensor simulate(const Tensor &lbs) const {
    if (lbs.rank() != 3 || lbs.dim(1) != vertices || lbs.dim(2) != 3)
      throw ShapeError("simulate expects T x V x 3 frames");
    const std::size_t T = lbs.dim(0);
    if (dynamic.empty())
      return lbs;
    std::vector<Tensor> frames;
    SimState state;
    for (std::size_t t = 0; t < T; ++t) {
      const Tensor target = select(lbs, 0, t);
      if (t == 0)
        state = rest_state(target);
      for (std::size_t k = 0; k < params.substeps; ++k)
        state = step(state, target);
      frames.push_back(blend_output(state, target));
    }
    return stack(frames, 0);
  }
};

inline Tensor simulate_sequence(const Tensor &lbs, const SkinnedMesh &mesh,
                                const DynamicRegionMask &mask, const SpringMassParams &p) {
  return SpringSystem::build(mesh, mask, p).simulate(lbs);
}

} // namespace rigmo
