#pragma once

#include "rigmo/skeleton.hpp"

#include <array>
#include <utility>

namespace rigmo {

/// Triangle mesh with linear-blend-skinning weights.
struct SkinnedMesh {
  using Influences = std::vector<std::pair<std::size_t, double>>;

  std::vector<Vec3> rest_vertices;
  std::vector<std::array<std::size_t, 3>> faces;
  std::vector<Influences> weights; // one sparse row per vertex
  std::vector<std::vector<double>> colors; // empty, or V rows of C values

  static constexpr std::size_t max_influences = 8;

  std::size_t vertex_count() const { return rest_vertices.size(); }

  /// Throws DataError naming the first offending vertex or face.
  void validate(std::size_t joint_count) const {
    const std::size_t v = rest_vertices.size();
    if (weights.size() != v)
      throw DataError("skin weights have " + std::to_string(weights.size()) +
                      " rows but the mesh has " + std::to_string(v) + " vertices");
    for (std::size_t i = 0; i < v; ++i) {
      const auto &row = weights[i];
      if (row.empty())
        throw DataError("vertex " + std::to_string(i) + " has no skin weights");
      if (row.size() > max_influences)
        throw DataError("vertex " + std::to_string(i) + " has more than " +
                        std::to_string(max_influences) + " influences");
      double s = 0.0;
      for (auto [j, w] : row) {
        if (j >= joint_count)
          throw DataError("vertex " + std::to_string(i) + " references joint " +
                          std::to_string(j) + " (skeleton has " +
                          std::to_string(joint_count) + ")");
        if (!(w >= 0.0))
          throw DataError("vertex " + std::to_string(i) + " has a negative weight");
        s += w;
      }
      if (std::abs(s - 1.0) > 1e-6)
        throw DataError("vertex " + std::to_string(i) + " weights sum to " +
                        std::to_string(s));
    }
    for (std::size_t f = 0; f < faces.size(); ++f)
      for (auto idx : faces[f])
        if (idx >= v)
          throw DataError("face " + std::to_string(f) + " index " +
                          std::to_string(idx) + " out of range");
    if (!colors.empty()) {
      if (colors.size() != v)
        throw DataError("vertex color count does not match vertex count");
      for (const auto &c : colors)
        if (c.size() != colors.front().size())
          throw DataError("vertex colors have inconsistent channel counts");
    }
  }

  Tensor rest_tensor() const {
    std::vector<double> v;
    v.reserve(rest_vertices.size() * 3);
    for (const auto &p : rest_vertices)
      v.insert(v.end(), p.begin(), p.end());
    return Tensor({rest_vertices.size(), 3}, std::move(v));
  }

  Tensor dense_weights(std::size_t joint_count) const {
    Tensor w = Tensor::zeros({rest_vertices.size(), joint_count});
    auto &d = w.mutable_values();
    for (std::size_t i = 0; i < weights.size(); ++i)
      for (auto [j, x] : weights[i])
        d[i * joint_count + j] += x;
    return w;
  }

  /// Undirected unique edges from the triangle list.
  std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (const auto &f : faces)
      for (int k = 0; k < 3; ++k) {
        std::size_t a = f[static_cast<std::size_t>(k)];
        std::size_t b = f[static_cast<std::size_t>((k + 1) % 3)];
        if (a > b)
          std::swap(a, b);
        if (a != b)
          e.emplace_back(a, b);
      }
    std::sort(e.begin(), e.end());
    e.erase(std::unique(e.begin(), e.end()), e.end());
    return e;
  }
};

/// Per-frame, per-joint global transforms, shape T x J x 4 x 4.
///
/// Local transform L = [rot(R) | o + delta; 0 1]; the root additionally
/// carries the root translation, other joints compose G = G_parent * L.
inline Tensor forward_kinematics(const Skeleton &skel, const Tensor &rotations,
                                 const Tensor &root_translation,
                                 const Tensor &local_offsets) {
  const std::size_t J = skel.size();
  if (root_translation.rank() != 2 || root_translation.dim(1) != 3)
    throw ShapeError("root translation must be T x 3, got " +
                     shape_str(root_translation.shape()));
  const std::size_t T = root_translation.dim(0);
  if (rotations.shape() != Shape{T, J, 3} || local_offsets.shape() != Shape{T, J, 3})
    throw ShapeError("rotations/offsets must be " + shape_str({T, J, 3}) + ", got " +
                     shape_str(rotations.shape()) + " and " +
                     shape_str(local_offsets.shape()));

  std::vector<double> bottom(T * 4, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    bottom[t * 4 + 3] = 1.0;
  const Tensor bottom_row({T, 1, 4}, std::move(bottom));

  std::vector<Tensor> global(J);
  for (std::size_t j : skel.topo_order) {
    const Tensor rot = axis_angle_to_matrix(select(rotations, 1, j));
    const Vec3 &o = skel.rest_offsets[j];
    Tensor trans = select(local_offsets, 1, j) + Tensor({3}, {o[0], o[1], o[2]});
    const auto &parent = skel.joints[j].parent;
    if (!parent)
      trans = trans + root_translation;
    const Tensor top = concat({rot, reshape(trans, {T, 3, 1})}, 2);
    const Tensor local = concat({top, bottom_row}, 1);
    global[j] = parent ? matmul(global[*parent], local) : local;
  }
  return stack(global, 1);
}

inline Tensor forward_kinematics(const Skeleton &skel, const MotionParams &p) {
  return forward_kinematics(skel, p.rotations, p.root_translation, p.local_offsets);
}

/// Joint world positions T x J x 3 from global transforms.
inline Tensor joint_positions(const Tensor &global) {
  const std::size_t T = global.dim(0), J = global.dim(1);
  const Tensor col = slice(slice(global, 3, 3, 4), 2, 0, 3);
  return reshape(col, {T, J, 3});
}

namespace detail {

/// out[t, v, :] = sum_j w[v, j] * s[t, j, :] with sparse rows.
inline Tensor blend_sparse(const Tensor &s, const SkinnedMesh &mesh) {
  const std::size_t T = s.dim(0), J = s.dim(1), K = s.dim(2);
  const std::size_t V = mesh.vertex_count();
  std::vector<double> out(T * V * K, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t v = 0; v < V; ++v)
      for (auto [j, w] : mesh.weights[v])
        for (std::size_t k = 0; k < K; ++k)
          out[(t * V + v) * K + k] += w * s[(t * J + j) * K + k];
  auto rows = mesh.weights;
  return finish("blend_sparse", {T, V, K}, std::move(out), {&s},
                [rows, T, J, K](std::span<const double> g,
                                std::span<std::vector<double> *> pg) {
                  auto &gs = *pg[0];
                  const std::size_t V = rows.size();
                  for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t v = 0; v < V; ++v)
                      for (auto [j, w] : rows[v])
                        for (std::size_t k = 0; k < K; ++k)
                          gs[(t * J + j) * K + k] += w * g[(t * V + v) * K + k];
                });
}

} // namespace detail

/// Dense weight blending is used up to this many V*J entries.
inline constexpr std::size_t dense_skinning_limit = 1'000'000;

/// Linear blend skinning: v[t,i] = sum_j w[i,j] * G[t,j] * B[j] * v_rest[i].
/// Returns T x V x 3.
inline Tensor skin(const Skeleton &skel, const SkinnedMesh &mesh,
                   const Tensor &global, bool force_sparse = false) {
  const std::size_t J = skel.size();
  if (global.rank() != 4 || global.dim(1) != J || global.dim(2) != 4 || global.dim(3) != 4)
    throw ShapeError("global transforms must be T x J x 4 x 4");
  if (mesh.weights.size() != mesh.vertex_count())
    throw ShapeError("skin weight rows do not match vertex count");
  const std::size_t T = global.dim(0), V = mesh.vertex_count();

  const Tensor skinning = matmul(global, skel.inverse_bind_tensor());
  const Tensor rows = reshape(slice(skinning, 2, 0, 3), {T, J, 12});
  Tensor blended;
  if (!force_sparse && V * J <= dense_skinning_limit)
    blended = matmul(mesh.dense_weights(J), rows);
  else
    blended = detail::blend_sparse(rows, mesh);

  std::vector<double> homo;
  homo.reserve(V * 4);
  for (const auto &p : mesh.rest_vertices)
    homo.insert(homo.end(), {p[0], p[1], p[2], 1.0});
  const Tensor rest_h({V, 1, 4}, std::move(homo));
  return sum(reshape(blended, {T, V, 3, 4}) * rest_h, -1);
}

} // namespace rigmo
