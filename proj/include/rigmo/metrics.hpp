#pragma once

// Mesh Laplacian distortion with the uniform (combinatorial) Laplacian.
// Not rotation invariant: a rigidly rotated mesh has rotated Laplacian
// coordinates and scores above zero.

#include "rigmo/kinematics.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace rigmo {

/// Symmetric 1-ring neighbor lists from triangle faces, sorted and unique.
inline std::vector<std::vector<std::size_t>> one_ring(std::size_t vertex_count,
                                                      const std::vector<std::array<std::size_t, 3>> &faces) {
  std::vector<std::vector<std::size_t>> n(vertex_count);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto &t = faces[f];
    for (std::size_t a = 0; a < 3; ++a) {
      if (t[a] >= vertex_count)
        throw DataError("face " + std::to_string(f) + " references vertex " +
                        std::to_string(t[a]) + " of " + std::to_string(vertex_count));
      for (std::size_t b = 0; b < 3; ++b)
        if (a != b && t[a] != t[b])
          n[t[a]].push_back(t[b]);
    }
  }
  for (auto &row : n) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
  return n;
}

/// rho_i = v_i - mean of the 1-ring, for vertices with at least one neighbor.
/// `positions` is V*3 values starting at `offset`.
inline std::vector<Vec3> laplacian_coords(const std::vector<std::vector<std::size_t>> &ring,
                                          const std::vector<double> &positions,
                                          std::size_t offset = 0) {
  std::vector<Vec3> rho(ring.size(), Vec3{0, 0, 0});
  for (std::size_t i = 0; i < ring.size(); ++i) {
    if (ring[i].empty())
      continue;
    Vec3 m{0, 0, 0};
    for (std::size_t k : ring[i])
      for (std::size_t c = 0; c < 3; ++c)
        m[c] += positions[offset + 3 * k + c];
    for (std::size_t c = 0; c < 3; ++c)
      rho[i][c] = positions[offset + 3 * i + c] - m[c] / static_cast<double>(ring[i].size());
  }
  return rho;
}

struct MldReport {
  std::vector<double> per_frame;
  double mean = 0.0;
  std::size_t isolated = 0;
  std::vector<std::string> warnings;
};

/// Per frame, sum_i |rho_i(deformed) - rho_i(rest)|^2 over the vertices that
/// have neighbors; `frames` is T x V x 3.
inline MldReport mesh_laplacian_distortion(const SkinnedMesh &rest, const Tensor &frames) {
  const std::size_t V = rest.vertex_count();
  if (frames.rank() != 3 || frames.shape()[1] != V || frames.shape()[2] != 3)
    throw ShapeError("MLD: frames " + shape_str(frames.shape()) + " do not match a mesh of " +
                     std::to_string(V) + " vertices");
  const auto ring = one_ring(V, rest.faces);
  std::vector<double> rest_pos(3 * V);
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      rest_pos[3 * i + c] = rest.rest_vertices[i][c];
  const auto rho0 = laplacian_coords(ring, rest_pos);

  MldReport r;
  for (const auto &row : ring)
    r.isolated += row.empty();
  if (r.isolated)
    r.warnings.push_back(std::to_string(r.isolated) +
                         " isolated vertices excluded from the Laplacian distortion");
  const std::size_t T = frames.shape()[0];
  const auto &v = frames.values();
  r.per_frame.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto rho = laplacian_coords(ring, v, t * V * 3);
    double s = 0.0;
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = rho[i][c] - rho0[i][c];
        s += d * d;
      }
    r.per_frame[t] = s;
    r.mean += s;
  }
  if (T)
    r.mean /= static_cast<double>(T);
  return r;
}

} // namespace rigmo
