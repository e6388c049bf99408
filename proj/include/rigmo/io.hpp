#pragma once

// Rig bundles, motion files, OBJ and PNG export.
//
// A rig bundle is a directory holding skeleton.json, mesh.obj and
// weights.json, plus optional mask.json and manifest.json. The manifest may
// rename the files and states the expected joint and vertex counts.

#include "rigmo/motion_init.hpp"
#include "rigmo/springmass.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace rigmo {

namespace fs = std::filesystem;

/// Writes to a temporary sibling and renames it over `path`.
inline void write_file_atomic(const fs::path &path, const std::string &bytes) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out)
      throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline nlohmann::json parse_json(const std::string &text, const std::string &what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    throw DataError(what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// OBJ

struct ObjMesh {
  std::vector<Vec3> vertices;
  std::vector<std::vector<double>> colors; // from "v x y z r g b", else empty
  std::vector<std::array<std::size_t, 3>> faces;
};

/// Vertices and faces; polygons are fan-triangulated, texture and normal
/// indices are ignored. Errors name the line.
inline ObjMesh parse_obj(const std::string &text, const std::string &name = "mesh") {
  ObjMesh m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool any_color = false;
  auto fail = [&](const std::string &msg) {
    throw DataError(name + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag))
      continue;
    if (tag == "v") {
      std::vector<double> xs;
      double x;
      while (ls >> x)
        xs.push_back(x);
      if (!ls.eof())
        fail("malformed vertex");
      if (xs.size() != 3 && xs.size() != 6)
        fail("vertex needs 3 coordinates (or 3 + rgb)");
      for (double c : xs)
        if (!std::isfinite(c))
          fail("non-finite vertex coordinate");
      m.vertices.push_back({xs[0], xs[1], xs[2]});
      if (xs.size() == 6) {
        any_color = true;
        m.colors.push_back({xs[3], xs[4], xs[5]});
      } else {
        m.colors.emplace_back();
      }
    } else if (tag == "f") {
      std::vector<std::size_t> idx;
      std::string tok;
      while (ls >> tok) {
        const std::string head = tok.substr(0, tok.find('/'));
        long k = 0;
        std::size_t used = 0;
        try {
          k = std::stol(head, &used);
        } catch (const std::exception &) {
          fail("bad face index '" + tok + "'");
        }
        if (used != head.size() || k == 0)
          fail("bad face index '" + tok + "'");
        const long n = static_cast<long>(m.vertices.size());
        const long abs = k > 0 ? k - 1 : n + k;
        if (abs < 0 || abs >= n)
          fail("face index " + std::to_string(k) + " out of range");
        idx.push_back(static_cast<std::size_t>(abs));
      }
      if (idx.size() < 3)
        fail("face needs at least 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k)
        m.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  if (m.vertices.empty())
    throw DataError(name + ": no vertices");
  if (any_color) {
    for (std::size_t i = 0; i < m.colors.size(); ++i)
      if (m.colors[i].empty())
        throw DataError(name + ": vertex " + std::to_string(i) + " has no color while others do");
  } else {
    m.colors.clear();
  }
  return m;
}

inline std::string format_obj(const Tensor &vertices, std::size_t frame,
                              const std::vector<std::array<std::size_t, 3>> &faces) {
  std::ostringstream s;
  s.precision(9);
  const std::size_t V = vertices.dim(1);
  for (std::size_t i = 0; i < V; ++i)
    s << "v " << vertices.at({frame, i, 0}) << ' ' << vertices.at({frame, i, 1}) << ' '
      << vertices.at({frame, i, 2}) << '\n';
  for (const auto &f : faces)
    s << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  return s.str();
}

// ---------------------------------------------------------------------------
// Rig bundle

struct RigBundle {
  Skeleton skeleton;
  SkinnedMesh mesh;
  std::optional<DynamicRegionMask> mask;
  MorphologyReport report;
  std::vector<std::string> warnings;
  double scale = 1.0;      // applied to input coordinates
  Vec3 shift{0, 0, 0};     // added after scaling
};

inline std::vector<Joint> parse_joints(const nlohmann::json &j, const std::string &name) {
  check_format_version(j, name);
  if (!j.contains("joints") || !j["joints"].is_array())
    throw DataError(name + ": missing joints array");
  const auto &arr = j["joints"];
  std::map<std::string, std::size_t> index;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const auto &e = arr[k];
    if (!e.is_object() || !e.contains("name") || !e["name"].is_string())
      throw DataError(name + ": joints[" + std::to_string(k) + "] needs a name");
    if (!index.emplace(e["name"].get<std::string>(), k).second)
      throw DataError(name + ": duplicate joint name '" + e["name"].get<std::string>() + "'");
  }
  std::vector<Joint> joints;
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const auto &e = arr[k];
    Joint jt;
    jt.name = e["name"].get<std::string>();
    const std::string where = name + ": joint '" + jt.name + "'";
    if (e.contains("parent") && !e["parent"].is_null()) {
      const auto &p = e["parent"];
      if (p.is_number_integer()) {
        const long v = p.get<long>();
        if (v < 0 || static_cast<std::size_t>(v) >= arr.size())
          throw DataError(where + " has parent index " + std::to_string(v) + " out of range");
        jt.parent = static_cast<std::size_t>(v);
      } else if (p.is_string()) {
        const auto it = index.find(p.get<std::string>());
        if (it == index.end())
          throw DataError(where + " has unknown parent '" + p.get<std::string>() + "'");
        jt.parent = it->second;
      } else {
        throw DataError(where + ": parent must be an index, a name or null");
      }
    }
    const auto &pos = e.value("rest_position", nlohmann::json());
    if (!pos.is_array() || pos.size() != 3 || !pos[0].is_number() || !pos[1].is_number() ||
        !pos[2].is_number())
      throw DataError(where + ": rest_position must be 3 numbers");
    jt.rest_position = {pos[0].get<double>(), pos[1].get<double>(), pos[2].get<double>()};
    if (e.contains("category")) {
      const auto c = parse_category(e["category"].get<std::string>());
      if (!c)
        throw DataError(where + ": unknown category '" + e["category"].get<std::string>() + "'");
      jt.category = *c;
      jt.category_given = true;
    }
    joints.push_back(std::move(jt));
  }
  return joints;
}

inline constexpr double weight_warn_tolerance = 1e-6;
inline constexpr double weight_error_tolerance = 1e-3;

/// Sparse rows from {"weights": [{"<joint>": w, ...}, ...]}. Rows off by
/// more than 1e-6 are renormalized with a warning; more than 1e-3 is an
/// error. A slack of 1e-12 absorbs decimal rounding at the error bound.
inline std::vector<SkinnedMesh::Influences>
parse_weights(const nlohmann::json &j, std::size_t joint_count, std::vector<std::string> &warnings,
              const std::string &name = "weights") {
  check_format_version(j, name);
  if (!j.contains("weights") || !j["weights"].is_array())
    throw DataError(name + ": missing weights array");
  std::vector<SkinnedMesh::Influences> rows;
  std::size_t renormalized = 0;
  for (std::size_t i = 0; i < j["weights"].size(); ++i) {
    const auto &r = j["weights"][i];
    const std::string where = name + ": vertex " + std::to_string(i);
    if (!r.is_object())
      throw DataError(where + ": row must be an object of joint index -> weight");
    SkinnedMesh::Influences row;
    double s = 0;
    for (const auto &[k, v] : r.items()) {
      std::size_t used = 0;
      unsigned long idx = 0;
      try {
        idx = std::stoul(k, &used);
      } catch (const std::exception &) {
        used = 0;
      }
      if (used != k.size() || k.empty())
        throw DataError(where + ": bad joint index '" + k + "'");
      if (idx >= joint_count)
        throw DataError(where + ": joint index " + k + " out of range (skeleton has " +
                        std::to_string(joint_count) + " joints)");
      if (!v.is_number() || !(v.get<double>() >= 0))
        throw DataError(where + ": weight for joint " + k + " must be a non-negative number");
      row.emplace_back(idx, v.get<double>());
      s += v.get<double>();
    }
    std::sort(row.begin(), row.end());
    const double off = std::abs(s - 1.0);
    if (off > weight_error_tolerance + 1e-12)
      throw DataError(where + ": weights sum to " + std::to_string(s) + " (tolerance 1e-3)");
    if (off > weight_warn_tolerance) {
      for (auto &[jj, w] : row)
        w /= s;
      ++renormalized;
      if (renormalized <= 5)
        warnings.push_back(where + ": weights summed to " + std::to_string(s) +
                           ", renormalized");
    }
    rows.push_back(std::move(row));
  }
  if (renormalized > 5)
    warnings.push_back(name + ": " + std::to_string(renormalized) + " rows renormalized in total");
  return rows;
}

inline DynamicRegionMask parse_mask(const nlohmann::json &j, std::size_t V,
                                    const std::string &name = "mask") {
  check_format_version(j, name);
  if (!j.contains("blend") || !j["blend"].is_array())
    throw DataError(name + ": missing blend array");
  const auto blend = j["blend"].get<std::vector<double>>();
  if (blend.size() != V)
    throw DataError(name + ": " + std::to_string(blend.size()) + " blend weights for " +
                    std::to_string(V) + " vertices");
  DynamicRegionMask m;
  m.blend = blend;
  m.dynamic.resize(V);
  for (std::size_t i = 0; i < V; ++i)
    m.dynamic[i] = blend[i] > 0;
  if (j.contains("region"))
    m.region = j["region"].get<std::vector<std::string>>();
  else
    m.region.assign(V, "");
  m.validate(V);
  return m;
}

/// Height to 1, ground (min y) to 0, horizontal bounding-box center to the
/// origin. Applied to joints, mesh and nothing else.
inline void normalize_rig(std::vector<Joint> &joints, ObjMesh &mesh, double &scale, Vec3 &shift) {
  Vec3 lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
  for (const auto &v : mesh.vertices)
    for (std::size_t k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], v[k]);
      hi[k] = std::max(hi[k], v[k]);
    }
  const double h = hi[1] - lo[1];
  if (!(h > 0))
    throw DataError("mesh has zero height; cannot normalize");
  scale = 1.0 / h;
  shift = {-0.5 * (lo[0] + hi[0]) * scale, -lo[1] * scale, -0.5 * (lo[2] + hi[2]) * scale};
  auto apply = [&](Vec3 &p) {
    for (std::size_t k = 0; k < 3; ++k)
      p[k] = p[k] * scale + shift[k];
  };
  for (auto &v : mesh.vertices)
    apply(v);
  for (auto &j : joints)
    apply(j.rest_position);
  // exact ground plane despite rounding in the affine map
  double ymin = 1e300;
  for (const auto &v : mesh.vertices)
    ymin = std::min(ymin, v[1]);
  shift[1] -= ymin;
  for (auto &v : mesh.vertices)
    v[1] -= ymin;
  for (auto &j : joints)
    j.rest_position[1] -= ymin;
}

inline RigBundle load_rig(const fs::path &dir, bool normalize = true) {
  if (!fs::is_directory(dir))
    throw DataError("rig directory " + dir.string() + " does not exist");
  std::string skel_file = "skeleton.json", mesh_file = "mesh.obj", weights_file = "weights.json",
              mask_file = "mask.json";
  std::optional<std::size_t> want_j, want_v;
  if (fs::exists(dir / "manifest.json")) {
    const auto m = parse_json(read_file(dir / "manifest.json"), "manifest.json");
    check_format_version(m, "manifest.json");
    skel_file = m.value("skeleton", skel_file);
    mesh_file = m.value("mesh", mesh_file);
    weights_file = m.value("weights", weights_file);
    mask_file = m.value("mask", mask_file);
    if (m.contains("joints"))
      want_j = m["joints"].get<std::size_t>();
    if (m.contains("vertices"))
      want_v = m["vertices"].get<std::size_t>();
  }
  RigBundle b;
  auto joints = parse_joints(parse_json(read_file(dir / skel_file), skel_file), skel_file);
  ObjMesh obj = parse_obj(read_file(dir / mesh_file), mesh_file);
  if (normalize)
    normalize_rig(joints, obj, b.scale, b.shift);
  b.skeleton = build_skeleton(std::move(joints));
  const std::size_t J = b.skeleton.size(), V = obj.vertices.size();
  if (want_j && *want_j != J)
    throw DataError("manifest.json: expected " + std::to_string(*want_j) + " joints, " +
                    skel_file + " has " + std::to_string(J));
  if (want_v && *want_v != V)
    throw DataError("manifest.json: expected " + std::to_string(*want_v) + " vertices, " +
                    mesh_file + " has " + std::to_string(V));
  b.mesh.rest_vertices = std::move(obj.vertices);
  b.mesh.faces = std::move(obj.faces);
  b.mesh.colors = std::move(obj.colors);
  b.mesh.weights = parse_weights(parse_json(read_file(dir / weights_file), weights_file), J,
                                 b.warnings, weights_file);
  if (b.mesh.weights.size() != V)
    throw DataError(weights_file + ": " + std::to_string(b.mesh.weights.size()) +
                    " rows for " + std::to_string(V) + " vertices in " + mesh_file);
  b.mesh.validate(J);
  b.report = analyze_morphology(b.skeleton);
  assign_categories(b.skeleton, b.report);
  if (fs::exists(dir / mask_file))
    b.mask = parse_mask(parse_json(read_file(dir / mask_file), mask_file), V, mask_file);
  return b;
}

// ---------------------------------------------------------------------------
// Motion files

inline constexpr double default_fps = 24.0;

namespace detail {

inline nlohmann::json nested(const Tensor &x) {
  // T x ... -> nested arrays
  if (x.rank() == 2) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t t = 0; t < x.dim(0); ++t) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t k = 0; k < x.dim(1); ++k)
        row.push_back(x.at({t, k}));
      out.push_back(std::move(row));
    }
    return out;
  }
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t t = 0; t < x.dim(0); ++t) {
    nlohmann::json frame = nlohmann::json::array();
    for (std::size_t j = 0; j < x.dim(1); ++j)
      frame.push_back({x.at({t, j, 0}), x.at({t, j, 1}), x.at({t, j, 2})});
    out.push_back(std::move(frame));
  }
  return out;
}

inline Tensor flat(const nlohmann::json &a, Shape shape, const std::string &what) {
  std::vector<double> v;
  std::function<void(const nlohmann::json &, std::size_t)> walk = [&](const nlohmann::json &n,
                                                                      std::size_t depth) {
    if (depth == shape.size()) {
      if (!n.is_number())
        throw DataError("motion: " + what + " holds a non-number");
      v.push_back(n.get<double>());
      return;
    }
    if (!n.is_array() || n.size() != shape[depth])
      throw DataError("motion: " + what + " must have shape " + shape_str(shape));
    for (const auto &c : n)
      walk(c, depth + 1);
  };
  walk(a, 0);
  return Tensor(std::move(shape), std::move(v));
}

} // namespace detail

/// Numbers are written in the shortest form that reads back to the same
/// double, so load(export(x)) is bitwise equal.
inline nlohmann::json motion_to_json(const MotionParams &p, const Skeleton &s,
                                     double fps = default_fps) {
  nlohmann::json names = nlohmann::json::array();
  for (const auto &j : s.joints)
    names.push_back(j.name);
  return {{"format_version", "1.0"},
          {"kind", "motion"},
          {"fps", fps},
          {"frames", p.frames()},
          {"joints", names},
          {"root_translation", detail::nested(p.root_translation)},
          {"rotations", detail::nested(p.rotations)},
          {"offsets", detail::nested(p.local_offsets)}};
}

inline MotionParams motion_from_json(const nlohmann::json &j, const Skeleton &s) {
  check_format_version(j, "motion");
  if (j.value("kind", "") != "motion")
    throw DataError("motion: not a motion file");
  const std::size_t T = j.at("frames").get<std::size_t>(), J = s.size();
  const auto names = j.at("joints").get<std::vector<std::string>>();
  if (names.size() != J)
    throw DataError("motion: " + std::to_string(names.size()) + " joints, rig has " +
                    std::to_string(J));
  for (std::size_t k = 0; k < J; ++k)
    if (names[k] != s.joints[k].name)
      throw DataError("motion: joint " + std::to_string(k) + " is '" + names[k] +
                      "', rig has '" + s.joints[k].name + "'");
  MotionParams p{detail::flat(j.at("rotations"), {T, J, 3}, "rotations"),
                 detail::flat(j.at("root_translation"), {T, 3}, "root_translation"),
                 detail::flat(j.at("offsets"), {T, J, 3}, "offsets")};
  p.validate(J);
  return p;
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {

inline void put_u32be(std::string &s, std::uint32_t v) {
  for (int k = 3; k >= 0; --k)
    s.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
}

inline void png_chunk(std::string &out, const char *type, const std::string &data) {
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32be(out, static_cast<std::uint32_t>(
                     ::crc32(0, reinterpret_cast<const Bytef *>(body.data()),
                             static_cast<uInt>(body.size()))));
}

} // namespace detail

/// 8-bit grayscale or RGB PNG of frame t of a T x C x H x W stack in [-1, 1].
inline std::string encode_png(const Tensor &frames, std::size_t t) {
  if (frames.rank() != 4 || (frames.dim(1) != 1 && frames.dim(1) != 3))
    throw ShapeError("encode_png expects T x C x H x W with C in {1, 3}");
  const std::size_t C = frames.dim(1), H = frames.dim(2), W = frames.dim(3);
  std::string raw;
  raw.reserve(H * (W * C + 1));
  for (std::size_t y = 0; y < H; ++y) {
    raw.push_back('\0');
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const double v = std::clamp((frames.at({t, c, y, x}) + 1.0) * 0.5, 0.0, 1.0);
        raw.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::string z(len, '\0');
  if (compress2(reinterpret_cast<Bytef *>(z.data()), &len,
                reinterpret_cast<const Bytef *>(raw.data()), static_cast<uLong>(raw.size()),
                Z_BEST_COMPRESSION) != Z_OK)
    throw std::runtime_error("zlib compression failed");
  z.resize(len);
  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  detail::put_u32be(ihdr, static_cast<std::uint32_t>(W));
  detail::put_u32be(ihdr, static_cast<std::uint32_t>(H));
  ihdr += std::string{8, static_cast<char>(C == 1 ? 0 : 2), 0, 0, 0};
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", "");
  return out;
}

// ---------------------------------------------------------------------------
// Export

struct ExportOptions {
  bool obj_sequence = false;
  bool png = false;
  double fps = default_fps;
};

/// Writes motion.json, and per flags meshes/frame_NNNN.obj and
/// frames/frame_NNNN.png. Returns the paths written.
inline std::vector<fs::path> export_animation(const fs::path &out, const MotionParams &p,
                                              const Skeleton &s, const SkinnedMesh &mesh,
                                              const Tensor &vertices, const Tensor &frames,
                                              const ExportOptions &o = {}) {
  std::vector<fs::path> written;
  const fs::path motion = out / "motion.json";
  write_file_atomic(motion, motion_to_json(p, s, o.fps).dump(1) + "\n");
  written.push_back(motion);
  auto numbered = [](std::size_t t, const char *ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.%s", t, ext);
    return std::string(buf);
  };
  if (o.obj_sequence)
    for (std::size_t t = 0; t < vertices.dim(0); ++t) {
      const fs::path f = out / "meshes" / numbered(t, "obj");
      write_file_atomic(f, format_obj(vertices, t, mesh.faces));
      written.push_back(f);
    }
  if (o.png)
    for (std::size_t t = 0; t < frames.dim(0); ++t) {
      const fs::path f = out / "frames" / numbered(t, "png");
      write_file_atomic(f, encode_png(frames, t));
      written.push_back(f);
    }
  return written;
}

} // namespace rigmo
