#pragma once

// Procedural motion prior: action parsing, gait templates, dense
// trajectories and their projection onto rational cubic curves.

#include "rigmo/kinematics.hpp"
#include "rigmo/losses.hpp"
#include "rigmo/morphology.hpp"
#include "rigmo/nurbs.hpp"

#include <json.hpp>

#include <cctype>
#include <fstream>
#include <numbers>

namespace rigmo {

enum class Action { Walk, Run, Jump, Idle, Strike, SwimFly, Custom };

inline std::string_view to_string(Action a) {
  switch (a) {
  case Action::Walk: return "walk";
  case Action::Run: return "run";
  case Action::Jump: return "jump";
  case Action::Idle: return "idle";
  case Action::Strike: return "strike";
  case Action::SwimFly: return "swim/fly";
  case Action::Custom: return "custom";
  }
  return "idle";
}

inline std::optional<Action> parse_action_name(std::string_view s) {
  for (auto a : {Action::Walk, Action::Run, Action::Jump, Action::Idle, Action::Strike,
                 Action::SwimFly, Action::Custom})
    if (to_string(a) == s)
      return a;
  return std::nullopt;
}

inline void check_format_version(const nlohmann::json &j, const std::string &what) {
  if (!j.contains("format_version") || !j["format_version"].is_string())
    throw DataError(what + ": missing format_version");
  const auto v = j["format_version"].get<std::string>();
  if (v.substr(0, v.find('.')) != "1")
    throw DataError(what + ": unsupported format_version " + v);
}

/// Keyword lexicon. A keyword matches at the start of a word; among all
/// matches the longest keyword wins, then the earliest position.
struct ActionLexicon {
  std::vector<std::pair<std::string, Action>> keywords;

  static ActionLexicon from_json(const nlohmann::json &j) {
    check_format_version(j, "action lexicon");
    ActionLexicon lex;
    for (const auto &[name, words] : j.at("actions").items()) {
      const auto a = parse_action_name(name);
      if (!a)
        throw DataError("action lexicon: unknown action '" + name + "'");
      for (const auto &w : words) {
        std::string s = w.get<std::string>();
        for (auto &ch : s)
          ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        lex.keywords.emplace_back(std::move(s), *a);
      }
    }
    return lex;
  }

  Action parse(std::string_view prompt) const {
    std::string p(prompt);
    for (auto &ch : p)
      ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    std::optional<Action> best;
    std::size_t best_len = 0, best_pos = 0;
    for (const auto &[word, action] : keywords) {
      if (word.empty())
        continue;
      for (std::size_t pos = p.find(word); pos != std::string::npos; pos = p.find(word, pos + 1)) {
        if (pos > 0 && std::isalnum(static_cast<unsigned char>(p[pos - 1])))
          continue;
        if (!best || word.size() > best_len || (word.size() == best_len && pos < best_pos)) {
          best = action;
          best_len = word.size();
          best_pos = pos;
        }
        break;
      }
    }
    return best.value_or(Action::Idle);
  }
};

/// Per-slot sinusoid parameters, one value per rotation axis.
struct SlotMotion {
  Vec3 amplitude{0, 0, 0};
  Vec3 phase{0, 0, 0};
  Vec3 bias{0, 0, 0};
};

/// Cubic Hermite key (u in [0,1], value, slope). Consecutive keys join C1.
struct HermiteKey {
  double u, value, slope;
};

inline double eval_hermite(const std::vector<HermiteKey> &keys, double u) {
  if (keys.empty())
    return 0.0;
  if (u <= keys.front().u)
    return keys.front().value;
  if (u >= keys.back().u)
    return keys.back().value;
  std::size_t i = 0;
  while (keys[i + 1].u < u)
    ++i;
  const auto &a = keys[i], &b = keys[i + 1];
  const double h = b.u - a.u, s = (u - a.u) / h;
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * a.value + (s3 - 2 * s2 + s) * h * a.slope +
         (-2 * s3 + 3 * s2) * b.value + (s3 - s2) * h * b.slope;
}

/// Gait template. Slots are keyed "<group>/<category>", e.g. "leg/ball-limb".
/// Cyclic: R = A sin(2 pi omega t/T + phi) + b, right side shifted by pi.
/// Non-cyclic: R = b + A * flex(t/(T-1)); phase is unused.
struct GaitTemplate {
  double frequency = 1.0;
  bool cyclic = true;
  double bob_amplitude = 0.0; // fraction of character height
  double bob_phase = 0.0;
  double bob_harmonic = 1.0;
  std::map<std::string, SlotMotion> slots;
  std::vector<HermiteKey> flex;        // non-cyclic joint profile
  std::vector<HermiteKey> root_height; // non-cyclic root profile, fraction of height

  double flex_peak() const {
    if (cyclic)
      return 1.0;
    double m = 0.0;
    for (int i = 0; i <= 1000; ++i)
      m = std::max(m, std::abs(eval_hermite(flex, i / 1000.0)));
    return m;
  }

  /// Peak rotation magnitude per slot must stay within its category limit.
  void validate(const RomLimits &rom, const std::string &where) const {
    if (!(frequency > 0.0))
      throw DataError(where + ": frequency must be positive");
    const double peak = flex_peak();
    for (const auto &[slot, m] : slots) {
      const auto slash = slot.find('/');
      if (slash == std::string::npos)
        throw DataError(where + ": slot '" + slot + "' is not <group>/<category>");
      const auto cat = parse_category(slot.substr(slash + 1));
      if (!cat)
        throw DataError(where + ": slot '" + slot + "' has an unknown category");
      const double reach = length(m.amplitude) * peak + length(m.bias);
      if (reach > rom.of(*cat) + 1e-12)
        throw DataError(where + ": slot '" + slot + "' reaches " + std::to_string(reach) +
                        " rad, above the " + std::string(to_string(*cat)) + " limit");
    }
    for (const auto *keys : {&flex, &root_height})
      for (std::size_t i = 1; i < keys->size(); ++i)
        if (!((*keys)[i].u > (*keys)[i - 1].u))
          throw DataError(where + ": profile keys must have increasing u");
  }
};

struct GaitLibrary {
  std::map<Morphology, std::map<Action, GaitTemplate>> templates;

  /// The template for (morphology, action), falling back to idle, then to none.
  const GaitTemplate *find(Morphology m, Action a) const {
    const auto it = templates.find(m);
    if (it == templates.end())
      return nullptr;
    if (const auto t = it->second.find(a); t != it->second.end())
      return &t->second;
    if (const auto t = it->second.find(Action::Idle); t != it->second.end())
      return &t->second;
    return nullptr;
  }

  static GaitLibrary from_json(const nlohmann::json &j, const RomLimits &rom = {}) {
    check_format_version(j, "gait library");
    auto vec3 = [](const nlohmann::json &v, const std::string &where) {
      if (v.is_number())
        return Vec3{v.get<double>(), 0.0, 0.0};
      if (!v.is_array() || v.size() != 3)
        throw DataError(where + ": expected a number or 3 numbers");
      return Vec3{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
    };
    auto keys = [](const nlohmann::json &v) {
      std::vector<HermiteKey> out;
      for (const auto &k : v)
        out.push_back({k.at(0).get<double>(), k.at(1).get<double>(),
                       k.size() > 2 ? k.at(2).get<double>() : 0.0});
      return out;
    };
    GaitLibrary lib;
    for (const auto &[mname, actions] : j.at("templates").items()) {
      const auto m = parse_morphology(mname);
      if (!m)
        throw DataError("gait library: unknown morphology '" + mname + "'");
      for (const auto &[aname, t] : actions.items()) {
        const auto a = parse_action_name(aname);
        if (!a)
          throw DataError("gait library: unknown action '" + aname + "'");
        const std::string where = "gait library " + mname + "/" + aname;
        GaitTemplate g;
        g.frequency = t.value("frequency", 1.0);
        g.cyclic = t.value("cyclic", true);
        if (t.contains("root_bob")) {
          const auto &b = t["root_bob"];
          g.bob_amplitude = b.value("amplitude", 0.0);
          g.bob_phase = b.value("phase", 0.0);
          g.bob_harmonic = b.value("harmonic", 1.0);
        }
        if (t.contains("slots"))
          for (const auto &[slot, v] : t["slots"].items()) {
            SlotMotion sm;
            if (v.contains("amplitude"))
              sm.amplitude = vec3(v["amplitude"], where + " " + slot);
            if (v.contains("phase"))
              sm.phase = v["phase"].is_number()
                             ? Vec3{v["phase"].get<double>(), v["phase"].get<double>(),
                                    v["phase"].get<double>()}
                             : vec3(v["phase"], where + " " + slot);
            if (v.contains("bias"))
              sm.bias = vec3(v["bias"], where + " " + slot);
            g.slots[slot] = sm;
          }
        if (t.contains("flex"))
          g.flex = keys(t["flex"]);
        if (t.contains("root_height"))
          g.root_height = keys(t["root_height"]);
        g.validate(rom, where);
        lib.templates[*m][*a] = std::move(g);
      }
    }
    return lib;
  }
};

inline nlohmann::json read_json_file(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error &e) {
    throw DataError(path + ": " + e.what());
  }
}

#ifdef RIGMO_DATA_DIR
inline std::string default_data_dir() { return RIGMO_DATA_DIR; }
#else
inline std::string default_data_dir() { return "data"; }
#endif

inline GaitLibrary load_gait_library(const std::string &path, const RomLimits &rom = {}) {
  return GaitLibrary::from_json(read_json_file(path), rom);
}

inline ActionLexicon load_action_lexicon(const std::string &path) {
  return ActionLexicon::from_json(read_json_file(path));
}

/// Slot name of each joint: "<group>/<category>".
inline std::vector<std::string> joint_slots(const Skeleton &s, const MorphologyReport &r) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < s.size(); ++j)
    out.push_back(r.group[j] + "/" + std::string(to_string(s.joints[j].category)));
  return out;
}

struct DenseTrajectory {
  Tensor rotations; // T x J x 3
  Tensor root;      // T x 3
};

/// Evaluates a template for every joint. Joints whose slot is absent stay at
/// zero rotation.
inline DenseTrajectory generate_dense_trajectory(const Skeleton &s, const MorphologyReport &r,
                                                 const GaitTemplate &g, std::size_t T,
                                                 double height = 1.0) {
  if (T < 8)
    throw std::invalid_argument("trajectory needs at least 8 frames");
  const std::size_t J = s.size();
  const auto slots = joint_slots(s, r);
  std::vector<double> rot(T * J * 3, 0.0), root(T * 3, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < T; ++t) {
    const double tc = static_cast<double>(t) / static_cast<double>(T);
    const double tn = static_cast<double>(t) / static_cast<double>(T - 1);
    const double flex = g.cyclic ? 0.0 : eval_hermite(g.flex, tn);
    for (std::size_t j = 0; j < J; ++j) {
      const auto it = g.slots.find(slots[j]);
      if (it == g.slots.end())
        continue;
      const SlotMotion &m = it->second;
      const double shift = r.side[j] == Side::Right ? std::numbers::pi : 0.0;
      for (std::size_t e = 0; e < 3; ++e)
        rot[(t * J + j) * 3 + e] =
            g.cyclic ? m.amplitude[e] * std::sin(two_pi * g.frequency * tc + m.phase[e] + shift) +
                           m.bias[e]
                     : m.bias[e] + m.amplitude[e] * flex;
    }
    root[t * 3 + 1] =
        height * (g.cyclic ? g.bob_amplitude * std::sin(two_pi * g.bob_harmonic * g.frequency * tc +
                                                        g.bob_phase)
                           : eval_hermite(g.root_height, tn));
  }
  return {Tensor({T, J, 3}, std::move(rot)), Tensor({T, 3}, std::move(root))};
}

struct ProjectionOptions {
  std::size_t control_points = 12; // K + 1
  int degree = 3;
  double w_contact = 5.0;
  double w_torso = 2.0;
  bool cyclic = true;
  /// Cyclic curves take no contact weight on the degree+1 control points at
  /// each end: the first and last spans then share one weight pattern and
  /// the loop closes with matching velocity.
  bool guard_seam = true;
};

/// Greville abscissa of control point k on the clamped uniform knot vector.
inline double greville(std::size_t k, std::size_t control_count, int degree) {
  const auto knots = clamped_uniform_knots(control_count, degree);
  double s = 0.0;
  for (int i = 1; i <= degree; ++i)
    s += knots[k + static_cast<std::size_t>(i)];
  return s / degree;
}

/// Frame position sampled by control point k. Cyclic curves span one whole
/// period, so the last control point samples frame T, i.e. frame 0 again.
inline double control_sample_frame(std::size_t k, std::size_t T, const ProjectionOptions &o) {
  return greville(k, o.control_points, o.degree) * static_cast<double>(o.cyclic ? T : T - 1);
}

/// Samples the dense T x J x 3 trajectory into control points at their
/// Greville abscissae (uniform in the interior), one curve per joint. contact[j][t] marks lower-extremity joints in a contact
/// phase; torso[j] marks spine joints.
inline std::vector<NurbsCurve> project_to_nurbs(const Tensor &dense,
                                                const std::vector<std::vector<bool>> &contact,
                                                const std::vector<bool> &torso,
                                                const ProjectionOptions &o) {
  const std::size_t T = dense.dim(0), J = dense.dim(1);
  if (o.degree < 1 || o.control_points < static_cast<std::size_t>(o.degree) + 1)
    throw std::invalid_argument("control count must exceed the degree");
  if (o.control_points > T)
    throw std::invalid_argument("more control points than frames");
  if (contact.size() != J || torso.size() != J)
    throw ShapeError("contact and torso flags need one entry per joint");
  const std::size_t n = o.control_points;
  std::vector<NurbsCurve> out;
  for (std::size_t j = 0; j < J; ++j) {
    std::vector<Vec3> pts(n);
    std::vector<double> w(n, 1.0);
    for (std::size_t k = 0; k < n; ++k) {
      const double p = control_sample_frame(k, T, o);
      const auto f0 = static_cast<std::size_t>(std::floor(p));
      const double a = p - static_cast<double>(f0);
      const std::size_t i0 = o.cyclic ? f0 % T : std::min(f0, T - 1);
      const std::size_t i1 = o.cyclic ? (f0 + 1) % T : std::min(f0 + 1, T - 1);
      for (std::size_t e = 0; e < 3; ++e)
        pts[k][e] = (1 - a) * dense.at({i0, j, e}) + a * dense.at({i1, j, e});
      const std::size_t frame = static_cast<std::size_t>(std::lround(p)) % T;
      const auto guard = static_cast<std::size_t>(o.degree) + 1;
      const bool seam = o.cyclic && o.guard_seam && (k < guard || k + guard >= n);
      if (torso[j])
        w[k] = o.w_torso;
      else if (!seam && !contact[j].empty() && contact[j][frame])
        w[k] = o.w_contact;
    }
    out.push_back(make_nurbs(std::move(pts), std::move(w), o.degree));
  }
  return out;
}

/// Rational curves for all joints and the root, held as constant basis
/// matrices times (optionally learnable) control points.
struct NurbsMotion {
  Tensor joint_basis;   // J x T x n
  Tensor joint_control; // J x n x 3
  Tensor root_basis;    // T x n
  Tensor root_control;  // n x 3

  Tensor rotations(const Tensor &control) const {
    return transpose(matmul(joint_basis, control), 0, 1);
  }
  Tensor root(const Tensor &control) const { return matmul(root_basis, control); }

  static NurbsMotion from_curves(const std::vector<NurbsCurve> &joints, const NurbsCurve &root,
                                 std::size_t T) {
    NurbsMotion m;
    std::vector<Tensor> bases, controls;
    for (const auto &c : joints) {
      bases.push_back(sample_basis(c, T));
      controls.push_back(control_tensor(c));
    }
    m.joint_basis = stack(bases, 0);
    m.joint_control = stack(controls, 0);
    m.root_basis = sample_basis(root, T);
    m.root_control = control_tensor(root);
    return m;
  }
};

struct InitOptions {
  ProjectionOptions projection;
  double height = 1.0;
  double contact_fraction = 0.3; // lowest share of a foot's height range
};

struct MotionPrior {
  MorphologyReport report;
  Action action = Action::Idle;
  GaitTemplate gait;
  DenseTrajectory dense;
  std::vector<std::vector<bool>> contact; // J x T
  std::vector<NurbsCurve> joint_curves;
  NurbsCurve root_curve;
  NurbsMotion nurbs;
  MotionParams params;
};

/// Frames where each foot's height lies in the lowest `fraction` of its
/// range, propagated to every joint of that foot's chain.
inline std::vector<std::vector<bool>> detect_contacts(const Skeleton &s, const MorphologyReport &r,
                                                      const DenseTrajectory &d, double fraction) {
  const std::size_t T = d.rotations.dim(0), J = s.size();
  const Tensor pos =
      joint_positions(forward_kinematics(s, d.rotations, d.root, Tensor::zeros({T, J, 3})));
  std::vector<std::vector<bool>> contact(J);
  for (const auto &c : r.chains) {
    if (!c.ground)
      continue;
    const std::size_t f = c.joints.back();
    double lo = 1e300, hi = -1e300;
    for (std::size_t t = 0; t < T; ++t) {
      lo = std::min(lo, pos.at({t, f, 1}));
      hi = std::max(hi, pos.at({t, f, 1}));
    }
    std::vector<bool> flag(T);
    for (std::size_t t = 0; t < T; ++t)
      flag[t] = pos.at({t, f, 1}) <= lo + fraction * (hi - lo) + 1e-12;
    for (std::size_t j : c.joints)
      contact[j] = flag;
  }
  return contact;
}

inline MotionPrior initialize_motion(const Skeleton &s, const MorphologyReport &r, Action action,
                                     const GaitLibrary &lib, std::size_t T,
                                     const InitOptions &o = {}) {
  MotionPrior p;
  p.report = r;
  p.action = action;
  if (const GaitTemplate *g = lib.find(r.morphology, action))
    p.gait = *g;
  p.dense = generate_dense_trajectory(s, r, p.gait, T, o.height);
  p.contact = detect_contacts(s, r, p.dense, o.contact_fraction);
  std::vector<bool> torso(s.size());
  for (std::size_t j = 0; j < s.size(); ++j)
    torso[j] = s.joints[j].category == JointCategory::Spine;
  ProjectionOptions po = o.projection;
  po.cyclic = p.gait.cyclic;
  p.joint_curves = project_to_nurbs(p.dense.rotations, p.contact, torso, po);
  p.root_curve = project_to_nurbs(reshape(p.dense.root, {T, 1, 3}), {{}}, {false}, po).front();
  p.nurbs = NurbsMotion::from_curves(p.joint_curves, p.root_curve, T);
  p.params.rotations = p.nurbs.rotations(p.nurbs.joint_control);
  p.params.root_translation = p.nurbs.root(p.nurbs.root_control);
  p.params.local_offsets = Tensor::zeros({T, s.size(), 3});
  return p;
}

} // namespace rigmo
