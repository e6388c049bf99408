#pragma once

// Run configuration and its JSON form. Every field is optional in the file;
// unknown keys are rejected so typos do not silently fall back to defaults.

#include "rigmo/adamw.hpp"
#include "rigmo/losses.hpp"
#include "rigmo/motion_init.hpp"
#include "rigmo/mosds.hpp"
#include "rigmo/renderer.hpp"
#include "rigmo/springmass.hpp"

#include <nlohmann/json.hpp>

#include <numbers>
#include <optional>
#include <set>
#include <string>

namespace rigmo {

enum class ParamMode { ControlPoints, PerFrame };
enum class CriticKind { Mock, Bridge };
enum class LrSchedule { Constant, Cosine };

struct CriticConfig {
  CriticKind kind = CriticKind::Mock;
  double kappa = 1.0;
  // mock target: render of this action's prior on the same rig; empty means
  // the prompt's own action
  std::string mock_target_action;
  std::string bridge_addr = "127.0.0.1:8765";
  int attempts = 3;
  int backoff_ms = 200;
};

struct OutputConfig {
  std::string log = "log.jsonl"; // relative to the output directory
  std::size_t checkpoint_every = 100;
  bool obj_sequence = false;
  bool png = false;
};

struct RunConfig {
  static constexpr const char *format_version = "1.0";

  std::size_t frames = 48;
  std::size_t iterations = 600;
  std::uint64_t seed = 0;
  ParamMode mode = ParamMode::ControlPoints;

  double lr_rotations = 1.5e-2;
  double lr_root = 2.0e-2;
  double lr_offsets = 5.0e-3;
  AdamWHyper adamw;
  double clip_norm = 10.0;
  LrSchedule lr_schedule = LrSchedule::Constant;
  double lr_min_factor = 0.0; // cosine floor as a fraction of the base rate

  /// Multiplier on every base learning rate at iteration u of `iterations`.
  double lr_factor(std::size_t u) const {
    if (lr_schedule == LrSchedule::Constant || iterations <= 1)
      return 1.0;
    const double p = static_cast<double>(u - 1) / static_cast<double>(iterations - 1);
    return lr_min_factor + (1.0 - lr_min_factor) * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
  }

  LossWeights weights;
  RomLimits rom;
  double contact_threshold = 0.025; // of character height
  double ground_height = 0.0;

  double cfg_scale = 10.0;
  TimestepRange timesteps;
  double eta = 1.0;

  InitOptions init;
  std::string gaits;   // empty: bundled data
  std::string lexicon; // empty: bundled data

  Camera camera;
  bool springmass = true;
  SpringMassParams sim;
  std::map<std::string, RegionOverride> regions;

  CriticConfig critic;
  OutputConfig outputs;

  void validate() const {
    if (frames < 8)
      throw DataError("config: frames must be at least 8");
    if (iterations < 1)
      throw DataError("config: iterations must be at least 1");
    for (double lr : {lr_rotations, lr_root, lr_offsets})
      if (!(lr >= 0))
        throw DataError("config: learning rates must be non-negative");
    adamw.validate();
    if (!(lr_min_factor >= 0 && lr_min_factor <= 1))
      throw DataError("config: lr_min_factor must lie in [0, 1]");
    if (!(clip_norm >= 0))
      throw DataError("config: clip_norm must be non-negative (0 disables clipping)");
    weights.validate();
    if (!(contact_threshold > 0) || !(cfg_scale >= 0) || !(eta >= 0))
      throw DataError("config: contact_threshold > 0, cfg_scale >= 0 and eta >= 0 required");
    timesteps.validate();
    if (init.projection.degree < 1 ||
        init.projection.control_points < static_cast<std::size_t>(init.projection.degree) + 1)
      throw DataError("config: need at least degree + 1 control points");
    if (init.projection.control_points > frames)
      throw DataError("config: more control points than frames");
    camera.validate();
    sim.validate();
    if (critic.attempts < 1 || critic.backoff_ms < 0)
      throw DataError("config: critic attempts >= 1 and backoff_ms >= 0 required");
    if (!critic.mock_target_action.empty() && !parse_action_name(critic.mock_target_action))
      throw DataError("config: unknown mock target action '" + critic.mock_target_action + "'");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json &j, const std::string &where,
                       std::initializer_list<const char *> allowed) {
  if (!j.is_object())
    throw DataError("config: " + where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto &[k, v] : j.items())
    if (!ok.count(k))
      throw DataError("config: unknown key '" + k + "' in " + where);
}

template <class T>
void read(const nlohmann::json &j, const char *key, T &out, const std::string &where) {
  if (!j.contains(key))
    return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception &) {
    throw DataError("config: " + where + "." + key + " has the wrong type");
  }
}

inline Ramp read_ramp(const nlohmann::json &j, const std::string &where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw DataError("config: " + where + " must be [start, end]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline nlohmann::json vec3_json(const Vec3 &v) { return {v[0], v[1], v[2]}; }

inline Vec3 read_vec3(const nlohmann::json &j, const std::string &where) {
  if (!j.is_array() || j.size() != 3)
    throw DataError("config: " + where + " must be a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

} // namespace detail

inline nlohmann::json to_json(const RunConfig &c) {
  using nlohmann::json;
  const auto &w = c.weights;
  json rom = json::object();
  for (const auto &[cat, v] : c.rom.limit)
    rom[std::string(to_string(cat))] = v;
  json regions = json::object();
  for (const auto &[name, o] : c.regions) {
    json r = json::object();
    if (o.k_pos) r["k_pos"] = *o.k_pos;
    if (o.k_struct) r["k_struct"] = *o.k_struct;
    if (o.damping) r["damping"] = *o.damping;
    if (o.mass) r["mass"] = *o.mass;
    if (o.d_max_fraction) r["d_max_fraction"] = *o.d_max_fraction;
    regions[name] = r;
  }
  return {
      {"format_version", RunConfig::format_version},
      {"frames", c.frames},
      {"iterations", c.iterations},
      {"seed", c.seed},
      {"mode", c.mode == ParamMode::ControlPoints ? "control_points" : "per_frame"},
      {"optimizer",
       {{"lr_rotations", c.lr_rotations},
        {"lr_root", c.lr_root},
        {"lr_offsets", c.lr_offsets},
        {"beta1", c.adamw.beta1},
        {"beta2", c.adamw.beta2},
        {"eps", c.adamw.eps},
        {"weight_decay", c.adamw.weight_decay},
        {"clip_norm", c.clip_norm},
        {"lr_schedule", c.lr_schedule == LrSchedule::Constant ? "constant" : "cosine"},
        {"lr_min_factor", c.lr_min_factor}}},
      {"weights",
       {{"vel", w.vel},
        {"accel", w.accel},
        {"smooth", w.smooth},
        {"rom", w.rom},
        {"sym", w.sym},
        {"cyclic", w.cyclic},
        {"ground", w.ground},
        {"contact", w.contact},
        {"offset", w.offset},
        {"offset_velocity", w.offset_velocity},
        {"mosds", w.mosds},
        {"appear", w.appear},
        {"motion", w.motion},
        {"phy", w.phy},
        {"env", w.env},
        {"mosds_ramp", {w.mosds_ramp.start, w.mosds_ramp.end}},
        {"contact_ramp", {w.contact_ramp.start, w.contact_ramp.end}}}},
      {"rom_limits", rom},
      {"contact_threshold", c.contact_threshold},
      {"ground_height", c.ground_height},
      {"mosds",
       {{"cfg_scale", c.cfg_scale},
        {"tau_min", c.timesteps.lo},
        {"tau_max", c.timesteps.hi},
        {"eta", c.eta}}},
      {"init",
       {{"control_points", c.init.projection.control_points},
        {"degree", c.init.projection.degree},
        {"contact_weight", c.init.projection.w_contact},
        {"torso_weight", c.init.projection.w_torso},
        {"guard_seam", c.init.projection.guard_seam},
        {"contact_fraction", c.init.contact_fraction},
        {"gaits", c.gaits},
        {"lexicon", c.lexicon}}},
      {"camera",
       {{"view", detail::vec3_json(c.camera.view)},
        {"up", detail::vec3_json(c.camera.up)},
        {"center", detail::vec3_json(c.camera.center)},
        {"scale", c.camera.scale},
        {"height", c.camera.height},
        {"width", c.camera.width},
        {"sigma", c.camera.sigma}}},
      {"springmass",
       {{"enabled", c.springmass},
        {"k_pos", c.sim.k_pos},
        {"k_struct", c.sim.k_struct},
        {"damping", c.sim.damping},
        {"gravity", c.sim.gravity},
        {"dt", c.sim.dt},
        {"substeps", c.sim.substeps},
        {"vel_max", c.sim.vel_max},
        {"d_max_fraction", c.sim.d_max_fraction},
        {"mass", c.sim.mass},
        {"stretch_limit", c.sim.stretch_limit},
        {"regions", regions}}},
      {"critic",
       {{"type", c.critic.kind == CriticKind::Mock ? "mock" : "bridge"},
        {"kappa", c.critic.kappa},
        {"mock_target_action", c.critic.mock_target_action},
        {"bridge_addr", c.critic.bridge_addr},
        {"attempts", c.critic.attempts},
        {"backoff_ms", c.critic.backoff_ms}}},
      {"outputs",
       {{"log", c.outputs.log},
        {"checkpoint_every", c.outputs.checkpoint_every},
        {"obj_sequence", c.outputs.obj_sequence},
        {"png", c.outputs.png}}},
  };
}

namespace detail {

inline RunConfig parse_config(const nlohmann::json &j) {
  check_format_version(j, "run config");
  check_keys(j, "config",
                     {"format_version", "frames", "iterations", "seed", "mode", "optimizer",
                      "weights", "rom_limits", "contact_threshold", "ground_height", "mosds",
                      "init", "camera", "springmass", "critic", "outputs"});
  RunConfig c;
  read(j, "frames", c.frames, "config");
  read(j, "iterations", c.iterations, "config");
  read(j, "seed", c.seed, "config");
  read(j, "contact_threshold", c.contact_threshold, "config");
  read(j, "ground_height", c.ground_height, "config");
  if (j.contains("mode")) {
    const auto m = j["mode"].get<std::string>();
    if (m == "control_points")
      c.mode = ParamMode::ControlPoints;
    else if (m == "per_frame")
      c.mode = ParamMode::PerFrame;
    else
      throw DataError("config: mode must be control_points or per_frame, got '" + m + "'");
  }
  if (j.contains("optimizer")) {
    const auto &o = j["optimizer"];
    check_keys(o, "optimizer",
                       {"lr_rotations", "lr_root", "lr_offsets", "beta1", "beta2", "eps",
                        "weight_decay", "clip_norm", "lr_schedule", "lr_min_factor"});
    read(o, "lr_rotations", c.lr_rotations, "optimizer");
    read(o, "lr_root", c.lr_root, "optimizer");
    read(o, "lr_offsets", c.lr_offsets, "optimizer");
    read(o, "beta1", c.adamw.beta1, "optimizer");
    read(o, "beta2", c.adamw.beta2, "optimizer");
    read(o, "eps", c.adamw.eps, "optimizer");
    read(o, "weight_decay", c.adamw.weight_decay, "optimizer");
    read(o, "clip_norm", c.clip_norm, "optimizer");
    read(o, "lr_min_factor", c.lr_min_factor, "optimizer");
    if (o.contains("lr_schedule")) {
      const auto m = o["lr_schedule"].get<std::string>();
      if (m == "constant")
        c.lr_schedule = LrSchedule::Constant;
      else if (m == "cosine")
        c.lr_schedule = LrSchedule::Cosine;
      else
        throw DataError("config: optimizer.lr_schedule must be constant or cosine, got '" + m + "'");
    }
  }
  if (j.contains("weights")) {
    const auto &o = j["weights"];
    check_keys(o, "weights",
                       {"vel", "accel", "smooth", "rom", "sym", "cyclic", "ground", "contact",
                        "offset", "offset_velocity", "mosds", "appear", "motion", "phy", "env",
                        "mosds_ramp", "contact_ramp"});
    auto &w = c.weights;
    read(o, "vel", w.vel, "weights");
    read(o, "accel", w.accel, "weights");
    read(o, "smooth", w.smooth, "weights");
    read(o, "rom", w.rom, "weights");
    read(o, "sym", w.sym, "weights");
    read(o, "cyclic", w.cyclic, "weights");
    read(o, "ground", w.ground, "weights");
    read(o, "contact", w.contact, "weights");
    read(o, "offset", w.offset, "weights");
    read(o, "offset_velocity", w.offset_velocity, "weights");
    read(o, "mosds", w.mosds, "weights");
    read(o, "appear", w.appear, "weights");
    read(o, "motion", w.motion, "weights");
    read(o, "phy", w.phy, "weights");
    read(o, "env", w.env, "weights");
    if (o.contains("mosds_ramp"))
      w.mosds_ramp = read_ramp(o["mosds_ramp"], "weights.mosds_ramp");
    if (o.contains("contact_ramp"))
      w.contact_ramp = read_ramp(o["contact_ramp"], "weights.contact_ramp");
  }
  if (j.contains("rom_limits")) {
    if (!j["rom_limits"].is_object())
      throw DataError("config: rom_limits must be an object");
    for (const auto &[name, v] : j["rom_limits"].items()) {
      const auto cat = parse_category(name);
      if (!cat)
        throw DataError("config: unknown joint category '" + name + "' in rom_limits");
      c.rom.limit[*cat] = v.get<double>();
    }
  }
  if (j.contains("mosds")) {
    const auto &o = j["mosds"];
    check_keys(o, "mosds", {"cfg_scale", "tau_min", "tau_max", "eta"});
    read(o, "cfg_scale", c.cfg_scale, "mosds");
    read(o, "tau_min", c.timesteps.lo, "mosds");
    read(o, "tau_max", c.timesteps.hi, "mosds");
    read(o, "eta", c.eta, "mosds");
  }
  if (j.contains("init")) {
    const auto &o = j["init"];
    check_keys(o, "init",
                       {"control_points", "degree", "contact_weight", "torso_weight",
                        "guard_seam", "contact_fraction", "gaits", "lexicon"});
    auto &p = c.init.projection;
    read(o, "control_points", p.control_points, "init");
    read(o, "degree", p.degree, "init");
    read(o, "contact_weight", p.w_contact, "init");
    read(o, "torso_weight", p.w_torso, "init");
    read(o, "guard_seam", p.guard_seam, "init");
    read(o, "contact_fraction", c.init.contact_fraction, "init");
    read(o, "gaits", c.gaits, "init");
    read(o, "lexicon", c.lexicon, "init");
  }
  if (j.contains("camera")) {
    const auto &o = j["camera"];
    check_keys(o, "camera", {"view", "up", "center", "scale", "height", "width", "sigma"});
    if (o.contains("view")) c.camera.view = read_vec3(o["view"], "camera.view");
    if (o.contains("up")) c.camera.up = read_vec3(o["up"], "camera.up");
    if (o.contains("center")) c.camera.center = read_vec3(o["center"], "camera.center");
    read(o, "scale", c.camera.scale, "camera");
    read(o, "height", c.camera.height, "camera");
    read(o, "width", c.camera.width, "camera");
    read(o, "sigma", c.camera.sigma, "camera");
  }
  if (j.contains("springmass")) {
    const auto &o = j["springmass"];
    check_keys(o, "springmass",
                       {"enabled", "k_pos", "k_struct", "damping", "gravity", "dt", "substeps",
                        "vel_max", "d_max_fraction", "mass", "stretch_limit", "regions"});
    read(o, "enabled", c.springmass, "springmass");
    read(o, "k_pos", c.sim.k_pos, "springmass");
    read(o, "k_struct", c.sim.k_struct, "springmass");
    read(o, "damping", c.sim.damping, "springmass");
    read(o, "gravity", c.sim.gravity, "springmass");
    read(o, "dt", c.sim.dt, "springmass");
    read(o, "substeps", c.sim.substeps, "springmass");
    read(o, "vel_max", c.sim.vel_max, "springmass");
    read(o, "d_max_fraction", c.sim.d_max_fraction, "springmass");
    read(o, "mass", c.sim.mass, "springmass");
    read(o, "stretch_limit", c.sim.stretch_limit, "springmass");
    if (o.contains("regions")) {
      if (!o["regions"].is_object())
        throw DataError("config: springmass.regions must be an object");
      for (const auto &[name, r] : o["regions"].items()) {
        const std::string where = "springmass.regions." + name;
        check_keys(r, where, {"k_pos", "k_struct", "damping", "mass", "d_max_fraction"});
        RegionOverride ov;
        auto opt = [&](const char *k, std::optional<double> &dst) {
          if (r.contains(k))
            dst = r[k].get<double>();
        };
        opt("k_pos", ov.k_pos);
        opt("k_struct", ov.k_struct);
        opt("damping", ov.damping);
        opt("mass", ov.mass);
        opt("d_max_fraction", ov.d_max_fraction);
        c.regions[name] = ov;
      }
    }
  }
  if (j.contains("critic")) {
    const auto &o = j["critic"];
    check_keys(o, "critic",
                       {"type", "kappa", "mock_target_action", "bridge_addr", "attempts",
                        "backoff_ms"});
    if (o.contains("type")) {
      const auto t = o["type"].get<std::string>();
      if (t == "mock")
        c.critic.kind = CriticKind::Mock;
      else if (t == "bridge")
        c.critic.kind = CriticKind::Bridge;
      else
        throw DataError("config: critic.type must be mock or bridge, got '" + t + "'");
    }
    read(o, "kappa", c.critic.kappa, "critic");
    read(o, "mock_target_action", c.critic.mock_target_action, "critic");
    read(o, "bridge_addr", c.critic.bridge_addr, "critic");
    read(o, "attempts", c.critic.attempts, "critic");
    read(o, "backoff_ms", c.critic.backoff_ms, "critic");
  }
  if (j.contains("outputs")) {
    const auto &o = j["outputs"];
    check_keys(o, "outputs", {"log", "checkpoint_every", "obj_sequence", "png"});
    read(o, "log", c.outputs.log, "outputs");
    read(o, "checkpoint_every", c.outputs.checkpoint_every, "outputs");
    read(o, "obj_sequence", c.outputs.obj_sequence, "outputs");
    read(o, "png", c.outputs.png, "outputs");
  }
  c.validate();
  return c;
}

} // namespace detail

/// Overlays `j` on the defaults and validates the result.
inline RunConfig config_from_json(const nlohmann::json &j) {
  try {
    return detail::parse_config(j);
  } catch (const nlohmann::json::exception &e) {
    throw DataError(std::string("config: ") + e.what());
  }
}

} // namespace rigmo
