#include "rigmo/io.hpp"
#include "rigmo/metrics.hpp"
#include "rigmo/optimizer.hpp"
#include "rigmo/wire.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

using namespace rigmo;

namespace {

// exit codes
constexpr int ok = 0, usage = 1, data_error = 2, runtime_error = 3;

struct Common {
  std::string rig, config, out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

RunConfig load_config(const Common &c) {
  RunConfig cfg = c.config.empty() ? RunConfig{}
                                   : config_from_json(parse_json(read_file(c.config), c.config));
  if (c.seed)
    cfg.seed = *c.seed;
  return cfg;
}

std::string data_file(const std::string &configured, const char *bundled) {
  return configured.empty() ? default_data_dir() + "/" + bundled : configured;
}

MotionPrior make_prior(const Scene &scene, Action a) {
  const RunConfig &c = scene.config();
  const GaitLibrary lib = load_gait_library(data_file(c.gaits, "gaits.json"), c.rom);
  return initialize_motion(scene.skeleton(), scene.report(), a, lib, c.frames, c.init);
}

Action prompt_action(const RunConfig &c, const std::string &prompt) {
  return load_action_lexicon(data_file(c.lexicon, "lexicon.json")).parse(prompt);
}

void note(const Common &c, const std::string &msg) {
  if (!c.quiet)
    std::cerr << msg << "\n";
}

RigBundle load(const Common &c) {
  RigBundle rig = load_rig(c.rig);
  for (const auto &w : rig.warnings)
    std::cerr << "warning: " << w << "\n";
  return rig;
}

nlohmann::json nurbs_json(const MotionPrior &p, int degree) {
  return {{"format_version", "1.0"},
          {"kind", "nurbs_prior"},
          {"action", std::string(to_string(p.action))},
          {"degree", degree},
          {"cyclic", p.gait.cyclic},
          {"joint_control_shape", p.nurbs.joint_control.shape()},
          {"joint_control", p.nurbs.joint_control.values()},
          {"root_control_shape", p.nurbs.root_control.shape()},
          {"root_control", p.nurbs.root_control.values()}};
}

int animate(const Common &c, const std::string &prompt, const std::string &critic_kind,
            const std::string &bridge_addr, std::optional<std::size_t> iterations,
            const std::string &resume, std::optional<std::size_t> stop_after) {
  RunConfig cfg = load_config(c);
  if (iterations)
    cfg.iterations = *iterations;
  if (const char *env = std::getenv("RIGMO_BRIDGE_ADDR"); env && *env)
    cfg.critic.bridge_addr = env;
  if (!bridge_addr.empty())
    cfg.critic.bridge_addr = bridge_addr;
  if (!critic_kind.empty())
    cfg.critic.kind = critic_kind == "bridge" ? CriticKind::Bridge : CriticKind::Mock;
  cfg.validate();

  const RigBundle rig = load(c);
  const Scene scene(cfg, rig.skeleton, rig.mesh, rig.mask);
  const Action action = prompt_action(cfg, prompt);
  const MotionPrior prior = make_prior(scene, action);
  note(c, "rig: " + std::string(to_string(scene.report().morphology)) + ", " +
              std::to_string(rig.skeleton.size()) + " joints, " +
              std::to_string(rig.mesh.vertex_count()) + " vertices; action: " +
              std::string(to_string(action)));

  std::unique_ptr<Critic> critic;
  if (cfg.critic.kind == CriticKind::Mock) {
    Action target = action;
    if (!cfg.critic.mock_target_action.empty())
      target = *parse_action_name(cfg.critic.mock_target_action);
    const MotionPrior ref = target == action ? prior : make_prior(scene, target);
    critic = std::make_unique<MockCritic>(render_motion(scene, ref.params), cfg.critic.kappa);
  } else {
    critic = std::make_unique<wire::BridgeCritic>(
        cfg.critic.bridge_addr, cfg.critic.attempts,
        std::chrono::milliseconds(cfg.critic.backoff_ms));
  }

  const fs::path out(c.out);
  fs::create_directories(out);
  write_file_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");
  write_file_atomic(out / "prior.json", nurbs_json(prior, cfg.init.projection.degree).dump() + "\n");

  Optimization opt(scene, prior, *critic, prompt);
  if (!resume.empty()) {
    opt.restore(parse_json(read_file(resume), resume));
    note(c, "resumed at iteration " + std::to_string(opt.iteration()));
  }
  std::ofstream log(out / cfg.outputs.log, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log)
    throw std::runtime_error("cannot open log " + (out / cfg.outputs.log).string());
  RunHooks hooks;
  hooks.on_iteration = [&](const IterationRecord &r) {
    log << r.to_json().dump() << "\n";
    log.flush();
    if (!c.quiet && (r.iteration % 50 == 0 || r.iteration == cfg.iterations))
      std::cerr << "iteration " << r.iteration << "/" << cfg.iterations << " total " << r.total
                << "\n";
  };
  hooks.on_checkpoint = [&](const nlohmann::json &j) {
    write_file_atomic(out / "checkpoint.json", j.dump() + "\n");
  };
  const RunResult r = run_optimization(scene, opt, hooks, stop_after);
  hooks.on_checkpoint(opt.checkpoint());

  const auto files = export_animation(out, r.params, scene.skeleton(), rig.mesh, r.vertices,
                                      r.frames, {cfg.outputs.obj_sequence, cfg.outputs.png});
  std::cout << nlohmann::json{{"out", out.string()},
                              {"iterations", opt.iteration()},
                              {"action", std::string(to_string(action))},
                              {"final_total", r.log.empty() ? 0.0 : r.log.back().total},
                              {"files", files.size() + 4}}
                   .dump()
            << "\n";
  return ok;
}

int init_only(const Common &c, const std::string &prompt) {
  const RunConfig cfg = load_config(c);
  const RigBundle rig = load(c);
  const Scene scene(cfg, rig.skeleton, rig.mesh, rig.mask);
  const Action action = prompt_action(cfg, prompt);
  const MotionPrior prior = make_prior(scene, action);
  const fs::path out(c.out);
  fs::create_directories(out);
  write_file_atomic(out / "prior.json", nurbs_json(prior, cfg.init.projection.degree).dump() + "\n");
  const Tensor v = scene.deform(prior.params);
  export_animation(out, prior.params, scene.skeleton(), rig.mesh, v,
                   cfg.outputs.png ? scene.render_frames(v) : Tensor{},
                   {cfg.outputs.obj_sequence, cfg.outputs.png});
  note(c, "action " + std::string(to_string(action)) + ", " + std::to_string(cfg.frames) +
              " frames written to " + out.string());
  return ok;
}

int simulate(const Common &c, const std::string &motion) {
  RunConfig cfg = load_config(c);
  const RigBundle rig = load(c);
  const MotionParams p = motion_from_json(parse_json(read_file(motion), motion), rig.skeleton);
  cfg.frames = p.frames();
  const Scene scene(cfg, rig.skeleton, rig.mesh, rig.mask);
  if (!scene.simulates())
    note(c, "no dynamic vertices; output is plain skinning");
  const Tensor v = scene.deform(p);
  export_animation(c.out, p, scene.skeleton(), rig.mesh, v,
                   cfg.outputs.png ? scene.render_frames(v) : Tensor{}, {true, cfg.outputs.png});
  note(c, std::to_string(p.frames()) + " simulated frames written to " + c.out);
  return ok;
}

int metrics_mld(const Common &c, const std::string &motion, const std::string &meshes) {
  const RigBundle rig = load(c);
  Tensor frames;
  if (!motion.empty()) {
    RunConfig cfg = load_config(c);
    const MotionParams p = motion_from_json(parse_json(read_file(motion), motion), rig.skeleton);
    cfg.frames = p.frames();
    frames = Scene(cfg, rig.skeleton, rig.mesh, rig.mask).deform(p).detached();
  } else {
    std::vector<fs::path> files;
    for (const auto &e : fs::directory_iterator(meshes))
      if (e.path().extension() == ".obj")
        files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw DataError("no .obj frames in " + meshes);
    std::vector<double> v;
    for (const auto &f : files) {
      const ObjMesh m = parse_obj(read_file(f), f.string());
      if (m.vertices.size() != rig.mesh.vertex_count())
        throw DataError(f.string() + ": " + std::to_string(m.vertices.size()) +
                        " vertices, rig has " + std::to_string(rig.mesh.vertex_count()));
      for (const auto &p : m.vertices)
        v.insert(v.end(), p.begin(), p.end());
    }
    frames = Tensor({files.size(), rig.mesh.vertex_count(), 3}, std::move(v));
  }
  const MldReport r = mesh_laplacian_distortion(rig.mesh, frames);
  for (const auto &w : r.warnings)
    std::cerr << "warning: " << w << "\n";
  const nlohmann::json report{{"format_version", "1.0"},
                              {"kind", "mld"},
                              {"frames", r.per_frame.size()},
                              {"isolated_vertices", r.isolated},
                              {"per_frame", r.per_frame},
                              {"mean", r.mean}};
  if (c.out.empty())
    std::cout << report.dump(2) << "\n";
  else
    write_file_atomic(c.out, report.dump(2) + "\n");
  return ok;
}

int validate_rig(const Common &c) {
  const RigBundle rig = load(c);
  nlohmann::json feet = nlohmann::json::array();
  for (std::size_t f : rig.report.feet)
    feet.push_back(rig.skeleton.joints[f].name);
  nlohmann::json cats = nlohmann::json::object();
  for (const auto &j : rig.skeleton.joints)
    cats[j.name] = std::string(to_string(j.category));
  std::cout << nlohmann::json{{"joints", rig.skeleton.size()},
                              {"vertices", rig.mesh.vertex_count()},
                              {"faces", rig.mesh.faces.size()},
                              {"morphology", std::string(to_string(rig.report.morphology))},
                              {"feet", feet},
                              {"categories", cats},
                              {"dynamic_vertices", rig.mask ? rig.mask->dynamic_count() : 0},
                              {"scale", rig.scale},
                              {"warnings", rig.warnings}}
                   .dump(2)
            << "\n";
  return ok;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"rigmo: text-guided animation of rigged meshes"};
  app.require_subcommand(1);
  Common common;
  std::string prompt, critic, bridge_addr, motion, meshes, resume;
  std::optional<std::size_t> iterations, stop_after;

  auto add_common = [&](CLI::App *s, bool needs_out) {
    s->add_option("--rig", common.rig, "rig directory (manifest.json)")->required()->check(CLI::ExistingDirectory);
    s->add_option("--config", common.config, "run config JSON")->check(CLI::ExistingFile);
    auto *o = s->add_option("--out", common.out, "output directory");
    if (needs_out)
      o->required();
    s->add_option("--seed", common.seed, "random seed (overrides the config)");
    s->add_flag("-q,--quiet", common.quiet, "no progress on stderr");
  };

  auto *an = app.add_subcommand("animate", "optimize a motion for a prompt");
  add_common(an, true);
  an->add_option("--prompt", prompt, "text prompt")->required();
  an->add_option("--critic", critic, "critic backend")->check(CLI::IsMember({"mock", "bridge"}));
  an->add_option("--bridge-addr", bridge_addr, "critic bridge host:port (else $RIGMO_BRIDGE_ADDR, else config)");
  an->add_option("--iterations", iterations, "iteration count (overrides the config)");
  an->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  an->add_option("--stop-after", stop_after,
                 "stop after this iteration, keeping the schedule of the full run");

  auto *io = app.add_subcommand("init-only", "write the motion prior without optimizing");
  add_common(io, true);
  io->add_option("--prompt", prompt, "text prompt")->required();

  auto *sim = app.add_subcommand("simulate", "skin and simulate an existing motion file");
  add_common(sim, true);
  sim->add_option("--motion", motion, "motion.json")->required()->check(CLI::ExistingFile);

  auto *met = app.add_subcommand("metrics", "geometry metrics");
  met->require_subcommand(1);
  auto *mld = met->add_subcommand("mld", "mesh Laplacian distortion against the rest mesh");
  add_common(mld, false);
  auto *src = mld->add_option_group("source");
  src->add_option("--motion", motion, "motion.json")->check(CLI::ExistingFile);
  src->add_option("--meshes", meshes, "directory of per-frame OBJ files")->check(CLI::ExistingDirectory);
  src->require_option(1);

  auto *vr = app.add_subcommand("validate-rig", "load and check a rig directory");
  vr->add_option("--rig", common.rig, "rig directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return usage;
  }

  try {
    if (*an)
      return animate(common, prompt, critic, bridge_addr, iterations, resume, stop_after);
    if (*io)
      return init_only(common, prompt);
    if (*sim)
      return simulate(common, motion);
    if (*mld)
      return metrics_mld(common, motion, meshes);
    if (*vr)
      return validate_rig(common);
  } catch (const DataError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return data_error;
  } catch (const ShapeError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return data_error;
  } catch (const nlohmann::json::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return data_error;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return runtime_error;
  }
  return usage;
}
