#pragma once

// The optimization loop: parameters -> FK -> LBS -> spring-mass -> render ->
// critic -> proxy + physics + environment losses -> AdamW.

#include "rigmo/adamw.hpp"
#include "rigmo/config.hpp"
#include "rigmo/kinematics.hpp"
#include "rigmo/morphology.hpp"

#include <functional>
#include <optional>

namespace rigmo {

/// Everything one forward pass produces, on the tape when the inputs are.
struct ForwardPass {
  MotionParams params;
  Tensor vertices; // T x V x 3 after secondary motion
  Tensor frames;   // T x C x H x W
  LossTerms terms;
};

struct IterationRecord {
  std::size_t iteration = 0;
  double total = 0;
  double proxy = 0, smooth = 0, rom = 0, sym = 0, cyclic = 0, ground = 0, contact = 0,
         offset = 0;
  double w_mosds = 0, w_contact = 0; // scheduled weights
  double tau = 0, schedule_weight = 0;
  double delta_norm = 0, appearance_norm = 0, motion_norm = 0;
  double grad_norm = 0; // before clipping
  std::optional<double> frame_mse; // mock critic only

  nlohmann::json to_json() const {
    nlohmann::json j{{"iteration", iteration},
                     {"total", total},
                     {"losses",
                      {{"proxy", proxy},
                       {"smooth", smooth},
                       {"rom", rom},
                       {"sym", sym},
                       {"cyclic", cyclic},
                       {"ground", ground},
                       {"contact", contact},
                       {"offset", offset}}},
                     {"weights", {{"mosds", w_mosds}, {"contact", w_contact}}},
                     {"tau", tau},
                     {"schedule_weight", schedule_weight},
                     {"norms",
                      {{"delta", delta_norm},
                       {"appearance", appearance_norm},
                       {"motion", motion_norm},
                       {"grad", grad_norm}}}};
    if (frame_mse)
      j["frame_mse"] = *frame_mse;
    return j;
  }
};

inline double mean_squared_difference(const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape())
    throw ShapeError("mean_squared_difference: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += (a[i] - b[i]) * (a[i] - b[i]);
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

/// Fixed per-run data shared by every forward pass.
class Scene {
public:
  Scene(const RunConfig &cfg, Skeleton skel, SkinnedMesh mesh,
        std::optional<DynamicRegionMask> mask = std::nullopt)
      : cfg_(cfg), skel_(std::move(skel)), mesh_(std::move(mesh)) {
    cfg_.validate();
    mesh_.validate(skel_.size());
    report_ = analyze_morphology(skel_);
    limits_ = cfg_.rom.per_joint(skel_);
    pairs_ = report_.joint_pairs();
    if (cfg_.springmass) {
      mask_ = mask ? *mask : build_mask(skel_, mesh_);
      mask_.validate(mesh_.vertex_count());
      if (mask_.dynamic_count() > 0)
        system_ = SpringSystem::build(mesh_, mask_, cfg_.sim, cfg_.regions);
    }
  }

  const RunConfig &config() const { return cfg_; }
  const Skeleton &skeleton() const { return skel_; }
  const SkinnedMesh &mesh() const { return mesh_; }
  const MorphologyReport &report() const { return report_; }
  bool simulates() const { return system_.has_value(); }

  /// LBS vertices followed by secondary motion.
  Tensor deform(const MotionParams &p) const {
    const Tensor lbs = skin(skel_, mesh_, forward_kinematics(skel_, p));
    return system_ ? system_->simulate(lbs) : lbs;
  }

  Tensor render_frames(const Tensor &vertices) const {
    return render(vertices, mesh_.colors, cfg_.camera);
  }

  /// Physics, environment and offset terms; the proxy term is left empty.
  ForwardPass forward(const MotionParams &p, bool cyclic) const {
    ForwardPass f;
    f.params = p;
    const Tensor global = forward_kinematics(skel_, p);
    const Tensor lbs = skin(skel_, mesh_, global);
    f.vertices = system_ ? system_->simulate(lbs) : lbs;
    f.frames = render_frames(f.vertices);
    const auto &w = cfg_.weights;
    f.terms.smooth = smoothness_loss(p.rotations, p.root_translation, w.vel, w.accel);
    f.terms.rom = rom_loss(p.rotations, limits_);
    f.terms.sym = symmetry_loss(p.rotations, pairs_);
    f.terms.cyclic = cyclic ? cyclic_loss(p.rotations, p.root_translation)
                            : sum(p.root_translation) * 0.0;
    f.terms.ground = ground_loss(f.vertices, cfg_.ground_height);
    f.terms.contact = contact_loss(feet(joint_positions(global)),
                                   cfg_.ground_height + cfg_.contact_threshold);
    f.terms.offset = offset_loss(p.local_offsets, w.offset_velocity);
    return f;
  }

private:
  Tensor feet(const Tensor &positions) const {
    const std::size_t T = positions.dim(0);
    if (report_.feet.empty())
      return Tensor::zeros({T, 0, 3});
    return transpose(gather_rows(transpose(positions, 0, 1), report_.feet), 0, 1);
  }

  RunConfig cfg_;
  Skeleton skel_;
  SkinnedMesh mesh_;
  MorphologyReport report_;
  std::vector<double> limits_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  DynamicRegionMask mask_;
  std::optional<SpringSystem> system_;
};

/// Frames of a motion without any optimization, e.g. as a mock target.
inline Tensor render_motion(const Scene &scene, const MotionParams &p) {
  return scene.render_frames(scene.deform(p));
}

/// Owns the learnable state and advances it one iteration at a time.
class Optimization {
public:
  Optimization(const Scene &scene, const MotionPrior &prior, Critic &critic, std::string prompt)
      : scene_(scene), prior_(prior), critic_(critic), prompt_(std::move(prompt)),
        opt_(scene.config().adamw) {
    const RunConfig &c = scene.config();
    const std::size_t T = c.frames, J = scene.skeleton().size();
    prior.params.validate(J);
    if (prior.params.frames() != T)
      throw ShapeError("motion prior has " + std::to_string(prior.params.frames()) +
                       " frames, config asks for " + std::to_string(T));
    if (c.mode == ParamMode::ControlPoints) {
      opt_.add_group("rotations", c.lr_rotations, prior.nurbs.joint_control);
      opt_.add_group("root", c.lr_root, prior.nurbs.root_control);
    } else {
      opt_.add_group("rotations", c.lr_rotations, prior.params.rotations);
      opt_.add_group("root", c.lr_root, prior.params.root_translation);
    }
    opt_.add_group("offsets", c.lr_offsets, prior.params.local_offsets);
  }

  std::size_t iteration() const { return iteration_; }
  const AdamW &optimizer() const { return opt_; }

  /// Current motion parameters (untracked).
  MotionParams params() const { return expand(opt_.groups()[0].value, opt_.groups()[1].value,
                                              opt_.groups()[2].value); }

  /// Frames of the current parameters.
  Tensor frames() const { return render_motion(scene_, params()); }

  /// Runs iteration iteration()+1. On a non-finite loss or gradient the
  /// state is left untouched and NumericError is thrown.
  IterationRecord step() {
    const RunConfig &c = scene_.config();
    const std::size_t u = iteration_ + 1;
    const LossWeights w = c.weights.at(u, c.iterations);

    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto &g : opt_.groups())
      leaves.push_back(tape.variable(g.value));
    const MotionParams p = expand(leaves[0], leaves[1], leaves[2]);
    ForwardPass f = scene_.forward(p, prior_.gait.cyclic);

    IterationRecord rec;
    rec.iteration = u;
    rec.w_mosds = w.mosds;
    rec.w_contact = w.contact;
    if (w.mosds > 0) {
      std::mt19937_64 rng(mix_seed(c.seed, 2 * u));
      CriticRequest req{f.frames.detached(), prompt_, sample_timestep(rng, c.timesteps),
                        c.cfg_scale, mix_seed(c.seed, 2 * u + 1)};
      const CriticResponse resp = critic_.evaluate(req);
      const MoSDSGradient g = mosds_gradient(resp, c.cfg_scale, w.appear, w.motion, req.tau);
      if (critic_.identity_encoder()) {
        f.terms.proxy = proxy_loss(f.frames, g.grad, c.eta);
      } else {
        const double n = static_cast<double>(g.grad.size());
        double value = 0;
        std::vector<double> lg(g.grad.values());
        for (double &x : lg) {
          value += (c.eta * x) * (c.eta * x);
          x *= 2.0 * c.eta / n;
        }
        const Tensor fg = critic_.encoder_vjp(req, Tensor(g.grad.shape(), std::move(lg)));
        f.terms.proxy = proxy_loss_vjp(f.frames, value / n, fg);
      }
      rec.tau = g.tau;
      rec.schedule_weight = g.schedule_weight;
      rec.delta_norm = g.norm(g.delta);
      rec.appearance_norm = g.norm(g.appearance);
      rec.motion_norm = g.norm(g.motion);
    } else {
      f.terms.proxy = sum(f.frames) * 0.0;
    }
    if (const auto *mock = dynamic_cast<const MockCritic *>(&critic_))
      rec.frame_mse = mean_squared_difference(f.frames, mock->target());

    const Tensor total = total_loss(f.terms, w);
    rec.total = total.item();
    rec.proxy = f.terms.proxy.item();
    rec.smooth = f.terms.smooth.item();
    rec.rom = f.terms.rom.item();
    rec.sym = f.terms.sym.item();
    rec.cyclic = f.terms.cyclic.item();
    rec.ground = f.terms.ground.item();
    rec.contact = f.terms.contact.item();
    rec.offset = f.terms.offset.item();
    if (!std::isfinite(rec.total))
      throw NumericError("non-finite total loss at iteration " + std::to_string(u));

    const Gradients grads = tape.backward(total);
    std::vector<Tensor> gs;
    for (const auto &leaf : leaves)
      gs.push_back(grads.of(leaf));
    for (const auto &g : gs)
      check_finite(g.values(), ("gradient at iteration " + std::to_string(u)).c_str());
    rec.grad_norm = clip_global_norm(gs, c.clip_norm);
    const double lr_f = c.lr_factor(u);
    auto &groups = opt_.groups();
    groups[0].lr = c.lr_rotations * lr_f;
    groups[1].lr = c.lr_root * lr_f;
    groups[2].lr = c.lr_offsets * lr_f;
    opt_.step(gs);
    iteration_ = u;
    return rec;
  }

  nlohmann::json checkpoint() const {
    return {{"format_version", "1.0"},
            {"kind", "checkpoint"},
            {"iteration", iteration_},
            {"seed", scene_.config().seed},
            {"mode", scene_.config().mode == ParamMode::ControlPoints ? "control_points"
                                                                      : "per_frame"},
            {"optimizer", opt_.state()}};
  }

  void restore(const nlohmann::json &j) {
    check_format_version(j, "checkpoint");
    if (j.value("kind", "") != "checkpoint")
      throw DataError("checkpoint: not a checkpoint file");
    if (j.at("seed").get<std::uint64_t>() != scene_.config().seed)
      throw DataError("checkpoint: seed differs from the run config");
    const std::string mode = scene_.config().mode == ParamMode::ControlPoints
                                 ? "control_points" : "per_frame";
    if (j.at("mode").get<std::string>() != mode)
      throw DataError("checkpoint: parameter mode differs from the run config");
    opt_.load_state(j.at("optimizer"));
    iteration_ = j.at("iteration").get<std::size_t>();
  }

private:
  MotionParams expand(const Tensor &rot, const Tensor &root, const Tensor &offsets) const {
    if (scene_.config().mode == ParamMode::ControlPoints)
      return {prior_.nurbs.rotations(rot), prior_.nurbs.root(root), offsets};
    return {rot, root, offsets};
  }

  const Scene &scene_;
  const MotionPrior &prior_;
  Critic &critic_;
  std::string prompt_;
  AdamW opt_;
  std::size_t iteration_ = 0;
};

struct RunHooks {
  std::function<void(const IterationRecord &)> on_iteration;
  /// Called every outputs.checkpoint_every iterations, and with the last
  /// good state before any abort (non-finite loss, critic failure).
  std::function<void(const nlohmann::json &)> on_checkpoint;
};

struct RunResult {
  MotionParams params;
  Tensor vertices;
  Tensor frames;
  std::vector<IterationRecord> log;
};

/// Runs iterations up to config().iterations (or `iterations` if given),
/// starting from wherever `opt` currently is.
inline RunResult run_optimization(const Scene &scene, Optimization &opt, const RunHooks &hooks = {},
                                  std::optional<std::size_t> iterations = std::nullopt) {
  const RunConfig &c = scene.config();
  const std::size_t M = iterations.value_or(c.iterations);
  RunResult r;
  while (opt.iteration() < M) {
    IterationRecord rec;
    try {
      rec = opt.step();
    } catch (const std::exception &) {
      if (hooks.on_checkpoint)
        hooks.on_checkpoint(opt.checkpoint());
      throw;
    }
    if (hooks.on_iteration)
      hooks.on_iteration(rec);
    r.log.push_back(rec);
    if (hooks.on_checkpoint && c.outputs.checkpoint_every &&
        opt.iteration() % c.outputs.checkpoint_every == 0)
      hooks.on_checkpoint(opt.checkpoint());
  }
  r.params = opt.params();
  r.vertices = scene.deform(r.params);
  r.frames = scene.render_frames(r.vertices);
  return r;
}

} // namespace rigmo
