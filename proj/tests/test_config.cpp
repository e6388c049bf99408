#include "rigmo/config.hpp"

#include <gtest/gtest.h>

using namespace rigmo;

TEST(Config, PublishedConstantsAreDefaults) {
  const RunConfig c;
  EXPECT_EQ(c.frames, 48u);
  EXPECT_EQ(c.cfg_scale, 10.0);
  EXPECT_EQ(c.lr_rotations, 1.5e-2);
  EXPECT_EQ(c.lr_root, 2.0e-2);
  EXPECT_EQ(c.lr_offsets, 5.0e-3);
  EXPECT_EQ(c.adamw.weight_decay, 1e-5);
  EXPECT_EQ(c.timesteps.lo, 0.02);
  EXPECT_EQ(c.timesteps.hi, 0.50);
  EXPECT_EQ(c.init.projection.degree, 3);
  EXPECT_EQ(c.rom.of(JointCategory::Spine), 0.4);
  EXPECT_EQ(c.rom.of(JointCategory::HingeLimb), 1.5);
  EXPECT_EQ(c.sim.stretch_limit, 0.3);
  EXPECT_EQ(c.adamw.beta1, 0.9);
  EXPECT_EQ(c.adamw.beta2, 0.999);
  EXPECT_EQ(c.adamw.eps, 1e-8);
  EXPECT_EQ(c.clip_norm, 10.0);
  EXPECT_EQ(c.iterations, 600u);
  EXPECT_EQ(c.mode, ParamMode::ControlPoints);
  EXPECT_EQ(c.critic.kind, CriticKind::Mock);
  EXPECT_NO_THROW(c.validate());

  // the same values as they appear in a written config
  const auto j = to_json(c);
  EXPECT_EQ(j["frames"], 48);
  EXPECT_EQ(j["mosds"]["cfg_scale"], 10.0);
  EXPECT_EQ(j["mosds"]["tau_min"], 0.02);
  EXPECT_EQ(j["mosds"]["tau_max"], 0.5);
  EXPECT_EQ(j["optimizer"]["lr_rotations"], 0.015);
  EXPECT_EQ(j["optimizer"]["lr_root"], 0.02);
  EXPECT_EQ(j["optimizer"]["lr_offsets"], 0.005);
  EXPECT_EQ(j["optimizer"]["weight_decay"], 1e-5);
  EXPECT_EQ(j["init"]["degree"], 3);
}

TEST(Config, ScheduleDefaults) {
  const RunConfig c;
  const LossWeights early = c.weights.at(1, 600), mid = c.weights.at(120, 600),
                    late = c.weights.at(600, 600);
  EXPECT_LT(early.mosds, c.weights.mosds);
  EXPECT_EQ(mid.mosds, c.weights.mosds);
  EXPECT_EQ(mid.contact, 0.0);
  EXPECT_EQ(late.contact, c.weights.contact);
  EXPECT_EQ(early.smooth, late.smooth);
  EXPECT_EQ(c.lr_factor(1), 1.0);
  EXPECT_EQ(c.lr_factor(600), 1.0);
}

TEST(Config, CosineSchedule) {
  RunConfig c;
  c.iterations = 5;
  c.lr_schedule = LrSchedule::Cosine;
  c.lr_min_factor = 0.1;
  EXPECT_DOUBLE_EQ(c.lr_factor(1), 1.0);
  EXPECT_DOUBLE_EQ(c.lr_factor(3), 0.55);
  EXPECT_DOUBLE_EQ(c.lr_factor(5), 0.1);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c;
  c.frames = 16;
  c.iterations = 7;
  c.seed = 123456789012345ull;
  c.mode = ParamMode::PerFrame;
  c.lr_root = 0.1 + 0.2;
  c.lr_schedule = LrSchedule::Cosine;
  c.weights.sym = 0.25;
  c.weights.contact_ramp = {0.5, 0.75};
  c.rom.limit[JointCategory::Tail] = 1.25;
  c.timesteps = {0.1, 0.2};
  c.camera.width = 32;
  c.camera.view = {0, 0, 1};
  c.sim.damping = 3.5;
  c.regions["tail"].k_pos = 5.0;
  c.critic.kind = CriticKind::Bridge;
  c.critic.bridge_addr = "10.0.0.2:9999";
  c.critic.mock_target_action = "jump";
  c.outputs.png = true;
  const auto j = to_json(c);
  const RunConfig d = config_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(to_json(d), j);
  EXPECT_EQ(d.lr_root, 0.1 + 0.2);
  EXPECT_EQ(d.seed, 123456789012345ull);
  EXPECT_EQ(*d.regions.at("tail").k_pos, 5.0);
  EXPECT_FALSE(d.regions.at("tail").damping.has_value());
}

TEST(Config, PartialFileOverlaysDefaults) {
  const RunConfig c = config_from_json(nlohmann::json::parse(
      R"({"format_version":"1.0","iterations":42,"mosds":{"eta":0.5}})"));
  EXPECT_EQ(c.iterations, 42u);
  EXPECT_EQ(c.eta, 0.5);
  EXPECT_EQ(c.frames, 48u);
  EXPECT_EQ(c.cfg_scale, 10.0);
}

TEST(Config, RejectsBadInput) {
  for (const char *bad : {
           R"({"format_version":"1.0","frame":48})",
           R"({"format_version":"1.0","optimizer":{"lr":1}})",
           R"({"format_version":"1.0","weights":{"smooth":-1}})",
           R"({"format_version":"1.0","frames":4})",
           R"({"format_version":"1.0","iterations":0})",
           R"({"format_version":"1.0","mode":"bones"})",
           R"({"format_version":"1.0","mosds":{"tau_min":0.6,"tau_max":0.5}})",
           R"({"format_version":"1.0","rom_limits":{"wing":1}})",
           R"({"format_version":"1.0","critic":{"type":"oracle"}})",
           R"({"format_version":"1.0","critic":{"mock_target_action":"fly-backwards"}})",
           R"({"format_version":"1.0","init":{"control_points":3}})",
           R"({"format_version":"1.0","seed":"x"})",
           R"({"format_version":"2.0"})",
           R"({"frames":48})",
           R"({"format_version":"1.0","rom_limits":{"spine":"wide"}})",
           R"({"format_version":"1.0","mode":3})",
           R"({"format_version":"1.0","frames":8,"init":{"control_points":9}})",
       })
    EXPECT_THROW(config_from_json(nlohmann::json::parse(bad)), DataError) << bad;
  EXPECT_NO_THROW(config_from_json(nlohmann::json::parse(R"({"format_version":"1.3"})")));
}
