#include "rigmo/motion_init.hpp"
#include "support/rigs.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace rigmo;
using namespace rigmo::testing;

namespace {

const GaitLibrary &library() {
  static const GaitLibrary lib = load_gait_library(default_data_dir() + "/gaits.json");
  return lib;
}

const ActionLexicon &lexicon() {
  static const ActionLexicon lex = load_action_lexicon(default_data_dir() + "/lexicon.json");
  return lex;
}

Skeleton categorized(Skeleton s) {
  assign_categories(s, analyze_morphology(s));
  return s;
}

std::vector<double> channel(const Tensor &rot, std::size_t j, std::size_t e) {
  std::vector<double> out;
  for (std::size_t t = 0; t < rot.dim(0); ++t)
    out.push_back(rot.at({t, j, e}));
  return out;
}

// Normalized cross-correlation of a and b at integer lag (b shifted forward).
double xcorr(const std::vector<double> &a, const std::vector<double> &b, int lag) {
  const auto n = static_cast<int>(a.size());
  double ma = 0, mb = 0;
  for (int i = 0; i < n; ++i) {
    ma += a[static_cast<std::size_t>(i)] / n;
    mb += b[static_cast<std::size_t>(i)] / n;
  }
  double s = 0, va = 0, vb = 0;
  int count = 0;
  for (int i = 0; i < n; ++i) {
    const int k = i + lag;
    if (k < 0 || k >= n)
      continue;
    s += (a[static_cast<std::size_t>(i)] - ma) * (b[static_cast<std::size_t>(k)] - mb);
    ++count;
  }
  for (int i = 0; i < n; ++i) {
    va += std::pow(a[static_cast<std::size_t>(i)] - ma, 2) / n;
    vb += std::pow(b[static_cast<std::size_t>(i)] - mb, 2) / n;
  }
  return s / count / std::sqrt(va * vb);
}

} // namespace

TEST(Morphology, ClassifiesFixtures) {
  EXPECT_EQ(classify_morphology(humanoid()), Morphology::Biped);
  EXPECT_EQ(classify_morphology(quadruped()), Morphology::Quadruped);
  EXPECT_EQ(classify_morphology(lamp()), Morphology::NonLiving);
  EXPECT_EQ(classify_morphology(bird()), Morphology::FlyingAquatic);
}

TEST(Morphology, LampRuleTrace) {
  // All joints lie on the sagittal plane, so the whole lamp is trunk and no
  // limb chain exists: zero ground chains, zero pairs -> non-living.
  const auto r = analyze_morphology(lamp());
  EXPECT_EQ(r.trunk, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_TRUE(r.chains.empty());
  EXPECT_EQ(r.limb_pairs, 0u);
}

TEST(Morphology, Diagnostics) {
  const auto s = humanoid();
  const auto r = analyze_morphology(s);
  EXPECT_EQ(r.depth, 6u);
  EXPECT_EQ(r.max_branching, 3u);
  EXPECT_EQ(r.limb_pairs, 2u);
  EXPECT_EQ(r.feet, (std::vector<std::size_t>{8, 12}));
  EXPECT_GT(r.bone_min, 0.0);
  EXPECT_LE(r.bone_min, r.bone_mean);
  EXPECT_LE(r.bone_mean, r.bone_max);
  const auto again = analyze_morphology(s);
  EXPECT_EQ(again.bone_std, r.bone_std);
  EXPECT_EQ(again.group, r.group);
  EXPECT_EQ(r.joint_pairs().size(), 7u);
}

TEST(Morphology, QuadrupedGroups) {
  const auto s = quadruped();
  const auto r = analyze_morphology(s);
  EXPECT_EQ(r.group[*s.find("hip_hl")], "leg");
  EXPECT_EQ(r.group[*s.find("hip_fr")], "front_leg");
  EXPECT_EQ(r.group[*s.find("tail2")], "tail");
  EXPECT_EQ(r.side[*s.find("foot_hl")], Side::Left);
  EXPECT_EQ(r.side[*s.find("foot_hr")], Side::Right);
}

TEST(Morphology, HeuristicCategories) {
  const auto s = categorized(humanoid());
  auto cat = [&](const char *n) { return s.joints[*s.find(n)].category; };
  EXPECT_EQ(cat("pelvis"), JointCategory::Spine);
  EXPECT_EQ(cat("head"), JointCategory::Head);
  EXPECT_EQ(cat("hip_l"), JointCategory::BallLimb);
  EXPECT_EQ(cat("knee_r"), JointCategory::HingeLimb);
  EXPECT_EQ(cat("toe_l"), JointCategory::Foot);
  EXPECT_EQ(cat("shoulder_l"), JointCategory::BallLimb);
  EXPECT_EQ(cat("wrist_r"), JointCategory::Other);
  const auto q = categorized(quadruped());
  EXPECT_EQ(q.joints[*q.find("tail1")].category, JointCategory::Tail);

  auto given = humanoid();
  given.joints[5].category = JointCategory::Tail;
  given.joints[5].category_given = true;
  assign_categories(given, analyze_morphology(given));
  EXPECT_EQ(given.joints[5].category, JointCategory::Tail);
}

TEST(Action, LexiconExamples) {
  EXPECT_EQ(lexicon().parse("a corgi walking happily"), Action::Walk);
  EXPECT_EQ(lexicon().parse("the robot jumps over a box"), Action::Jump);
  EXPECT_EQ(lexicon().parse("a serene scene"), Action::Idle);
  EXPECT_EQ(lexicon().parse("A Horse GALLOPS then walks"), Action::Run);
  EXPECT_EQ(lexicon().parse("a bird flies over the sea"), Action::SwimFly);
  EXPECT_EQ(lexicon().parse("the dancer sidesteps"), Action::Idle);
  EXPECT_EQ(lexicon().parse("walk, then run"), Action::Walk);
}

TEST(GaitLibrary, DefaultsMatchDocumentedValues) {
  const GaitTemplate *walk = library().find(Morphology::Biped, Action::Walk);
  ASSERT_NE(walk, nullptr);
  EXPECT_EQ(walk->frequency, 2.0);
  EXPECT_EQ(walk->bob_amplitude, 0.02);
  EXPECT_EQ(walk->slots.at("leg/ball-limb").amplitude[0], 0.5);
  EXPECT_EQ(walk->slots.at("leg/hinge-limb").amplitude[0], 0.7);
  EXPECT_EQ(library().find(Morphology::NonLiving, Action::Strike),
            library().find(Morphology::NonLiving, Action::Idle));
}

TEST(GaitLibrary, RejectsInvalidFiles) {
  nlohmann::json j = {{"format_version", "1.0"},
                      {"templates",
                       {{"biped",
                         {{"walk",
                           {{"frequency", 2},
                            {"slots", {{"trunk/spine", {{"amplitude", {0.3, 0, 0}}, {"bias", {0.2, 0, 0}}}}}}}}}}}}};
  EXPECT_THROW(GaitLibrary::from_json(j), DataError);
  j["templates"]["biped"]["walk"]["slots"]["trunk/spine"]["bias"] = {0.1, 0, 0};
  EXPECT_NO_THROW(GaitLibrary::from_json(j));
  j["format_version"] = "2.0";
  EXPECT_THROW(GaitLibrary::from_json(j), DataError);
}

TEST(Hermite, KeysAndContinuity) {
  const std::vector<HermiteKey> k{{0, 0, 0}, {0.25, -0.08, 0}, {0.4, 0, 5}, {0.6, 0, -5}, {1, 0, 0}};
  for (const auto &key : k)
    EXPECT_NEAR(eval_hermite(k, key.u), key.value, 1e-15);
  const double h = 1e-7;
  for (const auto &key : k) {
    if (key.u == 0 || key.u == 1)
      continue;
    const double left = (eval_hermite(k, key.u) - eval_hermite(k, key.u - h)) / h;
    const double right = (eval_hermite(k, key.u + h) - eval_hermite(k, key.u)) / h;
    EXPECT_NEAR(left, key.slope, 1e-5);
    EXPECT_NEAR(right, key.slope, 1e-5);
  }
  // Flight segment reproduces the parabola of peak height 0.25.
  for (double s = 0; s <= 1.0; s += 0.05)
    EXPECT_NEAR(eval_hermite(k, 0.4 + 0.2 * s), 4 * 0.25 * s * (1 - s), 1e-12);
}

TEST(DenseTrajectory, ZeroAmplitudeGivesBias) {
  const auto s = categorized(humanoid());
  const auto r = analyze_morphology(s);
  GaitTemplate g;
  g.frequency = 2;
  g.slots["leg/ball-limb"] = {{0, 0, 0}, {1, 2, 3}, {0.1, -0.2, 0.3}};
  const auto d = generate_dense_trajectory(s, r, g, 16);
  const std::size_t hip = *s.find("hip_r");
  for (std::size_t t = 0; t < 16; ++t) {
    EXPECT_EQ(d.rotations.at({t, hip, 0}), 0.1);
    EXPECT_EQ(d.rotations.at({t, hip, 1}), -0.2);
    EXPECT_EQ(d.rotations.at({t, 0, 0}), 0.0);
  }
  EXPECT_THROW(generate_dense_trajectory(s, r, g, 7), std::invalid_argument);
}

TEST(DenseTrajectory, HipsInAntiphase) {
  const auto s = categorized(humanoid());
  const auto r = analyze_morphology(s);
  GaitTemplate g = *library().find(Morphology::Biped, Action::Walk);
  g.slots["leg/ball-limb"].bias = {0.1, 0, 0};
  const auto d = generate_dense_trajectory(s, r, g, 48);
  const std::size_t L = *s.find("hip_l"), R = *s.find("hip_r");
  for (std::size_t t = 0; t < 48; ++t)
    EXPECT_NEAR(d.rotations.at({t, L, 0}) - 0.1, -(d.rotations.at({t, R, 0}) - 0.1), 1e-12);
}

TEST(DenseTrajectory, WalkPeriodIs24Frames) {
  const auto s = categorized(humanoid());
  const auto r = analyze_morphology(s);
  const auto d = generate_dense_trajectory(s, r, *library().find(Morphology::Biped, Action::Walk), 48);
  const auto x = channel(d.rotations, *s.find("hip_l"), 0);
  // Dominant DFT bin k gives the period 48 / k.
  std::size_t best = 0;
  double best_power = -1;
  for (std::size_t k = 1; k < 24; ++k) {
    double re = 0, im = 0;
    for (std::size_t t = 0; t < 48; ++t) {
      re += x[t] * std::cos(2 * std::numbers::pi * k * t / 48.0);
      im -= x[t] * std::sin(2 * std::numbers::pi * k * t / 48.0);
    }
    if (re * re + im * im > best_power) {
      best_power = re * re + im * im;
      best = k;
    }
  }
  EXPECT_EQ(48 / best, 24u);
  EXPECT_EQ(48 % best, 0u);
  for (std::size_t t = 0; t + 24 < 48; ++t)
    EXPECT_NEAR(x[t], x[t + 24], 1e-12);
}

TEST(Projection, ConstantTrajectory) {
  const Tensor dense = Tensor::full({20, 2, 3}, 0.7);
  ProjectionOptions o;
  o.control_points = 8;
  const auto curves = project_to_nurbs(dense, {{}, {}}, {false, true}, o);
  for (const auto &c : curves) {
    for (const auto &p : c.control_points)
      EXPECT_EQ(p, (Vec3{0.7, 0.7, 0.7}));
    for (int i = 0; i <= 10; ++i)
      EXPECT_NEAR(eval_nurbs(c, i / 10.0)[1], 0.7, 1e-14);
  }
  EXPECT_EQ(curves[1].weights, std::vector<double>(8, 2.0));
}

TEST(Projection, ContactWeightPullsCurve) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Tensor dense = Tensor::zeros({24, 1, 3});
  for (auto &v : dense.mutable_values())
    v = n(rng);
  ProjectionOptions o;
  o.control_points = 9;
  o.cyclic = false;
  std::vector<bool> contact(24, false);
  const std::size_t k = 4;
  const auto frame = static_cast<std::size_t>(std::lround(control_sample_frame(k, 24, o)));
  contact[frame] = true;
  const auto plain = project_to_nurbs(dense, {{}}, {false}, o).front();
  const auto heavy = project_to_nurbs(dense, {contact}, {false}, o).front();
  EXPECT_EQ(heavy.weights[k], 5.0);
  EXPECT_EQ(plain.control_points, heavy.control_points);
  const double s = greville(k, 9, 3);
  const Vec3 c = plain.control_points[k];
  EXPECT_LT(length(eval_nurbs(heavy, s) - c), length(eval_nurbs(plain, s) - c));
}

TEST(Projection, FullResolutionFitBound) {
  // With one control point per frame the curve at the sample parameters
  // differs from the samples by at most the control polygon's curvature:
  // |B(s_t) - x_t| <= max|second difference| (uniform cubic smoothing
  // moves a point by (x[k-1] - 2x[k] + x[k+1]) / 6 in the interior).
  const std::size_t T = 24;
  Tensor dense = Tensor::zeros({T, 1, 3});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t e = 0; e < 3; ++e)
      dense.mutable_values()[t * 3 + e] = std::sin(0.3 * t + e);
  ProjectionOptions o;
  o.control_points = T;
  o.cyclic = false;
  const auto c = project_to_nurbs(dense, {{}}, {false}, o).front();
  double curvature = 0, err = 0;
  for (std::size_t t = 1; t + 1 < T; ++t)
    for (std::size_t e = 0; e < 3; ++e)
      curvature = std::max(curvature, std::abs(dense.at({t - 1, 0, e}) - 2 * dense.at({t, 0, e}) +
                                               dense.at({t + 1, 0, e})));
  for (std::size_t t = 0; t < T; ++t) {
    const Vec3 v = eval_nurbs(c, static_cast<double>(t) / (T - 1));
    for (std::size_t e = 0; e < 3; ++e)
      err = std::max(err, std::abs(v[e] - dense.at({t, 0, e})));
  }
  EXPECT_LE(err, curvature);
  EXPECT_GT(err, 0.0);
}

TEST(Projection, Errors) {
  const Tensor dense = Tensor::zeros({10, 1, 3});
  ProjectionOptions o;
  o.control_points = 3;
  EXPECT_THROW(project_to_nurbs(dense, {{}}, {false}, o), std::invalid_argument);
  o.control_points = 11;
  EXPECT_THROW(project_to_nurbs(dense, {{}}, {false}, o), std::invalid_argument);
}

TEST(InitializeMotion, OffsetsStartAtZero) {
  const auto s = categorized(humanoid());
  const auto p = initialize_motion(s, analyze_morphology(s), Action::Walk, library(), 48);
  EXPECT_EQ(p.params.local_offsets.shape(), (Shape{48, s.size(), 3}));
  for (double v : p.params.local_offsets.values())
    EXPECT_EQ(v, 0.0);
  EXPECT_NO_THROW(p.params.validate(s.size()));
}

TEST(InitializeMotion, IdleIsNearRest) {
  const auto s = categorized(humanoid());
  const auto p = initialize_motion(s, analyze_morphology(s), lexicon().parse("a serene scene"),
                                   library(), 48);
  for (double v : p.params.rotations.values())
    EXPECT_LE(std::abs(v), 0.05);
  for (double v : p.params.root_translation.values())
    EXPECT_LE(std::abs(v), 0.01);
}

TEST(InitializeMotion, WalkKeepsHipAntiphase) {
  const auto s = categorized(humanoid());
  const auto p = initialize_motion(s, analyze_morphology(s), Action::Walk, library(), 48);
  const auto L = channel(p.params.rotations, *s.find("hip_l"), 0);
  auto R = channel(p.params.rotations, *s.find("hip_r"), 0);
  for (auto &v : R)
    v = -v;
  // Sub-frame peak of the cross-correlation by parabolic interpolation.
  int best = 0;
  for (int lag = -6; lag <= 6; ++lag)
    if (xcorr(L, R, lag) > xcorr(L, R, best))
      best = lag;
  const double a = xcorr(L, R, best - 1), b = xcorr(L, R, best), c = xcorr(L, R, best + 1);
  const double peak = best + 0.5 * (a - c) / (a - 2 * b + c);
  EXPECT_LT(std::abs(peak), 1.0);
  EXPECT_GT(b, 0.95);
}

TEST(InitializeMotion, WalkMarksContactControlPoints) {
  const auto s = categorized(humanoid());
  const auto p = initialize_motion(s, analyze_morphology(s), Action::Walk, library(), 48);
  const std::size_t toe = *s.find("toe_l");
  std::size_t in_contact = 0;
  for (bool b : p.contact[toe])
    in_contact += b;
  EXPECT_GT(in_contact, 0u);
  EXPECT_LT(in_contact, 48u);
  std::size_t heavy = 0;
  for (double w : p.joint_curves[toe].weights) {
    EXPECT_TRUE(w == 1.0 || w == 5.0);
    heavy += w == 5.0;
  }
  EXPECT_GT(heavy, 0u);
  for (double w : p.joint_curves[*s.find("spine")].weights)
    EXPECT_EQ(w, 2.0);
}

TEST(InitializeMotion, CyclicTemplatesClose) {
  const std::vector<std::pair<Skeleton, std::vector<Action>>> cases{
      {categorized(humanoid()), {Action::Walk, Action::Run, Action::Idle, Action::SwimFly}},
      {categorized(quadruped()), {Action::Walk, Action::Run, Action::Idle}},
      {categorized(lamp()), {Action::Walk, Action::Idle}},
      {categorized(bird()), {Action::SwimFly, Action::Idle}}};
  for (const auto &[s, actions] : cases)
    for (Action a : actions) {
      const auto p = initialize_motion(s, analyze_morphology(s), a, library(), 48);
      ASSERT_TRUE(p.gait.cyclic);
      const double l = cyclic_loss(p.params.rotations, p.params.root_translation).item();
      EXPECT_LE(l, 1e-2) << to_string(a);
    }
}

TEST(InitializeMotion, JumpLandsWhereItStarted) {
  const auto s = categorized(humanoid());
  const auto p = initialize_motion(s, analyze_morphology(s), Action::Jump, library(), 48);
  EXPECT_FALSE(p.gait.cyclic);
  double peak = -1;
  for (std::size_t t = 0; t < 48; ++t)
    peak = std::max(peak, p.params.root_translation.at({t, 1}));
  EXPECT_GT(peak, 0.1);
  EXPECT_NEAR(p.params.root_translation.at({0, 1}), 0.0, 1e-12);
  EXPECT_NEAR(p.params.root_translation.at({47, 1}), 0.0, 1e-12);
}

TEST(InitializeMotion, Deterministic) {
  const auto s = categorized(quadruped());
  const auto a = initialize_motion(s, analyze_morphology(s), Action::Run, library(), 48);
  const auto b = initialize_motion(s, analyze_morphology(s), Action::Run, library(), 48);
  EXPECT_EQ(a.params.rotations.values(), b.params.rotations.values());
  EXPECT_EQ(a.params.root_translation.values(), b.params.root_translation.values());
}
