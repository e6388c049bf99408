#include "rigmo/kinematics.hpp"
#include "support/gradcheck.hpp"

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include <numbers>

using namespace rigmo;
using rigmo::testing::gradcheck;
using rigmo::testing::project;
using rigmo::testing::random_tensor;

namespace {

Joint joint(std::string name, std::optional<std::size_t> parent, Vec3 p) {
  return Joint{std::move(name), parent, p, JointCategory::Other, false};
}

Skeleton arm() {
  return build_skeleton({joint("shoulder", std::nullopt, {0, 0, 0}),
                         joint("elbow", 0, {1, 0, 0}), joint("hand", 1, {2, 0, 0})});
}

SkinnedMesh random_mesh(std::size_t vertices, std::size_t joints, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, joints - 1);
  SkinnedMesh m;
  for (std::size_t i = 0; i < vertices; ++i) {
    m.rest_vertices.push_back({u(rng), u(rng) + 1.0, u(rng)});
    const std::size_t a = pick(rng), b = (a + 1) % joints;
    const double w = 0.5 * (u(rng) + 1.0);
    m.weights.push_back({{a, w}, {b, 1.0 - w}});
  }
  return m;
}

Tensor global_positions(const Skeleton &s, const MotionParams &p) {
  return joint_positions(forward_kinematics(s, p));
}

} // namespace

TEST(ForwardKinematics, RestPoseReproducesRestPositions) {
  const auto s = arm();
  const auto pos = global_positions(s, MotionParams::zeros(3, 3));
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_EQ(pos.at({t, j, c}), s.joints[j].rest_position[c]);
}

TEST(ForwardKinematics, TwoLinkPlanarArm) {
  const auto s = arm();
  auto p = MotionParams::zeros(1, 3);
  const double q = std::numbers::pi / 2;
  p.rotations = Tensor({1, 3, 3}, {0, 0, q, 0, 0, q, 0, 0, 0});
  const auto pos = global_positions(s, p);
  // Oracle by matrix products: Rz(90) T(1,0,0) Rz(90) T(1,0,0) * origin.
  Eigen::Affine3d g = Eigen::AngleAxisd(q, Eigen::Vector3d::UnitZ()) *
                      Eigen::Translation3d(1, 0, 0) *
                      Eigen::AngleAxisd(q, Eigen::Vector3d::UnitZ()) *
                      Eigen::Translation3d(1, 0, 0);
  const Eigen::Vector3d end = g * Eigen::Vector3d::Zero();
  EXPECT_NEAR(end.x(), -1.0, 1e-12);
  EXPECT_NEAR(end.y(), 1.0, 1e-12);
  for (int c = 0; c < 3; ++c)
    EXPECT_NEAR(pos.at({0, 2, static_cast<std::size_t>(c)}), end[c], 1e-12);
}

TEST(ForwardKinematics, RootTranslationShiftsEveryJoint) {
  const auto s = arm();
  auto p = MotionParams::zeros(2, 3);
  p.root_translation = Tensor({2, 3}, {0, 0, 5, 0, 0, 5});
  const auto pos = global_positions(s, p);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(pos.at({1, j, 2}), 5.0);
    EXPECT_EQ(pos.at({1, j, 0}), s.joints[j].rest_position[0]);
  }
}

TEST(ForwardKinematics, OffsetsPropagateToChildren) {
  const auto s = arm();
  auto p = MotionParams::zeros(1, 3);
  p.local_offsets = Tensor({1, 3, 3}, {0, 0, 0, 0, 0.1, 0, 0, 0, 0});
  const auto pos = global_positions(s, p);
  EXPECT_DOUBLE_EQ(pos.at({0, 1, 1}), 0.1);
  EXPECT_DOUBLE_EQ(pos.at({0, 2, 1}), 0.1);
}

TEST(ForwardKinematics, ShapeMismatchThrows) {
  const auto s = arm();
  auto p = MotionParams::zeros(2, 2);
  EXPECT_THROW(forward_kinematics(s, p), ShapeError);
}

TEST(ForwardKinematics, RotationBlockStaysOrthonormal) {
  std::mt19937_64 rng(2);
  const auto s = arm();
  MotionParams p{random_tensor({4, 3, 3}, rng, -1, 1), random_tensor({4, 3}, rng),
                 random_tensor({4, 3, 3}, rng, -0.2, 0.2)};
  const Tensor g = forward_kinematics(s, p);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < 3; ++j) {
      Eigen::Matrix3d r;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          r(a, b) = g.at({t, j, static_cast<std::size_t>(a), static_cast<std::size_t>(b)});
      EXPECT_LE((r.transpose() * r - Eigen::Matrix3d::Identity()).norm(), 1e-8);
      EXPECT_EQ(g.at({t, j, 3, 0}), 0.0);
      EXPECT_EQ(g.at({t, j, 3, 3}), 1.0);
    }
}

TEST(Skinning, BindPoseIsIdentity) {
  std::mt19937_64 rng(4);
  const auto s = arm();
  const auto mesh = random_mesh(40, 3, rng);
  const Tensor v = skin(s, mesh, forward_kinematics(s, MotionParams::zeros(2, 3)));
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < 40; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_NEAR(v.at({t, i, c}), mesh.rest_vertices[i][c], 1e-9);
}

TEST(Skinning, SingleInfluenceFollowsJoint) {
  const auto s = arm();
  SkinnedMesh mesh;
  mesh.rest_vertices = {{1.5, 0.2, 0}};
  mesh.weights = {{{1, 1.0}}};
  auto p = MotionParams::zeros(1, 3);
  p.rotations = Tensor({1, 3, 3}, {0, 0, 0.3, 0, 0, 0.7, 0, 0, 0});
  const Tensor g = forward_kinematics(s, p);
  const Tensor v = skin(s, mesh, g);
  // Oracle: G_elbow * B_elbow * v
  Mat4 G{};
  for (std::size_t k = 0; k < 16; ++k)
    G[k] = g.at({0, 1, k / 4, k % 4});
  const Vec3 expected = transform_point(mul4(G, s.inverse_bind[1]), mesh.rest_vertices[0]);
  for (std::size_t c = 0; c < 3; ++c)
    EXPECT_NEAR(v.at({0, 0, c}), expected[c], 1e-12);
}

TEST(Skinning, TwoJointBlendMatchesDenseOracle) {
  std::mt19937_64 rng(8);
  const auto s = arm();
  SkinnedMesh mesh;
  mesh.rest_vertices = {{0.7, -0.3, 0.2}};
  mesh.weights = {{{0, 0.3}, {1, 0.7}}};
  MotionParams p{random_tensor({1, 3, 3}, rng, -1, 1), random_tensor({1, 3}, rng),
                 random_tensor({1, 3, 3}, rng, -0.1, 0.1)};
  const Tensor g = forward_kinematics(s, p);
  const Tensor v = skin(s, mesh, g);
  // Dense oracle with Eigen: 0.3 * (G0 B0 v) + 0.7 * (G1 B1 v).
  Eigen::Vector4d vh(0.7, -0.3, 0.2, 1.0), acc = Eigen::Vector4d::Zero();
  for (std::size_t j = 0; j < 2; ++j) {
    Eigen::Matrix4d G, B;
    for (std::size_t k = 0; k < 16; ++k) {
      G(static_cast<int>(k / 4), static_cast<int>(k % 4)) = g.at({0, j, k / 4, k % 4});
      B(static_cast<int>(k / 4), static_cast<int>(k % 4)) = s.inverse_bind[j][k];
    }
    acc += (j == 0 ? 0.3 : 0.7) * (G * B * vh);
  }
  for (std::size_t c = 0; c < 3; ++c)
    EXPECT_NEAR(v.at({0, 0, c}), acc[static_cast<int>(c)], 1e-12);
}

TEST(Skinning, SparseAndDensePathsAgree) {
  std::mt19937_64 rng(12);
  const auto s = arm();
  const auto mesh = random_mesh(25, 3, rng);
  MotionParams p{random_tensor({3, 3, 3}, rng, -1, 1), random_tensor({3, 3}, rng),
                 random_tensor({3, 3, 3}, rng, -0.1, 0.1)};
  const Tensor g = forward_kinematics(s, p);
  const Tensor a = skin(s, mesh, g, false), b = skin(s, mesh, g, true);
  for (std::size_t i = 0; i < a.size(); ++i)
    EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Skinning, RigidEquivarianceUnderRootTranslation) {
  std::mt19937_64 rng(14);
  const auto s = arm();
  const auto mesh = random_mesh(30, 3, rng);
  MotionParams p{random_tensor({2, 3, 3}, rng, -1, 1), random_tensor({2, 3}, rng),
                 random_tensor({2, 3, 3}, rng, -0.1, 0.1)};
  const Tensor base = skin(s, mesh, forward_kinematics(s, p));
  MotionParams q = p;
  const Tensor shift = Tensor::vector({0.3, -1.2, 2.5});
  q.root_translation = p.root_translation + shift;
  const Tensor moved = skin(s, mesh, forward_kinematics(s, q));
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < 30; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        EXPECT_NEAR(moved.at({t, i, c}), base.at({t, i, c}) + shift[c], 1e-8);
}

TEST(Skinning, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto s = arm();
    const auto mesh = random_mesh(6, 3, rng);
    const std::vector<Tensor> in{random_tensor({2, 3, 3}, rng, -1, 1), random_tensor({2, 3}, rng),
                                 random_tensor({2, 3, 3}, rng, -0.2, 0.2)};
    const auto r = gradcheck(
        [&](auto &x) { return project(skin(s, mesh, forward_kinematics(s, x[0], x[1], x[2])), seed); },
        in);
    EXPECT_TRUE(r.ok) << "seed " << seed << ": " << r.worst;
  }
}

TEST(SkinnedMesh, ValidationErrors) {
  SkinnedMesh m;
  m.rest_vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.weights = {{{0, 1.0}}, {{0, 0.5}, {1, 0.5}}, {{1, 1.0}}};
  m.faces = {{0, 1, 2}};
  EXPECT_NO_THROW(m.validate(2));
  EXPECT_THROW(m.validate(1), DataError);
  auto bad = m;
  bad.weights[1] = {{0, 0.5}, {1, 0.4}};
  EXPECT_THROW(bad.validate(2), DataError);
  bad = m;
  bad.faces = {{0, 1, 3}};
  EXPECT_THROW(bad.validate(2), DataError);
  bad = m;
  bad.weights[0] = {{0, 1.5}, {1, -0.5}};
  EXPECT_THROW(bad.validate(2), DataError);
}
