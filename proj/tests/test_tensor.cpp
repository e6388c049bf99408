#include "rigmo/ops.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace rigmo;
using rigmo::testing::gradcheck;
using rigmo::testing::random_tensor;

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, SinKnownValues) {
  const Tensor y = rigmo::sin(Tensor::vector({0.0, std::numbers::pi / 2}));
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
}

TEST(Tensor, MatmulIdentity) {
  std::mt19937_64 rng(3);
  const Tensor m = random_tensor({4, 4}, rng);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i)
    eye[static_cast<std::size_t>(i * 5)] = 1.0;
  const Tensor y = matmul(Tensor({4, 4}, eye), m);
  EXPECT_EQ(y.values(), m.values());
}

TEST(Tensor, BroadcastShapes) {
  const Tensor a = Tensor::full({2, 1, 3}, 1.0);
  const Tensor b = Tensor::full({4, 1}, 2.0);
  const Tensor c = a + b;
  EXPECT_EQ(c.shape(), (Shape{2, 4, 3}));
  EXPECT_DOUBLE_EQ(c[0], 3.0);
  EXPECT_THROW(Tensor::zeros({2, 3}) + Tensor::zeros({4}), ShapeError);
}

TEST(Tensor, NonFiniteIsAnError) {
  EXPECT_THROW(rigmo::sqrt(Tensor::vector({-1.0})), NumericError);
  EXPECT_THROW(reciprocal(Tensor::vector({0.0})), NumericError);
}

TEST(Tape, SumOfSquaresGradient) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::vector({1, 2, 3}));
  const Tensor y = sum(square(x));
  const Tensor g = tape.backward(y).of(x);
  EXPECT_EQ(g.values(), (std::vector<double>{2, 4, 6}));
}

TEST(Tape, ConstantRootGivesZeroGradients) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::vector({1, 2}));
  const Tensor unused = tape.variable(Tensor::vector({5}));
  const Tensor y = sum(x * 0.0);
  const Gradients g = tape.backward(y);
  EXPECT_EQ(g.of(x).values(), (std::vector<double>{0, 0}));
  EXPECT_EQ(g.of(unused).values(), (std::vector<double>{0}));
}

TEST(Tape, BackwardErrors) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x * 2.0), ShapeError);
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), std::logic_error);
  Tape other;
  const Tensor z = other.variable(Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(z), std::logic_error);
  EXPECT_THROW(x + other.variable(Tensor::vector({1, 1})), std::logic_error);
}

TEST(Tape, HingeDerivativeMatchesFiniteDifference) {
  // d/dx max(0, x - 0.5)^2 at x = 1.5 -> 2 (x - 0.5) = 2
  const double theta = 0.5, x0 = 1.5, h = 1e-6;
  auto f = [&](double x) { return square(hinge(Tensor::scalar(x), theta)).item(); };
  const double numeric = (f(x0 + h) - f(x0 - h)) / (2 * h);
  Tape tape;
  const Tensor x = tape.variable(Tensor::scalar(x0));
  const double analytic = tape.backward(square(hinge(x, theta))).of(x).item();
  EXPECT_NEAR(numeric, 2.0, 1e-8);
  EXPECT_NEAR(analytic, 2.0, 1e-12);
}

TEST(Tape, KinkConventionAssignsBoundaryToActiveSide) {
  Tape tape;
  const Tensor x = tape.variable(Tensor::vector({0.5, 2.0, -2.0, 1.0}));
  const Tensor y = sum(hinge(x, 0.5)) + sum(clamp(x, -1.0, 1.0));
  const Tensor g = tape.backward(y).of(x);
  // hinge: boundary 0.5 -> 1, 2.0 -> 1, -2 -> 0, 1 -> 1
  // clamp: 0.5 -> 1, 2.0 -> 0, -2 -> 0, 1.0 (boundary) -> 1
  EXPECT_EQ(g.values(), (std::vector<double>{2, 1, 0, 2}));
}

TEST(Tape, ReplayIsBitIdentical) {
  std::mt19937_64 rng(5);
  Tape tape;
  const Tensor x = tape.variable(random_tensor({3, 4}, rng));
  const Tensor w = tape.variable(random_tensor({4, 2}, rng));
  const Tensor y = sum(rigmo::sin(matmul(x, w))) + sq_norm(rigmo::exp(x * 0.1));
  const auto g1 = tape.backward(y);
  const auto g2 = tape.backward(y);
  EXPECT_EQ(g1.of(x).values(), g2.of(x).values());
  EXPECT_EQ(g1.of(w).values(), g2.of(w).values());
}

TEST(Tape, BackwardIsLinear) {
  std::mt19937_64 rng(11);
  const Tensor x0 = random_tensor({5}, rng);
  Tape tape;
  const Tensor x = tape.variable(x0);
  const Tensor a = sum(rigmo::sin(x));
  const Tensor b = sq_norm(x * 3.0);
  const auto ga = tape.backward(a).of(x);
  const auto gb = tape.backward(b).of(x);
  const auto gab = tape.backward(a + b).of(x);
  for (std::size_t i = 0; i < 5; ++i)
    EXPECT_NEAR(gab[i], ga[i] + gb[i], 1e-12);
}

// Every supported op against central differences on random inputs in [-2, 2].
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  std::mt19937_64 rng(seed);
  const Tensor a = random_tensor({2, 3}, rng);
  const Tensor b = random_tensor({2, 3}, rng);
  const Tensor row = random_tensor({3}, rng);
  const Tensor pos = random_tensor({2, 3}, rng, 0.5, 2.0);
  const Tensor m = random_tensor({2, 3, 4}, rng);
  const Tensor n = random_tensor({4, 2}, rng);
  using rigmo::testing::project;

  const std::vector<std::pair<const char *, std::function<Tensor(const std::vector<Tensor> &)>>> cases = {
      {"add", [](auto &x) { return project(x[0] + x[2], 1); }},
      {"sub", [](auto &x) { return project(x[0] - x[1], 2); }},
      {"mul", [](auto &x) { return project(x[0] * x[1] * x[2], 3); }},
      {"matmul", [](auto &x) { return project(matmul(x[4], x[5]), 4); }},
      {"sin", [](auto &x) { return project(rigmo::sin(x[0]), 5); }},
      {"cos", [](auto &x) { return project(rigmo::cos(x[0]), 6); }},
      {"sqrt", [](auto &x) { return project(rigmo::sqrt(x[3]), 7); }},
      {"exp", [](auto &x) { return project(rigmo::exp(x[0]), 8); }},
      {"sum_axis", [](auto &x) { return project(sum(x[4], 1), 9); }},
      {"mean_axis", [](auto &x) { return project(mean(x[4], -1, true), 10); }},
      {"sq_norm", [](auto &x) { return sq_norm(x[0]); }},
      {"max_scalar", [](auto &x) { return project(max_scalar(x[0], 0.3), 11); }},
      {"clamp", [](auto &x) { return project(clamp(x[0], -0.7, 0.9), 12); }},
      {"concat", [](auto &x) { return project(concat({x[0], x[1]}, 0), 13); }},
      {"slice", [](auto &x) { return project(slice(x[4], 2, 1, 3), 14); }},
      {"broadcast", [](auto &x) { return project(broadcast_to(x[2], {4, 3}), 15); }},
      {"reciprocal", [](auto &x) { return project(reciprocal(x[3]), 16); }},
      {"transpose", [](auto &x) { return project(transpose(x[4], 0, 2), 17); }},
      {"norm", [](auto &x) { return project(norm(x[4], 1), 18); }},
      {"tanh", [](auto &x) { return project(rigmo::tanh(x[0]), 19); }},
      {"gather_scatter", [](auto &x) {
         return project(scatter_add_rows(gather_rows(x[4], {1, 0, 1}), {0, 0, 1}, 2), 20);
       }},
  };
  const std::vector<Tensor> inputs{a, b, row, pos, m, n};
  for (const auto &[name, fn] : cases) {
    // Keep samples away from kinks of hinge and clamp.
    std::vector<Tensor> in = inputs;
    for (auto &v : in[0].mutable_values())
      for (double kink : {0.3, -0.7, 0.9})
        if (std::abs(v - kink) < 1e-4)
          v += 1e-3;
    const auto r = gradcheck(fn, in);
    EXPECT_TRUE(r.ok) << name << ": " << r.worst;
    EXPECT_LE(r.max_rel_error, 1e-4) << name;
  }
}

INSTANTIATE_TEST_SUITE_P(RandomSeeds, OpGradient, ::testing::Range(0, 20));
