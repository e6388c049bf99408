#include "rigmo/renderer.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace rigmo;
using rigmo::testing::gradcheck;
using rigmo::testing::project;
using rigmo::testing::random_tensor;

namespace {

std::size_t argmax_pixel(const Tensor &img, std::size_t frame = 0) {
  const std::size_t n = img.dim(2) * img.dim(3);
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (img[frame * n + i] > img[frame * n + best])
      best = i;
  return best;
}

Tensor one_vertex(const Vec3 &p) { return Tensor({1, 1, 3}, {p[0], p[1], p[2]}); }

} // namespace

TEST(Camera, BasisIsOrthonormalAndUpright) {
  Camera cam;
  const auto [r, u] = cam.basis();
  EXPECT_NEAR(length(r), 1.0, 1e-15);
  EXPECT_NEAR(length(u), 1.0, 1e-15);
  EXPECT_NEAR(dot(r, u), 0.0, 1e-15);
  EXPECT_NEAR(dot(r, cam.view), 0.0, 1e-15);
  // +y is up in the image (smaller row index)
  const auto [c0, r0] = cam.project({0, 0.5, 0});
  const auto [c1, r1] = cam.project({0, 0.6, 0});
  EXPECT_LT(r1, r0);
  EXPECT_DOUBLE_EQ(c0, c1);
  cam.up = cam.view;
  EXPECT_THROW(cam.validate(), DataError);
  cam = Camera{};
  cam.height = 4;
  EXPECT_THROW(cam.validate(), DataError);
}

TEST(Render, NoVerticesGivesBackground) {
  const Tensor img = render(Tensor::zeros({3, 0, 3}), Camera{});
  EXPECT_EQ(img.shape(), (Shape{3, 1, 64, 64}));
  for (double v : img.values())
    EXPECT_EQ(v, -1.0);
}

TEST(Render, CenteredVertexPeaksAtCenterSymmetrically) {
  Camera cam;
  cam.height = cam.width = 63;
  const Tensor img = render(one_vertex(cam.center), cam);
  const std::size_t W = 63, c = 31;
  EXPECT_EQ(argmax_pixel(img), c * W + c);
  auto at = [&](long dy, long dx) {
    return img[static_cast<std::size_t>(static_cast<long>(c) + dy) * W +
               static_cast<std::size_t>(static_cast<long>(c) + dx)];
  };
  for (long dy = -7; dy <= 7; ++dy)
    for (long dx = -7; dx <= 7; ++dx) {
      EXPECT_DOUBLE_EQ(at(dy, dx), at(-dy, dx));
      EXPECT_DOUBLE_EQ(at(dy, dx), at(dy, -dx));
      EXPECT_DOUBLE_EQ(at(dy, dx), at(dx, dy));
      // monotone falloff along the axis
      if (dx > 0 && dy == 0)
        EXPECT_LE(at(0, dx), at(0, dx - 1));
    }
  // peak value: 2 tanh(1 - exp(-8)) - 1
  EXPECT_NEAR(at(0, 0), 2 * std::tanh(1 - std::exp(-8.0)) - 1, 1e-15);
  // outside the 4 sigma support the image is background
  EXPECT_EQ(at(0, 7), -1.0);

  // even image: the four central pixels tie
  const Tensor even = render(one_vertex(Camera{}.center), Camera{});
  EXPECT_DOUBLE_EQ(even[31 * 64 + 31], even[32 * 64 + 32]);
  EXPECT_DOUBLE_EQ(even[31 * 64 + 32], even[32 * 64 + 31]);
}

TEST(Render, OnePixelShiftMovesPeak) {
  Camera cam;
  cam.height = cam.width = 63;
  const auto [r, u] = cam.basis();
  const double px = 1.0 / cam.pixels_per_unit();
  const std::size_t base = argmax_pixel(render(one_vertex(cam.center), cam));
  const std::size_t right = argmax_pixel(render(one_vertex(cam.center + px * r), cam));
  const std::size_t upward = argmax_pixel(render(one_vertex(cam.center + px * u), cam));
  EXPECT_EQ(right, base + 1);
  EXPECT_EQ(upward, base - 63);

  // all vertices of a cloud shifted together
  std::mt19937_64 rng(4);
  const Tensor cloud = random_tensor({1, 5, 3}, rng, 0.3, 0.7);
  std::vector<double> shifted(cloud.values());
  for (std::size_t v = 0; v < 5; ++v)
    for (std::size_t e = 0; e < 3; ++e)
      shifted[v * 3 + e] += px * r[e];
  EXPECT_EQ(argmax_pixel(render(Tensor({1, 5, 3}, shifted), cam)),
            argmax_pixel(render(cloud, cam)) + 1);
}

TEST(Render, MatchesNaivePixelLoop) {
  std::mt19937_64 rng(9);
  Camera cam;
  cam.height = 24;
  cam.width = 32;
  cam.sigma = 2.0;
  const Tensor v = random_tensor({2, 7, 3}, rng, -0.2, 1.2);
  std::vector<std::vector<double>> colors(7);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto &c : colors)
    c = {u(rng), u(rng), u(rng)};
  const Tensor img = render(v, colors, cam);
  const auto [r, up] = cam.basis();
  const double s = cam.height * cam.scale;
  const double floor_k = std::exp(-8.0);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 24; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
          double acc = 0;
          for (std::size_t k = 0; k < 7; ++k) {
            const Vec3 p{v.at({t, k, 0}), v.at({t, k, 1}), v.at({t, k, 2})};
            const double px = 15.5 + s * dot(p - cam.center, r);
            const double py = 11.5 - s * dot(p - cam.center, up);
            const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
            acc += colors[k][c] * std::max(0.0, std::exp(-d2 / 8.0) - floor_k);
          }
          EXPECT_NEAR(img.at({t, c, y, x}), 2 * std::tanh(acc) - 1, 1e-12);
        }
}

TEST(Render, RangeStaysInUnitInterval) {
  std::mt19937_64 rng(1);
  // a dense cloud saturates the accumulator
  const Tensor v = random_tensor({2, 400, 3}, rng, 0.45, 0.55);
  const Tensor img = render(v, Camera{});
  for (double x : img.values()) {
    EXPECT_GE(x, -1.0);
    EXPECT_LE(x, 1.0);
  }
  EXPECT_GT(*std::max_element(img.values().begin(), img.values().end()), 0.99);
}

TEST(Render, OffscreenVerticesGiveBackgroundAndZeroGradient) {
  Tape tape;
  const Tensor v = tape.variable(Tensor({1, 2, 3}, {0, 50, 0, 0, -50, 3}));
  const Tensor img = render(v, Camera{});
  for (double x : img.values())
    EXPECT_EQ(x, -1.0);
  // nothing depends on the vertices, so the sum is untracked or has zero gradient
  const Tensor loss = sum(img);
  if (loss.tracked()) {
    const Tensor g = tape.backward(loss).of(v);
    for (double x : g.values())
      EXPECT_EQ(x, 0.0);
  }
}

TEST(Render, RejectsBadInput) {
  EXPECT_THROW(render(Tensor::zeros({2, 3}), Camera{}), ShapeError);
  EXPECT_THROW(render(Tensor({1, 1, 3}, {0, std::nan(""), 0}), Camera{}), DataError);
  EXPECT_THROW(render(Tensor::zeros({1, 2, 3}), {{0.5}}, Camera{}), ShapeError);
  EXPECT_THROW(render(Tensor::zeros({1, 1, 3}), {{0.5, 0.5}}, Camera{}), ShapeError);
  EXPECT_THROW(render(Tensor::zeros({1, 1, 3}), {{1.5}}, Camera{}), DataError);
}

TEST(Render, ColorChannelsAreIndependent) {
  const Tensor img = render(one_vertex(Camera{}.center), {{1.0, 0.0, 0.5}}, Camera{});
  EXPECT_EQ(img.shape(), (Shape{1, 3, 64, 64}));
  const std::size_t n = 64 * 64, pix = 31 * 64 + 31;
  EXPECT_GT(img[pix], -1.0);
  EXPECT_EQ(img[n + pix], -1.0);
  EXPECT_GT(img[pix], img[2 * n + pix]);
}

TEST(Render, GradientsMatchFiniteDifferences) {
  Camera cam;
  cam.height = cam.width = 24;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor v = random_tensor({2, 4, 3}, rng, 0.1, 0.9);
    std::vector<std::vector<double>> colors{{1, 0.2, 0}, {0.5, 0.5, 0.5}, {0, 1, 1}, {1, 1, 1}};
    const auto r = gradcheck(
        [&](const std::vector<Tensor> &x) { return project(render(x[0], colors, cam), seed); },
        {v}, 1e-6, 1e-4, 1e-7);
    EXPECT_TRUE(r.ok) << seed << ": " << r.worst;
  }
}
