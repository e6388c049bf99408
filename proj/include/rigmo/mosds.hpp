#pragma once

// Motion-aware score distillation: critic contract, CFG, the appearance /
// motion split of the noise residual, and the proxy loss that carries the
// critic's direction back onto the tape.

#include "rigmo/ops.hpp"

#include <cstdint>
#include <random>

namespace rigmo {

struct TimestepRange {
  double lo = 0.02;
  double hi = 0.50;

  void validate() const {
    if (!(lo > 0.0) || !(hi < 1.0) || !(lo <= hi))
      throw DataError("timestep range must satisfy 0 < lo <= hi < 1");
  }
};

/// Uniform tau in [lo, hi].
inline double sample_timestep(std::mt19937_64 &rng, const TimestepRange &range = {}) {
  std::uniform_real_distribution<double> u(range.lo, range.hi);
  return std::clamp(u(rng), range.lo, range.hi);
}

/// SplitMix64 finalizer; derives independent per-iteration seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct CriticRequest {
  Tensor frames; // T x C x H x W in [-1, 1]
  std::string prompt;
  double tau = 0.25;
  double cfg_scale = 10.0;
  std::uint64_t seed = 0;
};

struct CriticResponse {
  Tensor eps_uncond, eps_text, eps_injected; // latent-shaped, frame axis first
  double schedule_weight = 1.0;

  void validate() const {
    if (eps_uncond.shape() != eps_text.shape() || eps_uncond.shape() != eps_injected.shape())
      throw ShapeError("critic response arrays disagree in shape");
    for (const Tensor *t : {&eps_uncond, &eps_text, &eps_injected})
      for (double v : t->values())
        if (!std::isfinite(v))
          throw DataError("critic response contains non-finite values");
    if (!std::isfinite(schedule_weight))
      throw DataError("critic schedule weight is not finite");
  }
};

class Critic {
public:
  virtual ~Critic() = default;
  virtual CriticResponse evaluate(const CriticRequest &req) = 0;
  /// True when latents are the frames themselves, so the proxy loss can be
  /// formed directly on the rendered frames.
  virtual bool identity_encoder() const { return true; }
  /// latent_grad^T d(latent)/d(frames) through the critic's encoder. Only
  /// needed when identity_encoder() is false.
  virtual Tensor encoder_vjp(const CriticRequest &, const Tensor &latent_grad) {
    return latent_grad;
  }
};

/// eps_uncond + w (eps_text - eps_uncond).
inline Tensor cfg_combine(const CriticResponse &r, double w) {
  if (r.eps_uncond.shape() != r.eps_text.shape())
    throw ShapeError("cfg_combine: shape mismatch");
  const auto &u = r.eps_uncond.values(), &t = r.eps_text.values();
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    out[i] = u[i] + w * (t[i] - u[i]);
  return Tensor(r.eps_uncond.shape(), std::move(out));
}

struct Decomposition {
  Tensor appearance; // temporal mean, broadcast to every frame
  Tensor motion;     // frame-wise deviation
};

/// Splits delta (frame axis first) into its temporal mean and the
/// zero-mean remainder so that appearance + motion reproduces delta bit for
/// bit. Where rounding would break that, the mean is snapped to the finest
/// power-of-two grid on which every frame's subtraction is exact. For data
/// with float32 significands (the critic's wire precision) the snap is below
/// 2^-24 of the column's smallest nonzero entry; full-precision doubles that
/// mix magnitudes can need a much coarser grid.
inline Decomposition decompose(const Tensor &delta) {
  if (delta.rank() < 1 || delta.dim(0) < 2)
    throw ShapeError("decompose needs at least 2 frames");
  const std::size_t T = delta.dim(0), N = delta.size() / T;
  const auto &d = delta.values();
  std::vector<double> app(delta.size()), mot(delta.size());
  auto exact = [&](std::size_t i, double a) {
    for (std::size_t t = 0; t < T; ++t)
      if (a + (d[t * N + i] - a) != d[t * N + i])
        return false;
    return true;
  };
  for (std::size_t i = 0; i < N; ++i) {
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      mean += d[t * N + i];
    mean /= static_cast<double>(T);
    if (!std::isfinite(mean))
      throw NumericError("decompose: non-finite noise difference");
    if (!exact(i, mean)) {
      // the grid coarsens until the mean rounds to 0, which is always exact
      double q = std::ldexp(1.0, std::max(std::ilogb(mean) - 52, -1074));
      double a = mean;
      do {
        a = std::nearbyint(mean / q) * q;
        q *= 2.0;
      } while (!exact(i, a));
      mean = a;
    }
    for (std::size_t t = 0; t < T; ++t) {
      app[t * N + i] = mean;
      mot[t * N + i] = d[t * N + i] - mean;
    }
  }
  return {Tensor(delta.shape(), std::move(app)), Tensor(delta.shape(), std::move(mot))};
}

struct MoSDSGradient {
  Tensor delta;      // cfg_combine(resp) - eps_injected, float32 significands
  Tensor appearance; // split of delta
  Tensor motion;
  Tensor grad; // w(tau) (lambda_a appearance + lambda_m motion)
  double schedule_weight = 1.0;
  double tau = 0.0;

  double norm(const Tensor &x) const {
    double s = 0;
    for (double v : x.values())
      s += v * v;
    return std::sqrt(s);
  }
};

inline MoSDSGradient mosds_gradient(const CriticResponse &resp, double cfg_scale,
                                    double lambda_appear, double lambda_motion, double tau = 0.0) {
  resp.validate();
  const Tensor total = cfg_combine(resp, cfg_scale);
  const auto &e = resp.eps_injected.values();
  // held at critic precision so the split below is exact
  std::vector<double> delta(total.values());
  for (std::size_t i = 0; i < delta.size(); ++i)
    delta[i] = static_cast<double>(static_cast<float>(delta[i] - e[i]));
  MoSDSGradient g;
  g.delta = Tensor(total.shape(), std::move(delta));
  auto [a, m] = decompose(g.delta);
  std::vector<double> out(a.size());
  const double w = resp.schedule_weight;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = w * (lambda_appear * a[i] + lambda_motion * m[i]);
  g.appearance = std::move(a);
  g.motion = std::move(m);
  g.grad = Tensor(total.shape(), std::move(out));
  g.schedule_weight = w;
  g.tau = tau;
  return g;
}

/// MSE(z, detach(z) - eta * grad). Its gradient with respect to z is
/// (2 / N) * eta * grad.
inline Tensor proxy_loss(const Tensor &z, const Tensor &grad, double eta) {
  if (z.shape() != grad.shape())
    throw ShapeError("proxy_loss: latent and gradient shapes differ");
  const Tensor target = z.detached() - grad.detached() * eta;
  return mean(square(z - target));
}

/// Proxy loss for a critic with its own encoder: the value is the latent MSE,
/// the gradient with respect to frames is the supplied encoder VJP.
inline Tensor proxy_loss_vjp(const Tensor &frames, double value, const Tensor &frame_grad) {
  if (frames.shape() != frame_grad.shape())
    throw ShapeError("proxy_loss_vjp: frame gradient shape mismatch");
  std::vector<double> fg(frame_grad.values());
  return detail::finish("proxy_loss_vjp", {}, {value}, {&frames},
                        [fg](std::span<const double> g, std::span<std::vector<double> *> pg) {
                          auto &gf = *pg[0];
                          for (std::size_t i = 0; i < fg.size(); ++i)
                            gf[i] += g[0] * fg[i];
                        });
}

/// Deterministic stand-in for a frozen text-to-video model: latents are the
/// frames, eps_text = eps + kappa (frames - target), eps_uncond = eps and
/// w(tau) = 1 - tau.
class MockCritic : public Critic {
public:
  MockCritic(Tensor target, double kappa = 1.0) : target_(target.detached()), kappa_(kappa) {}

  CriticResponse evaluate(const CriticRequest &req) override {
    if (req.frames.shape() != target_.shape())
      throw ShapeError("mock critic: frames " + shape_str(req.frames.shape()) +
                       " do not match target " + shape_str(target_.shape()));
    std::mt19937_64 rng(req.seed);
    std::normal_distribution<double> normal;
    std::vector<double> eps(target_.size()), text(target_.size());
    for (std::size_t i = 0; i < eps.size(); ++i) {
      eps[i] = normal(rng);
      text[i] = eps[i] + kappa_ * (req.frames[i] - target_[i]);
    }
    CriticResponse r;
    r.eps_uncond = Tensor(target_.shape(), eps);
    r.eps_injected = Tensor(target_.shape(), eps);
    r.eps_text = Tensor(target_.shape(), std::move(text));
    r.schedule_weight = 1.0 - req.tau;
    return r;
  }

  const Tensor &target() const { return target_; }

private:
  Tensor target_;
  double kappa_;
};

} // namespace rigmo
