#pragma once

// AdamW with named parameter groups and global-norm gradient clipping.

#include "rigmo/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace rigmo {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;

  void validate() const {
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps >= 0) ||
        !(weight_decay >= 0))
      throw DataError("AdamW hyperparameters out of range");
  }
};

struct ParamGroup {
  std::string name;
  double lr = 1e-3;
  Tensor value;
  std::vector<double> m, v;
  std::size_t step = 0;
};

class AdamW {
public:
  explicit AdamW(AdamWHyper h = {}) : h_(h) { h_.validate(); }

  ParamGroup &add_group(std::string name, double lr, Tensor value) {
    if (!(lr >= 0))
      throw DataError("learning rate for " + name + " must be non-negative");
    ParamGroup g;
    g.name = std::move(name);
    g.lr = lr;
    g.value = value.detached();
    g.m.assign(g.value.size(), 0.0);
    g.v.assign(g.value.size(), 0.0);
    groups_.push_back(std::move(g));
    return groups_.back();
  }

  std::vector<ParamGroup> &groups() { return groups_; }
  const std::vector<ParamGroup> &groups() const { return groups_; }
  const AdamWHyper &hyper() const { return h_; }

  const ParamGroup &group(const std::string &name) const {
    for (const auto &g : groups_)
      if (g.name == name)
        return g;
    throw std::out_of_range("no parameter group " + name);
  }

  /// One update of every group; grads[k] belongs to groups()[k].
  void step(const std::vector<Tensor> &grads) {
    if (grads.size() != groups_.size())
      throw ShapeError("AdamW: " + std::to_string(grads.size()) + " gradients for " +
                       std::to_string(groups_.size()) + " groups");
    for (std::size_t k = 0; k < groups_.size(); ++k)
      if (grads[k].shape() != groups_[k].value.shape())
        throw ShapeError("AdamW: gradient " + shape_str(grads[k].shape()) + " for group " +
                         groups_[k].name + " of shape " + shape_str(groups_[k].value.shape()));
    for (std::size_t k = 0; k < groups_.size(); ++k) {
      ParamGroup &g = groups_[k];
      ++g.step;
      const double t = static_cast<double>(g.step);
      const double c1 = 1.0 - std::pow(h_.beta1, t), c2 = 1.0 - std::pow(h_.beta2, t);
      const double decay = 1.0 - g.lr * h_.weight_decay;
      auto &p = g.value.mutable_values();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = grads[k][i];
        p[i] *= decay;
        g.m[i] = h_.beta1 * g.m[i] + (1.0 - h_.beta1) * gi;
        g.v[i] = h_.beta2 * g.v[i] + (1.0 - h_.beta2) * gi * gi;
        p[i] -= g.lr * (g.m[i] / c1) / (std::sqrt(g.v[i] / c2) + h_.eps);
      }
    }
  }

  nlohmann::json state() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto &g : groups_)
      j.push_back({{"name", g.name},
                   {"lr", g.lr},
                   {"step", g.step},
                   {"shape", g.value.shape()},
                   {"value", g.value.values()},
                   {"m", g.m},
                   {"v", g.v}});
    return j;
  }

  /// Restores values, moments and step counters saved by state(). Groups
  /// must match by name, order and shape.
  void load_state(const nlohmann::json &j) {
    if (!j.is_array() || j.size() != groups_.size())
      throw DataError("optimizer state has the wrong number of groups");
    for (std::size_t k = 0; k < groups_.size(); ++k) {
      ParamGroup &g = groups_[k];
      const auto &s = j[k];
      if (s.at("name").get<std::string>() != g.name)
        throw DataError("optimizer state group " + std::to_string(k) + " is " +
                        s.at("name").get<std::string>() + ", expected " + g.name);
      if (s.at("shape").get<Shape>() != g.value.shape())
        throw DataError("optimizer state shape mismatch in group " + g.name);
      Tensor value(g.value.shape(), s.at("value").get<std::vector<double>>());
      auto m = s.at("m").get<std::vector<double>>(), v = s.at("v").get<std::vector<double>>();
      if (m.size() != value.size() || v.size() != value.size())
        throw DataError("optimizer moment size mismatch in group " + g.name);
      g.value = std::move(value);
      g.m = std::move(m);
      g.v = std::move(v);
      g.step = s.at("step").get<std::size_t>();
      g.lr = s.at("lr").get<double>();
    }
  }

private:
  AdamWHyper h_;
  std::vector<ParamGroup> groups_;
};

/// Global L2 norm over all gradients.
inline double global_norm(const std::vector<Tensor> &grads) {
  double s = 0.0;
  for (const auto &g : grads)
    for (double x : g.values())
      s += x * x;
  return std::sqrt(s);
}

/// Scales all gradients by max_norm / norm when the global norm exceeds
/// max_norm. Returns the norm before clipping.
inline double clip_global_norm(std::vector<Tensor> &grads, double max_norm) {
  const double n = global_norm(grads);
  if (max_norm > 0 && n > max_norm) {
    const double s = max_norm / n;
    for (auto &g : grads)
      for (double &x : g.mutable_values())
        x *= s;
  }
  return n;
}

} // namespace rigmo
