#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "s7/layer.hpp"

namespace s7 {

struct TrainConfig {
  double base_lr = 3e-3;
  double ssm_lr = 1e-3;
  double wd_dense_inputdep = 0.0;
  double wd_ssm = 0.0;
  double wd_other = 0.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::mse;
  int precision = 32;

  void validate() const {
    for (double r : {base_lr, ssm_lr, wd_dense_inputdep, wd_ssm, wd_other}) {
      if (!(r >= 0.0) || !std::isfinite(r)) throw ArgumentError("train config: rates must be finite and >= 0");
    }
    if (epochs < 1) throw ArgumentError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("train config: batch_size must be >= 1");
    if (precision != 32 && precision != 64) throw ArgumentError("train config: precision must be 32 or 64");
  }
};

// base * (1 + cos(pi epoch / total)) / 2, no warmup.
inline double cosine_lr(std::size_t epoch, std::size_t total, double base) {
  if (total < 1) throw ArgumentError("cosine_lr: total must be >= 1");
  if (epoch > total) {
    throw ArgumentError("cosine_lr: epoch " + std::to_string(epoch) + " beyond total " + std::to_string(total));
  }
  const double v = base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(total)));
  return std::max(0.0, v);
}

template <typename T>
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;
  Model<T> first;
  Model<T> second;
  std::uint64_t step = 0;

  explicit AdamState(const Model<T>& like) : first(like.zeros_like()), second(like.zeros_like()) {}
};

inline double group_weight_decay(ParamGroup g, const TrainConfig& cfg) {
  switch (g) {
    case ParamGroup::ssm: return cfg.wd_ssm;
    case ParamGroup::input_dependence: return cfg.wd_dense_inputdep;
    case ParamGroup::other: return cfg.wd_other;
  }
  return 0.0;
}

inline double group_learning_rate(ParamGroup g, const TrainConfig& cfg) {
  return g == ParamGroup::ssm ? cfg.ssm_lr : cfg.base_lr;
}

// Bias-corrected Adam with decoupled per-group weight decay. lr_scale
// multiplies both learning rates (cosine factor). A non-finite gradient
// aborts before anything is modified.
template <typename T>
void adam_update(Model<T>& params, const Model<T>& grads, AdamState<T>& state, const TrainConfig& cfg,
                 double lr_scale) {
  std::vector<std::span<const T>> g;
  std::vector<std::span<T>> m1, m2;
  grads.for_each_param([&](const std::string& name, std::span<const T> s, ParamGroup) {
    if (!all_finite(s)) throw NumericError("adam_update: non-finite gradient in " + name);
    g.push_back(s);
  });
  state.first.for_each_param([&](const std::string&, std::span<T> s, ParamGroup) { m1.push_back(s); });
  state.second.for_each_param([&](const std::string&, std::span<T> s, ParamGroup) { m2.push_back(s); });
  std::size_t count = 0;
  params.for_each_param([&](const std::string&, std::span<T>, ParamGroup) { ++count; });
  if (g.size() != count || m1.size() != count || m2.size() != count) {
    throw ShapeError("adam_update: gradient/state structure does not match parameters");
  }

  ++state.step;
  const double b1 = AdamState<T>::beta1, b2 = AdamState<T>::beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  std::size_t t = 0;
  params.for_each_param([&](const std::string& name, std::span<T> p, ParamGroup group) {
    if (p.size() != g[t].size()) throw ShapeError("adam_update: gradient shape mismatch for " + name);
    const T lr = static_cast<T>(group_learning_rate(group, cfg) * lr_scale);
    const T shrink = T(1) - lr * static_cast<T>(group_weight_decay(group, cfg));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T gi = g[t][i];
      m1[t][i] = static_cast<T>(b1) * m1[t][i] + static_cast<T>(1.0 - b1) * gi;
      m2[t][i] = static_cast<T>(b2) * m2[t][i] + static_cast<T>(1.0 - b2) * gi * gi;
      const T mhat = m1[t][i] / static_cast<T>(c1);
      const T vhat = m2[t][i] / static_cast<T>(c2);
      p[i] = p[i] * shrink - lr * mhat / (std::sqrt(vhat) + static_cast<T>(AdamState<T>::eps));
    }
    ++t;
  });
}

}  // namespace s7
