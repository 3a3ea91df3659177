#pragma once

// Stable reparameterization of the diagonal transition.
//
//   discrete:   f(w) = 1 - 1/(a w^2 + b)     range [1 - 1/b, 1)
//   continuous: f(w) =   - 1/(a w^2 + b)     range [-1/b, 0)
//
// Both share f'(w) = 2 a w / (a w^2 + b)^2. For the continuous form
// |f'(w)| / f(w)^2 = 2 a |w| exactly.

#include <cmath>
#include <span>
#include <string>

#include "s7/errors.hpp"
#include "s7/numerics.hpp"

namespace s7 {

enum class ReparamForm { discrete, continuous };

struct ReparamConfig {
  double a = 1.0;
  double b = 0.5;
  ReparamForm form = ReparamForm::discrete;

  void validate() const {
    if (!(a > 0.0) || !std::isfinite(a)) throw ArgumentError("reparam: a must be positive, got " + std::to_string(a));
    if (!(b > 0.0) || !std::isfinite(b)) throw ArgumentError("reparam: b must be positive, got " + std::to_string(b));
  }
};

namespace reparam {

template <typename T>
T value(T w, T a, T b, ReparamForm form) {
  const T inv = T(1) / (a * w * w + b);
  return form == ReparamForm::discrete ? T(1) - inv : -inv;
}

template <typename T>
T derivative(T w, T a, T b) {
  const T den = a * w * w + b;
  return T(2) * a * w / (den * den);
}

}  // namespace reparam

template <typename T>
Vec<T> stability_map(std::span<const T> w, const ReparamConfig& cfg) {
  cfg.validate();
  const T a = static_cast<T>(cfg.a), b = static_cast<T>(cfg.b);
  Vec<T> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = reparam::value(w[i], a, b, cfg.form);
  return out;
}

template <typename T>
Vec<T> stability_map_derivative(std::span<const T> w, const ReparamConfig& cfg) {
  cfg.validate();
  const T a = static_cast<T>(cfg.a), b = static_cast<T>(cfg.b);
  Vec<T> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = reparam::derivative(w[i], a, b);
  return out;
}

// |f'(w)| / f(w)^2. Only the continuous form satisfies G_f = 2a|w|.
inline double gradient_over_weight_ratio(double w, const ReparamConfig& cfg) {
  cfg.validate();
  const double f = reparam::value(w, cfg.a, cfg.b, cfg.form);
  if (f == 0.0) {
    throw DomainError("gradient_over_weight_ratio: f(w) = 0 at w = " + std::to_string(w) +
                      " (discrete form with a w^2 + b = 1)");
  }
  return std::abs(reparam::derivative(w, cfg.a, cfg.b)) / (f * f);
}

// Nonnegative preimage of each target.
template <typename T>
Vec<T> inverse_stability_map(std::span<const T> target, const ReparamConfig& cfg) {
  cfg.validate();
  const double lo = cfg.form == ReparamForm::discrete ? 1.0 - 1.0 / cfg.b : -1.0 / cfg.b;
  const double hi = cfg.form == ReparamForm::discrete ? 1.0 : 0.0;
  Vec<T> out(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double t = static_cast<double>(target[i]);
    if (!(t >= lo && t < hi)) {
      throw DomainError("inverse_stability_map: target " + std::to_string(t) + " outside attainable range [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + ")");
    }
    // a w^2 + b = 1/(1 - t)  (discrete)  or  -1/t  (continuous)
    const double den = cfg.form == ReparamForm::discrete ? 1.0 / (1.0 - t) : -1.0 / t;
    out[i] = static_cast<T>(std::sqrt(std::max(0.0, (den - cfg.b) / cfg.a)));
  }
  return out;
}

}  // namespace s7
