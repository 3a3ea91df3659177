#pragma once

// Brute-force central-difference gradients and the gradient-scaling probes
// for the transition parameters w.

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "s7/backward.hpp"

namespace s7 {

// Same model with every value converted to precision U.
template <typename U, typename T>
Model<U> model_cast(const Model<T>& model) {
  Model<U> out = zero_model<U>(model.shape, model.transition);
  std::vector<std::span<const T>> src;
  model.for_each_param([&](const std::string&, std::span<const T> s, ParamGroup) { src.push_back(s); });
  std::size_t t = 0;
  out.for_each_param([&](const std::string&, std::span<U> s, ParamGroup) {
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<U>(src[t][i]);
    ++t;
  });
  return out;
}

// two-point: (L(+h) - L(-h)) / 2h
// four-point: (8 (L(+h) - L(-h)) - (L(+2h) - L(-2h))) / 12h
enum class Stencil { two_point, four_point };

// Central-difference estimate of dLoss/dtheta_j for every scalar parameter.
// Two or four forward passes per probe; meant for tiny models.
template <typename T>
Model<T> finite_difference_gradients(const Model<T>& model, const SequenceSample& sample, LossKind kind, double h,
                                     Stencil stencil = Stencil::two_point) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw ArgumentError("finite_difference_gradients: h outside [1e-7, 1e-3]");
  Model<T> probe = model;
  Model<T> grads = model.zeros_like();
  std::vector<std::span<T>> probe_tensors, grad_tensors;
  std::vector<std::string> names;
  probe.for_each_param([&](const std::string& name, std::span<T> s, ParamGroup) {
    probe_tensors.push_back(s);
    names.push_back(name);
  });
  grads.for_each_param([&](const std::string&, std::span<T> s, ParamGroup) { grad_tensors.push_back(s); });
  const T step = static_cast<T>(h);
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    for (std::size_t i = 0; i < probe_tensors[t].size(); ++i) {
      T& v = probe_tensors[t][i];
      const T saved = v;
      auto at = [&](T offset) {
        v = saved + offset;
        const T l = forward_loss(probe, sample, kind);
        v = saved;
        if (!std::isfinite(l)) {
          throw NumericError("finite_difference_gradients: non-finite loss probing " + names[t] + "[" +
                             std::to_string(i) + "]");
        }
        return l;
      };
      const T d1 = at(step) - at(-step);
      if (stencil == Stencil::two_point) {
        grad_tensors[t][i] = d1 / (T(2) * step);
      } else {
        const T d2 = at(T(2) * step) - at(T(-2) * step);
        grad_tensors[t][i] = (T(8) * d1 - d2) / (T(12) * step);
      }
    }
  }
  return grads;
}

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

// Name with the block index stripped: "blocks.3.w" -> "w".
inline std::string param_family(const std::string& name) {
  if (name.rfind("blocks.", 0) == 0) {
    const auto dot = name.find('.', 7);
    return name.substr(dot + 1);
  }
  return name;
}

// Worst relative error per parameter family between two gradient sets.
template <typename T>
std::map<std::string, double> worst_relative_error(const Model<T>& analytic, const Model<T>& numeric,
                                                   double floor = 1e-8) {
  std::map<std::string, double> worst;
  std::vector<std::span<const T>> num;
  numeric.for_each_param([&](const std::string&, std::span<const T> s, ParamGroup) { num.push_back(s); });
  std::size_t t = 0;
  analytic.for_each_param([&](const std::string& name, std::span<const T> s, ParamGroup) {
    double& w = worst[param_family(name)];
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double e = relative_error(static_cast<double>(s[i]), static_cast<double>(num[t][i]), floor);
      w = std::isnan(e) ? std::numeric_limits<double>::infinity() : std::max(w, e);
    }
    ++t;
  });
  return worst;
}

// Largest |dLoss/dw_j - sum_k dLoss/dlam_{k,j} * dlam_{k,j}/dw_{k,j}| over all
// blocks, with the per-step derivative recomputed from the cached w_k.
template <typename T>
double chain_rule_residual(const Model<T>& model, const SequenceSample& sample, LossKind kind,
                           double loss_scale = 1.0) {
  Model<T> grads = model.zeros_like();
  ModelTrace<T> tr;
  LeafGradients<T> leaf;
  loss_and_gradient<T>(model, sample, kind, grads, tr, static_cast<T>(loss_scale), &leaf);
  const auto& s = model.transition;
  double worst = 0.0;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& bt = tr.blocks[l];
    for (std::size_t j = 0; j < bt.m; ++j) {
      T acc = T(0);
      for (std::size_t k = bt.len; k-- > 0;) {
        const T wk = bt.wk[k * bt.m + j];
        Vec<T> lam(1), dlam(1);
        detail::transition_into<T>(std::span<const T>(&wk, 1), bt.dt[k], s, lam, dlam);
        acc += leaf.dlam[l][k * bt.m + j] * dlam[0];
      }
      worst = std::max(worst, std::abs(static_cast<double>(grads.blocks[l].w[j] - acc)));
    }
  }
  return worst;
}

struct GradientScaleRow {
  std::size_t block = 0;
  std::size_t index = 0;
  double w = 0.0;
  double grad_abs = 0.0;
  double fprime_abs = 0.0;
  double ratio = 0.0;  // grad_abs / fprime_abs; +inf when f'(w) = 0 and grad != 0
};

struct GradientScaleReport {
  std::vector<GradientScaleRow> rows;
  double c_estimate = 0.0;  // max finite ratio
  double chain_rule_residual = 0.0;
};

// For every w_j: |dLoss/dw_j|, |f'(w_j)| at the unmodulated w_j and their ratio.
template <typename T>
GradientScaleReport gradient_scale_probe(const Model<T>& model, const SequenceSample& sample, LossKind kind,
                                         double loss_scale = 1.0) {
  Model<T> grads = model.zeros_like();
  ModelTrace<T> tr;
  loss_and_gradient<T>(model, sample, kind, grads, tr, static_cast<T>(loss_scale));
  GradientScaleReport rep;
  const double a = model.transition.reparam.a, b = model.transition.reparam.b;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    for (std::size_t j = 0; j < model.blocks[l].w.size(); ++j) {
      GradientScaleRow r;
      r.block = l;
      r.index = j;
      r.w = static_cast<double>(model.blocks[l].w[j]);
      r.grad_abs = std::abs(static_cast<double>(grads.blocks[l].w[j]));
      r.fprime_abs = model.transition.enabled ? std::abs(reparam::derivative(r.w, a, b)) : 1.0;
      if (r.fprime_abs > 0.0) {
        r.ratio = r.grad_abs / r.fprime_abs;
        rep.c_estimate = std::max(rep.c_estimate, r.ratio);
      } else {
        r.ratio = r.grad_abs == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
      }
      rep.rows.push_back(r);
    }
  }
  rep.chain_rule_residual = chain_rule_residual(model, sample, kind, loss_scale);
  return rep;
}

}  // namespace s7
