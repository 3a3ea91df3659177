#pragma once

// The S7 recurrent block and the encoder -> blocks -> decoder stack.
//
// Per step, with u the block input:
//   z   = norm_scale * layernorm(u) + norm_bias
//   w_k = w + proj_lambda z + lambda_bias
//   lam = f(w_k)                       (no dt)
//       = exp(f_cont(w_k) dt)          (asynchronous)
//   x_k = lam * x_{k-1} + (1 + mod_B z) * (B z) + state_bias
//   y_k = (1 + mod_C z) * (C x_k) + D * z
//   o_k = u + gelu(y_k) * sigmoid(gate_W gelu(y_k))
// The mod_B / mod_C factors are only present when the matching flag is set.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "s7/errors.hpp"
#include "s7/numerics.hpp"
#include "s7/reparam.hpp"
#include "s7/sample.hpp"

namespace s7 {

enum class Readout { per_step, pooled };

struct ModelShape {
  std::size_t input_width = 1;
  std::size_t d = 8;
  std::size_t m = 8;
  std::size_t output_width = 1;
  std::size_t depth = 1;
  bool input_dep_B = false;
  bool input_dep_C = false;
  Readout readout = Readout::per_step;
};

struct TransitionSettings {
  // false: raw w_k is used as the transition itself (ablation baseline).
  bool enabled = true;
  // form == continuous selects asynchronous stepping lam = exp(f(w_k) dt).
  ReparamConfig reparam;

  bool uses_dt() const { return reparam.form == ReparamForm::continuous; }
};

enum class ParamGroup { ssm, input_dependence, other };

template <typename T>
struct BlockParams {
  Vec<T> w;
  Mat<T> proj_lambda;
  Vec<T> lambda_bias;
  Mat<T> B;
  Mat<T> C;
  Vec<T> D;  // diagonal
  Vec<T> state_bias;
  Mat<T> gate_W;
  Vec<T> norm_scale;
  Vec<T> norm_bias;
  Mat<T> mod_B;  // m x d, empty unless input_dep_B
  Mat<T> mod_C;  // d x d, empty unless input_dep_C
  bool input_dep_B = false;
  bool input_dep_C = false;

  std::size_t d() const { return D.size(); }
  std::size_t m() const { return w.size(); }

  static BlockParams zeros(std::size_t d, std::size_t m, bool dep_B, bool dep_C) {
    BlockParams p;
    p.w.assign(m, T(0));
    p.proj_lambda = Mat<T>(m, d);
    p.lambda_bias.assign(m, T(0));
    p.B = Mat<T>(m, d);
    p.C = Mat<T>(d, m);
    p.D.assign(d, T(0));
    p.state_bias.assign(m, T(0));
    p.gate_W = Mat<T>(d, d);
    p.norm_scale.assign(d, T(0));
    p.norm_bias.assign(d, T(0));
    if (dep_B) p.mod_B = Mat<T>(m, d);
    if (dep_C) p.mod_C = Mat<T>(d, d);
    p.input_dep_B = dep_B;
    p.input_dep_C = dep_C;
    return p;
  }

  template <typename F>
  void for_each(F&& f) {
    f("w", std::span<T>(w), ParamGroup::ssm);
    f("proj_lambda", std::span<T>(proj_lambda.data), ParamGroup::input_dependence);
    f("lambda_bias", std::span<T>(lambda_bias), ParamGroup::input_dependence);
    f("B", std::span<T>(B.data), ParamGroup::ssm);
    f("C", std::span<T>(C.data), ParamGroup::ssm);
    f("D", std::span<T>(D), ParamGroup::ssm);
    f("state_bias", std::span<T>(state_bias), ParamGroup::ssm);
    f("gate_W", std::span<T>(gate_W.data), ParamGroup::other);
    f("norm_scale", std::span<T>(norm_scale), ParamGroup::other);
    f("norm_bias", std::span<T>(norm_bias), ParamGroup::other);
    if (input_dep_B) f("mod_B", std::span<T>(mod_B.data), ParamGroup::input_dependence);
    if (input_dep_C) f("mod_C", std::span<T>(mod_C.data), ParamGroup::input_dependence);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<BlockParams*>(this)->for_each([&](const char* name, std::span<T> s, ParamGroup g) {
      f(name, std::span<const T>(s), g);
    });
  }
};

template <typename T>
struct Model {
  ModelShape shape;
  TransitionSettings transition;
  Mat<T> encoder;  // d x input_width
  Vec<T> encoder_bias;
  std::vector<BlockParams<T>> blocks;
  Mat<T> decoder;  // output_width x d
  Vec<T> decoder_bias;

  // Visits every trainable tensor as (qualified name, values, group).
  template <typename F>
  void for_each_param(F&& f) {
    f(std::string("encoder.W"), std::span<T>(encoder.data), ParamGroup::other);
    f(std::string("encoder.b"), std::span<T>(encoder_bias), ParamGroup::other);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string prefix = "blocks." + std::to_string(l) + ".";
      blocks[l].for_each([&](const char* name, std::span<T> s, ParamGroup g) { f(prefix + name, s, g); });
    }
    f(std::string("decoder.W"), std::span<T>(decoder.data), ParamGroup::other);
    f(std::string("decoder.b"), std::span<T>(decoder_bias), ParamGroup::other);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    const_cast<Model*>(this)->for_each_param([&](const std::string& name, std::span<T> s, ParamGroup g) {
      f(name, std::span<const T>(s), g);
    });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_param([&](const std::string&, std::span<const T> s, ParamGroup) { n += s.size(); });
    return n;
  }

  // Same structure, every value zero. Used for gradient and moment buffers.
  Model zeros_like() const {
    Model z = *this;
    z.for_each_param([](const std::string&, std::span<T> s, ParamGroup) { std::fill(s.begin(), s.end(), T(0)); });
    return z;
  }

  void validate() const {
    const auto& s = shape;
    auto need = [](bool ok, const std::string& what) {
      if (!ok) throw ShapeError("model: " + what);
    };
    need(encoder.rows == s.d && encoder.cols == s.input_width, "encoder is " + encoder.shape_string());
    need(encoder_bias.size() == s.d, "encoder bias length");
    need(blocks.size() == s.depth, "block count " + std::to_string(blocks.size()));
    for (const auto& b : blocks) {
      need(b.w.size() == s.m && b.D.size() == s.d, "block state/feature size");
      need(b.proj_lambda.rows == s.m && b.proj_lambda.cols == s.d, "proj_lambda is " + b.proj_lambda.shape_string());
      need(b.B.rows == s.m && b.B.cols == s.d, "B is " + b.B.shape_string());
      need(b.C.rows == s.d && b.C.cols == s.m, "C is " + b.C.shape_string());
      need(b.gate_W.rows == s.d && b.gate_W.cols == s.d, "gate_W is " + b.gate_W.shape_string());
      need(b.lambda_bias.size() == s.m && b.state_bias.size() == s.m, "block bias lengths");
      need(b.norm_scale.size() == s.d && b.norm_bias.size() == s.d, "norm lengths");
      need(b.input_dep_B == s.input_dep_B && b.input_dep_C == s.input_dep_C, "block modulation flags");
      if (b.input_dep_B) need(b.mod_B.rows == s.m && b.mod_B.cols == s.d, "mod_B is " + b.mod_B.shape_string());
      if (b.input_dep_C) need(b.mod_C.rows == s.d && b.mod_C.cols == s.d, "mod_C is " + b.mod_C.shape_string());
    }
    need(decoder.rows == s.output_width && decoder.cols == s.d, "decoder is " + decoder.shape_string());
    need(decoder_bias.size() == s.output_width, "decoder bias length");
  }
};

template <typename T>
Model<T> zero_model(const ModelShape& shape, const TransitionSettings& transition) {
  Model<T> model;
  model.shape = shape;
  model.transition = transition;
  model.encoder = Mat<T>(shape.d, shape.input_width);
  model.encoder_bias.assign(shape.d, T(0));
  for (std::size_t l = 0; l < shape.depth; ++l) {
    model.blocks.push_back(BlockParams<T>::zeros(shape.d, shape.m, shape.input_dep_B, shape.input_dep_C));
  }
  model.decoder = Mat<T>(shape.output_width, shape.d);
  model.decoder_bias.assign(shape.output_width, T(0));
  return model;
}

// Transition targets in [0.7, 0.99] pulled back through the reparameterization
// (dt = 1 for the asynchronous form), so w never sits at the marginal w = 0.
template <typename T>
Model<T> init_model(const ModelShape& shape, const TransitionSettings& transition, std::uint64_t seed) {
  transition.reparam.validate();
  Model<T> model = zero_model<T>(shape, transition);
  std::mt19937_64 rng(seed);
  auto fill_uniform = [&](std::span<T> s, double half_width) {
    std::uniform_real_distribution<double> dist(-half_width, half_width);
    for (T& v : s) v = static_cast<T>(dist(rng));
  };
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(shape.d));
  fill_uniform(model.encoder.data, 1.0 / std::sqrt(static_cast<double>(shape.input_width)));
  for (auto& b : model.blocks) {
    std::uniform_real_distribution<double> target_dist(0.7, 0.99);
    Vec<double> targets(shape.m);
    for (double& t : targets) t = target_dist(rng);
    if (transition.uses_dt()) {
      for (double& t : targets) t = std::log(t);
    }
    Vec<double> raw = transition.enabled ? inverse_stability_map<double>(targets, transition.reparam) : targets;
    for (std::size_t i = 0; i < shape.m; ++i) b.w[i] = static_cast<T>(raw[i]);
    fill_uniform(b.proj_lambda.data, 0.5 * in_scale);
    fill_uniform(b.B.data, in_scale);
    fill_uniform(b.C.data, in_scale);
    std::fill(b.D.begin(), b.D.end(), T(1));
    fill_uniform(b.gate_W.data, in_scale);
    std::fill(b.norm_scale.begin(), b.norm_scale.end(), T(1));
    if (b.input_dep_B) fill_uniform(b.mod_B.data, 0.5 * in_scale);
    if (b.input_dep_C) fill_uniform(b.mod_C.data, 0.5 * in_scale);
  }
  fill_uniform(model.decoder.data, in_scale);
  return model;
}

// ---------------------------------------------------------------------------
// Per-step operations

template <typename T>
struct HiddenState {
  Vec<T> x;
};

template <typename T>
struct StepInput {
  Vec<T> u;
  std::optional<double> dt;
};

// w_k = w + proj_lambda u + lambda_bias
template <typename T>
Vec<T> modulate(const BlockParams<T>& p, std::span<const T> u) {
  if (u.size() != p.d()) {
    throw ShapeError("modulate: input length " + std::to_string(u.size()) + " vs proj_lambda " +
                     p.proj_lambda.shape_string());
  }
  Vec<T> wk(p.m());
  kernel::matvec(p.proj_lambda, u, std::span<T>(wk));
  for (std::size_t i = 0; i < wk.size(); ++i) wk[i] = p.w[i] + wk[i] + p.lambda_bias[i];
  return wk;
}

namespace detail {

// lam[i] and d lam / d w_k[i]
template <typename T>
void transition_into(std::span<const T> wk, std::optional<double> dt, const TransitionSettings& s, std::span<T> lam,
                     std::span<T> dlam) {
  const T a = static_cast<T>(s.reparam.a), b = static_cast<T>(s.reparam.b);
  if (!dt) {
    for (std::size_t i = 0; i < wk.size(); ++i) {
      if (s.enabled) {
        lam[i] = reparam::value(wk[i], a, b, ReparamForm::discrete);
        dlam[i] = reparam::derivative(wk[i], a, b);
      } else {
        lam[i] = wk[i];
        dlam[i] = T(1);
      }
    }
    return;
  }
  const T h = static_cast<T>(*dt);
  for (std::size_t i = 0; i < wk.size(); ++i) {
    const T gen = s.enabled ? reparam::value(wk[i], a, b, ReparamForm::continuous) : wk[i];
    const T dgen = s.enabled ? reparam::derivative(wk[i], a, b) : T(1);
    lam[i] = std::exp(gen * h);
    dlam[i] = lam[i] * h * dgen;
  }
}

template <typename T>
struct StepRow {
  std::span<T> wk, lam, dlam, bz, sB, x, cx, sC, y;
};

// One recurrence step on the normalized input z. Writes every intermediate
// needed by the backward pass into row.
template <typename T>
void step_core(const BlockParams<T>& p, const TransitionSettings& s, std::span<const T> z, std::optional<double> dt,
               std::span<const T> x_prev, const StepRow<T>& row, std::size_t step_index) {
  const std::size_t m = p.m(), d = p.d();
  kernel::matvec(p.proj_lambda, z, row.wk);
  for (std::size_t i = 0; i < m; ++i) row.wk[i] = p.w[i] + row.wk[i] + p.lambda_bias[i];
  transition_into<T>(row.wk, dt, s, row.lam, row.dlam);
  kernel::matvec(p.B, z, row.bz);
  if (p.input_dep_B) kernel::matvec(p.mod_B, z, row.sB);
  for (std::size_t i = 0; i < m; ++i) {
    const T drive = p.input_dep_B ? (T(1) + row.sB[i]) * row.bz[i] : row.bz[i];
    row.x[i] = row.lam[i] * x_prev[i] + drive + p.state_bias[i];
    if (!std::isfinite(row.x[i])) {
      throw NumericError("non-finite hidden state at step " + std::to_string(step_index) + ", unit " +
                         std::to_string(i));
    }
  }
  kernel::matvec(p.C, std::span<const T>(row.x), row.cx);
  if (p.input_dep_C) kernel::matvec(p.mod_C, z, row.sC);
  for (std::size_t j = 0; j < d; ++j) {
    const T read = p.input_dep_C ? (T(1) + row.sC[j]) * row.cx[j] : row.cx[j];
    row.y[j] = read + p.D[j] * z[j];
  }
}

}  // namespace detail

// Plain-vector transition: discrete map without dt, exp(continuous map * dt) with dt.
template <typename T>
Vec<T> transition(std::span<const T> wk, std::optional<double> dt, const ReparamConfig& cfg) {
  cfg.validate();
  if (dt && !(*dt > 0.0)) throw ArgumentError("transition: dt must be positive, got " + std::to_string(*dt));
  Vec<T> lam(wk.size()), dlam(wk.size());
  detail::transition_into<T>(wk, dt, TransitionSettings{true, cfg}, lam, dlam);
  return lam;
}

// x_k = lam * x_prev + B_k u + state_bias ; y_k = C_k x_k + D u
template <typename T>
std::pair<HiddenState<T>, Vec<T>> step(const HiddenState<T>& x_prev, const StepInput<T>& in, const BlockParams<T>& p,
                                       const TransitionSettings& s) {
  const std::size_t m = p.m(), d = p.d();
  if (in.u.size() != d || x_prev.x.size() != m) {
    throw ShapeError("step: input length " + std::to_string(in.u.size()) + " / state length " +
                     std::to_string(x_prev.x.size()) + " vs layer d=" + std::to_string(d) + " m=" + std::to_string(m));
  }
  if (in.dt && !(*in.dt > 0.0)) throw ArgumentError("step: dt must be positive");
  Vec<T> buf(7 * m + 3 * d);
  T* q = buf.data();
  auto take = [&](std::size_t n) {
    std::span<T> s(q, n);
    q += n;
    return s;
  };
  detail::StepRow<T> row{take(m), take(m), take(m), take(m), take(m), take(m), take(d), take(d), take(d)};
  detail::step_core<T>(p, s, in.u, in.dt, x_prev.x, row, 0);
  return {HiddenState<T>{Vec<T>(row.x.begin(), row.x.end())}, Vec<T>(row.y.begin(), row.y.end())};
}

// gelu(y) * sigmoid(gate_W gelu(y))
template <typename T>
Vec<T> gate_output(std::span<const T> y, const BlockParams<T>& p) {
  if (y.size() != p.d()) throw ShapeError("gate_output: y length " + std::to_string(y.size()) + " vs gate " + p.gate_W.shape_string());
  Vec<T> h = gelu(y);
  Vec<T> a = matvec(p.gate_W, std::span<const T>(h));
  for (std::size_t j = 0; j < h.size(); ++j) h[j] *= kernel::sigmoid(a[j]);
  return h;
}

// Closed-form pooled update over a window with the transition frozen at the
// first input of the window:
//   x_{k+p} = lam^p x_k + sum_{i=1..p} lam^{p-i} B u_{k+i}
template <typename T>
HiddenState<T> event_pool(const HiddenState<T>& x, std::span<const StepInput<T>> window, const BlockParams<T>& p,
                          const TransitionSettings& s) {
  if (window.empty()) throw ArgumentError("event_pool: empty window");
  const std::size_t m = p.m(), len = window.size();
  if (x.x.size() != m) throw ShapeError("event_pool: state length " + std::to_string(x.x.size()) + " vs m=" + std::to_string(m));
  for (const auto& in : window) {
    if (in.u.size() != p.d()) throw ShapeError("event_pool: input length " + std::to_string(in.u.size()));
  }
  const Vec<T> wk = modulate(p, std::span<const T>(window[0].u));
  Vec<T> lam(m), dlam(m);
  detail::transition_into<T>(wk, window[0].dt, s, lam, dlam);

  // powers[i] = lam^i, i = 0..len
  std::vector<Vec<T>> powers(len + 1, Vec<T>(m, T(1)));
  for (std::size_t i = 1; i <= len; ++i) {
    for (std::size_t j = 0; j < m; ++j) powers[i][j] = powers[i - 1][j] * lam[j];
  }
  HiddenState<T> out{Vec<T>(m)};
  for (std::size_t j = 0; j < m; ++j) out.x[j] = powers[len][j] * x.x[j];
  Vec<T> bu(m);
  for (std::size_t i = 1; i <= len; ++i) {
    kernel::matvec(p.B, std::span<const T>(window[i - 1].u), std::span<T>(bu));
    const Vec<T>& pw = powers[len - i];
    for (std::size_t j = 0; j < m; ++j) out.x[j] += pw[j] * bu[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Block and stack forward with caches for BPTT

template <typename T>
struct BlockTrace {
  std::size_t len = 0, d = 0, m = 0;
  Vec<T> normalized, rstd, z;
  Vec<T> wk, lam, dlam, bz, sB;
  Vec<T> x;  // (len + 1) x m, row 0 holds x0
  Vec<T> cx, sC, y, h, gate;
  std::vector<std::optional<double>> dt;

  void resize(std::size_t n, std::size_t dd, std::size_t mm) {
    len = n;
    d = dd;
    m = mm;
    for (Vec<T>* v : {&normalized, &z, &cx, &sC, &y, &h, &gate}) v->assign(n * d, T(0));
    for (Vec<T>* v : {&wk, &lam, &dlam, &bz, &sB}) v->assign(n * m, T(0));
    x.assign((n + 1) * m, T(0));
    rstd.assign(n, T(0));
    dt.assign(n, std::nullopt);
  }

  std::span<T> rd(Vec<T>& v, std::size_t k) { return {v.data() + k * d, d}; }
  std::span<const T> rd(const Vec<T>& v, std::size_t k) const { return {v.data() + k * d, d}; }
  std::span<T> rm(Vec<T>& v, std::size_t k) { return {v.data() + k * m, m}; }
  std::span<const T> rm(const Vec<T>& v, std::size_t k) const { return {v.data() + k * m, m}; }
  // State after step k (k = -1 is x0).
  std::span<const T> state(std::ptrdiff_t k) const { return {x.data() + (k + 1) * m, m}; }
};

// inputs and outputs are len x d row-major; dts is empty or len long.
template <typename T>
void block_forward(const BlockParams<T>& p, const TransitionSettings& s, std::span<const T> x0,
                   std::span<const T> inputs, std::span<const std::optional<double>> dts, BlockTrace<T>& tr,
                   std::span<T> outputs) {
  const std::size_t d = p.d(), m = p.m();
  if (inputs.size() % d != 0 || inputs.empty()) {
    throw ShapeError("block_forward: input buffer of " + std::to_string(inputs.size()) + " values for d=" + std::to_string(d));
  }
  const std::size_t len = inputs.size() / d;
  if (x0.size() != m || outputs.size() != inputs.size() || (!dts.empty() && dts.size() != len)) {
    throw ShapeError("block_forward: inconsistent state/output/dt lengths");
  }
  tr.resize(len, d, m);
  std::copy(x0.begin(), x0.end(), tr.x.begin());
  Vec<T> act(d);
  for (std::size_t k = 0; k < len; ++k) {
    std::span<const T> u(inputs.data() + k * d, d);
    auto nrm = tr.rd(tr.normalized, k);
    auto z = tr.rd(tr.z, k);
    tr.rstd[k] = layer_norm(u, nrm);
    for (std::size_t j = 0; j < d; ++j) z[j] = p.norm_scale[j] * nrm[j] + p.norm_bias[j];
    if (!dts.empty()) tr.dt[k] = dts[k];
    detail::StepRow<T> row{tr.rm(tr.wk, k), tr.rm(tr.lam, k), tr.rm(tr.dlam, k), tr.rm(tr.bz, k), tr.rm(tr.sB, k),
                           std::span<T>(tr.x.data() + (k + 1) * m, m), tr.rd(tr.cx, k), tr.rd(tr.sC, k), tr.rd(tr.y, k)};
    detail::step_core<T>(p, s, z, tr.dt[k], tr.state(static_cast<std::ptrdiff_t>(k) - 1), row, k);
    auto y = tr.rd(tr.y, k);
    auto h = tr.rd(tr.h, k);
    auto g = tr.rd(tr.gate, k);
    for (std::size_t j = 0; j < d; ++j) h[j] = kernel::gelu(y[j]);
    kernel::matvec(p.gate_W, std::span<const T>(h), std::span<T>(act));
    for (std::size_t j = 0; j < d; ++j) {
      g[j] = kernel::sigmoid(act[j]);
      outputs[k * d + j] = u[j] + h[j] * g[j];
    }
  }
}

// Convenience form over a list of step inputs.
template <typename T>
std::pair<std::vector<Vec<T>>, BlockTrace<T>> block_forward(const HiddenState<T>& x0,
                                                            const std::vector<StepInput<T>>& seq,
                                                            const BlockParams<T>& p, const TransitionSettings& s) {
  if (seq.empty()) throw ArgumentError("block_forward: empty sequence");
  const std::size_t d = p.d();
  Vec<T> flat;
  std::vector<std::optional<double>> dts;
  for (const auto& in : seq) {
    if (in.u.size() != d) throw ShapeError("block_forward: step input of length " + std::to_string(in.u.size()) + " vs d=" + std::to_string(d));
    flat.insert(flat.end(), in.u.begin(), in.u.end());
    dts.push_back(in.dt);
  }
  Vec<T> out(flat.size());
  BlockTrace<T> tr;
  block_forward<T>(p, s, x0.x, flat, dts, tr, out);
  std::vector<Vec<T>> rows;
  for (std::size_t k = 0; k < seq.size(); ++k) rows.emplace_back(out.begin() + k * d, out.begin() + (k + 1) * d);
  return {std::move(rows), std::move(tr)};
}

template <typename T>
struct ModelTrace {
  std::size_t len = 0;
  std::vector<Vec<T>> acts;  // acts[0] encoder output, acts[l + 1] block l output; len x d each
  std::vector<BlockTrace<T>> blocks;
  Vec<T> pooled;  // mean of the last activation (pooled readout)
  Vec<T> pred;    // len x out (per step) or out (pooled)
};

// Full stack forward; returns a view of trace.pred.
template <typename T>
std::span<const T> stack_forward(const Model<T>& model, const SequenceSample& sample, ModelTrace<T>& tr) {
  const auto& sh = model.shape;
  const std::size_t len = sample.length();
  if (len == 0) throw ArgumentError("stack_forward: empty sequence");
  if (sample.width != sh.input_width) {
    throw ShapeError("stack_forward: sample width " + std::to_string(sample.width) + " vs encoder " +
                     model.encoder.shape_string());
  }
  const std::size_t d = sh.d;
  tr.len = len;
  tr.acts.resize(sh.depth + 1);
  tr.blocks.resize(sh.depth);
  for (auto& a : tr.acts) a.assign(len * d, T(0));

  Vec<T> raw(sh.input_width);
  for (std::size_t k = 0; k < len; ++k) {
    std::span<T> e(tr.acts[0].data() + k * d, d);
    if (sample.tokenized()) {
      const std::uint32_t tok = sample.tokens[k];
      if (tok >= sh.input_width) throw ShapeError("stack_forward: token " + std::to_string(tok) + " outside vocabulary");
      for (std::size_t j = 0; j < d; ++j) e[j] = model.encoder(j, tok) + model.encoder_bias[j];
    } else {
      for (std::size_t i = 0; i < sh.input_width; ++i) raw[i] = static_cast<T>(sample.inputs[k * sh.input_width + i]);
      kernel::matvec(model.encoder, std::span<const T>(raw), e);
      for (std::size_t j = 0; j < d; ++j) e[j] += model.encoder_bias[j];
    }
  }

  std::vector<std::optional<double>> dts;
  if (model.transition.uses_dt()) {
    const auto gaps = sample.intervals();
    dts.assign(len, 1.0);
    for (std::size_t k = 0; k < gaps.size(); ++k) dts[k] = gaps[k];
  }
  const Vec<T> x0(sh.m, T(0));
  for (std::size_t l = 0; l < sh.depth; ++l) {
    block_forward<T>(model.blocks[l], model.transition, x0, tr.acts[l], dts, tr.blocks[l], tr.acts[l + 1]);
  }

  const Vec<T>& last = tr.acts[sh.depth];
  const std::size_t out = sh.output_width;
  if (sh.readout == Readout::per_step) {
    tr.pred.assign(len * out, T(0));
    for (std::size_t k = 0; k < len; ++k) {
      std::span<T> pk(tr.pred.data() + k * out, out);
      kernel::matvec(model.decoder, std::span<const T>(last.data() + k * d, d), pk);
      for (std::size_t i = 0; i < out; ++i) pk[i] += model.decoder_bias[i];
    }
  } else {
    tr.pooled.assign(d, T(0));
    for (std::size_t k = 0; k < len; ++k) {
      for (std::size_t j = 0; j < d; ++j) tr.pooled[j] += last[k * d + j];
    }
    for (T& v : tr.pooled) v /= static_cast<T>(len);
    tr.pred.assign(out, T(0));
    kernel::matvec(model.decoder, std::span<const T>(tr.pooled), std::span<T>(tr.pred));
    for (std::size_t i = 0; i < out; ++i) tr.pred[i] += model.decoder_bias[i];
  }
  return tr.pred;
}

enum class LossKind { mse, cross_entropy };

// Loss of trace.pred against the sample target; writes dLoss/dpred when asked.
template <typename T>
T sample_loss(const Model<T>& model, const ModelTrace<T>& tr, const SequenceSample& sample, LossKind kind,
              Vec<T>* dpred = nullptr) {
  const auto& pred = tr.pred;
  if (dpred) dpred->assign(pred.size(), T(0));
  if (const auto* st = std::get_if<StepTargets>(&sample.target)) {
    if (model.shape.readout != Readout::per_step || st->values.size() != pred.size() || kind != LossKind::mse) {
      throw ShapeError("sample_loss: per-step targets need a per-step readout with matching width and MSE loss");
    }
    const T n = static_cast<T>(pred.size());
    T acc = T(0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const T e = pred[i] - static_cast<T>(st->values[i]);
      acc += e * e;
      if (dpred) (*dpred)[i] = T(2) * e / n;
    }
    return acc / n;
  }
  if (model.shape.readout != Readout::pooled) throw ShapeError("sample_loss: sequence-level target needs a pooled readout");
  if (const auto* cl = std::get_if<ClassLabel>(&sample.target)) {
    if (kind != LossKind::cross_entropy) throw ShapeError("sample_loss: class label needs cross-entropy loss");
    return softmax_cross_entropy<T>(pred, cl->index, dpred ? std::span<T>(*dpred) : std::span<T>());
  }
  const auto& vt = std::get<VectorTarget>(sample.target);
  if (vt.values.size() != pred.size() || kind != LossKind::mse) {
    throw ShapeError("sample_loss: vector target of length " + std::to_string(vt.values.size()) + " vs " +
                     std::to_string(pred.size()) + " outputs (MSE only)");
  }
  const T n = static_cast<T>(pred.size());
  T acc = T(0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T e = pred[i] - static_cast<T>(vt.values[i]);
    acc += e * e;
    if (dpred) (*dpred)[i] = T(2) * e / n;
  }
  return acc / n;
}

template <typename T>
T forward_loss(const Model<T>& model, const SequenceSample& sample, LossKind kind) {
  ModelTrace<T> tr;
  stack_forward(model, sample, tr);
  return sample_loss(model, tr, sample, kind);
}

}  // namespace s7
