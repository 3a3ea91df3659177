#pragma once

// Batched training. Per-sample forward/backward runs either serially (the
// reference path) or across OpenMP threads; both reduce per-sample gradients
// in ascending sample order, so the two paths agree bit for bit.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <omp.h>

#include "s7/backward.hpp"
#include "s7/optim.hpp"
#include "s7/sample.hpp"

namespace s7 {

template <typename T>
void add_into(Model<T>& acc, const Model<T>& g) {
  std::vector<std::span<const T>> src;
  g.for_each_param([&](const std::string&, std::span<const T> s, ParamGroup) { src.push_back(s); });
  std::size_t t = 0;
  acc.for_each_param([&](const std::string&, std::span<T> s, ParamGroup) {
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += src[t][i];
    ++t;
  });
}

template <typename T>
void scale_into(Model<T>& acc, T factor) {
  acc.for_each_param([&](const std::string&, std::span<T> s, ParamGroup) {
    for (T& v : s) v *= factor;
  });
}

// Every parameter tensor sits in exactly one decay group.
template <typename T>
void check_decay_groups(const Model<T>& model) {
  std::set<std::string> seen;
  model.for_each_param([&](const std::string& name, std::span<const T>, ParamGroup g) {
    if (g != ParamGroup::ssm && g != ParamGroup::input_dependence && g != ParamGroup::other) {
      throw ArgumentError("decay groups: " + name + " has no group");
    }
    if (!seen.insert(name).second) throw ArgumentError("decay groups: " + name + " visited twice");
  });
}

namespace serial {

// Mean loss and mean gradient over samples[indices]. losses[i] receives the
// per-sample loss of samples[indices[i]].
template <typename T>
T batch_gradient(const Model<T>& model, const std::vector<SequenceSample>& samples,
                 std::span<const std::size_t> indices, LossKind kind, Model<T>& out, std::span<T> losses) {
  out = model.zeros_like();
  Model<T> g = model.zeros_like();
  ModelTrace<T> tr;
  T total = T(0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    losses[i] = loss_and_gradient<T>(model, samples[indices[i]], kind, g, tr);
    add_into(out, g);
    total += losses[i];
  }
  const T inv = T(1) / static_cast<T>(indices.size());
  scale_into(out, inv);
  return total * inv;
}

}  // namespace serial

namespace parallel {

template <typename T>
struct Workspace {
  std::vector<Model<T>> grads;
  std::vector<ModelTrace<T>> traces;

  void prepare(const Model<T>& model, std::size_t batch, int threads) {
    if (grads.size() < batch) grads.resize(batch, model.zeros_like());
    if (traces.size() < static_cast<std::size_t>(threads)) traces.resize(threads);
  }
};

template <typename T>
T batch_gradient(const Model<T>& model, const std::vector<SequenceSample>& samples,
                 std::span<const std::size_t> indices, LossKind kind, Model<T>& out, std::span<T> losses,
                 Workspace<T>& ws, int threads) {
  const std::size_t n = indices.size();
  ws.prepare(model, n, threads);
  std::vector<std::string> errors(n);
#pragma omp parallel for num_threads(threads) schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      losses[i] = loss_and_gradient<T>(model, samples[indices[i]], kind, ws.grads[i], ws.traces[omp_get_thread_num()]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw NumericError(e);
  }
  out = model.zeros_like();
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    add_into(out, ws.grads[i]);
    total += losses[i];
  }
  const T inv = T(1) / static_cast<T>(n);
  scale_into(out, inv);
  return total * inv;
}

}  // namespace parallel

struct EvalResult {
  double loss = 0.0;
  std::optional<double> accuracy;  // classification only
};

template <typename T>
EvalResult evaluate(const Model<T>& model, const std::vector<SequenceSample>& samples, LossKind kind, int threads = 1) {
  EvalResult r;
  if (samples.empty()) {
    r.loss = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  const std::size_t n = samples.size();
  std::vector<double> losses(n);
  std::vector<int> correct(n, 0);
  std::vector<std::string> errors(n);
#pragma omp parallel for num_threads(threads) schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      ModelTrace<T> tr;
      stack_forward(model, samples[i], tr);
      losses[i] = static_cast<double>(sample_loss(model, tr, samples[i], kind));
      if (const auto* cl = std::get_if<ClassLabel>(&samples[i].target)) {
        const auto best = std::max_element(tr.pred.begin(), tr.pred.end()) - tr.pred.begin();
        correct[i] = static_cast<std::size_t>(best) == cl->index ? 1 : 0;
      }
    } catch (const NumericError&) {
      losses[i] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  double total = 0.0;
  for (double l : losses) total += l;
  r.loss = total / static_cast<double>(n);
  if (kind == LossKind::cross_entropy) {
    r.accuracy = static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) / static_cast<double>(n);
  }
  return r;
}

// Reported test metric: MSE for regression, accuracy for classification.
inline double task_metric(const EvalResult& r) { return r.accuracy ? *r.accuracy : r.loss; }

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_metric = 0.0;  // validation loss; lower is better
  double wall_ms = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::optional<std::size_t> best_epoch;
  double best_val = std::numeric_limits<double>::infinity();
  double test_metric = std::numeric_limits<double>::quiet_NaN();
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  std::optional<std::size_t> diverged_epoch;
  std::string divergence;
};

struct TrainOptions {
  int threads = 1;
  bool record_wall_time = true;
  std::function<void(const EpochRecord&)> on_epoch;
};

template <typename T>
struct TrainResult {
  TrainReport report;
  Model<T> best;
  Model<T> last;
};

// Epoch loop: seeded shuffle, mini-batch Adam with cosine decay, per-epoch
// validation; the best validation epoch (earliest on ties) is tested.
template <typename T>
TrainResult<T> train(Model<T> model, const DatasetSplits& data, const TrainConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  model.validate();
  check_decay_groups(model);
  if (data.train.empty()) throw ArgumentError("train: empty training split");
  const int threads = std::max(1, opt.threads);

  TrainResult<T> res{TrainReport{}, model, model};
  TrainReport& rep = res.report;
  AdamState<T> adam(model);
  parallel::Workspace<T> ws;
  Model<T> grads = model.zeros_like();
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.train.size());
  std::vector<T> losses(data.train.size());

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double scale = cosine_lr(e, cfg.epochs, 1.0);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<T> per_sample(data.train.size(), T(0));
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - start);
        std::span<const std::size_t> idx(order.data() + start, n);
        std::span<T> bl(losses.data(), n);
        const T loss = threads == 1 ? serial::batch_gradient<T>(model, data.train, idx, cfg.loss, grads, bl)
                                    : parallel::batch_gradient<T>(model, data.train, idx, cfg.loss, grads, bl, ws, threads);
        if (!std::isfinite(loss)) throw NumericError("non-finite batch loss");
        for (std::size_t i = 0; i < n; ++i) per_sample[idx[i]] = bl[i];
        adam_update(model, grads, adam, cfg, scale);
      }
    } catch (const NumericError& err) {
      rep.diverged = true;
      rep.diverged_epoch = e;
      rep.divergence = err.what();
    }

    EpochRecord rec;
    rec.epoch = e;
    rec.lr = cfg.base_lr * scale;
    double total = 0.0;
    for (T l : per_sample) total += static_cast<double>(l);
    rec.train_loss = rep.diverged ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(per_sample.size());
    rec.val_metric = rep.diverged ? std::numeric_limits<double>::quiet_NaN() : evaluate(model, data.val, cfg.loss, threads).loss;
    if (!rep.diverged && !std::isfinite(rec.val_metric) && !data.val.empty()) {
      rep.diverged = true;
      rep.diverged_epoch = e;
      rep.divergence = "non-finite validation loss";
    }
    if (!rep.diverged && (rec.val_metric < rep.best_val || data.val.empty())) {
      rep.best_val = rec.val_metric;
      rep.best_epoch = e;
      res.best = model;
    }
    if (opt.record_wall_time) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    rep.epochs.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);
    if (rep.diverged) break;
  }
  res.last = model;
  if (rep.best_epoch) {
    const EvalResult test = evaluate(res.best, data.test, cfg.loss, threads);
    rep.test_loss = test.loss;
    rep.test_metric = task_metric(test);
  }
  return res;
}

}  // namespace s7
