#include "s7/commands.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "s7/checkpoint.hpp"
#include "s7/config.hpp"
#include "s7/gradcheck.hpp"
#include "s7/trainer.hpp"

namespace s7 {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json maybe(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

RunConfig load_with_overrides(const CommandOptions& opt, bool ablation, bool needs_output = true) {
  if (opt.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_run_config(opt.config, ablation);
  if (opt.seed) cfg.train.seed = *opt.seed;
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  if (needs_output && cfg.output_dir.empty()) throw ConfigError("paths.output: empty and no --out given");
  return cfg;
}

std::uint64_t init_seed(std::uint64_t seed) { return seed + 0x9e3779b97f4a7c15ull; }

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw IngestionError(p.string() + ": cannot open for writing");
  return os;
}

json epoch_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch},
              {"lr", r.lr},
              {"train_loss", maybe(r.train_loss)},
              {"val_metric", maybe(r.val_metric)},
              {"wall_ms", r.wall_ms}};
}

json final_json(const TrainReport& rep) {
  return json{{"best_epoch", rep.best_epoch ? json(*rep.best_epoch) : json(nullptr)},
              {"test_metric", maybe(rep.test_metric)}};
}

template <typename T>
void write_gradient_scale(const fs::path& p, const Model<T>& model, const SequenceSample& sample, LossKind kind) {
  const GradientScaleReport rep = gradient_scale_probe(model, sample, kind);
  auto os = open_out(p);
  os << "block,index,w,grad_abs,fprime_abs,ratio\n";
  for (const auto& r : rep.rows) {
    os << r.block << ',' << r.index << ',' << num(r.w) << ',' << num(r.grad_abs) << ',' << num(r.fprime_abs) << ','
       << num(r.ratio) << "\n";
  }
}

// Trains one model into dir: metrics.jsonl, summary.json, best.s7, final.s7,
// gradient_scale.csv.
template <typename T>
TrainReport run_training(const RunConfig& cfg, const DatasetSplits& data, const fs::path& dir, int threads,
                         std::ostream& err) {
  fs::create_directories(dir);
  const Model<T> init = init_model<T>(cfg.model, cfg.transition, init_seed(cfg.train.seed));
  auto metrics = open_out(dir / "metrics.jsonl");
  TrainOptions topt;
  topt.threads = threads;
  topt.record_wall_time = threads != 1;
  auto last = std::chrono::steady_clock::now();
  topt.on_epoch = [&](const EpochRecord& r) {
    metrics << epoch_json(r).dump() << "\n" << std::flush;
    const auto now = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(now - last).count();
    last = now;
    char line[160];
    std::snprintf(line, sizeof line, "epoch %zu  lr %.3g  train %.6g  val %.6g  (%.0f ms)\n", r.epoch, r.lr,
                  r.train_loss, r.val_metric, ms);
    err << line << std::flush;
  };
  TrainResult<T> res = train(init, data, cfg.train, topt);
  const TrainReport& rep = res.report;
  metrics << final_json(rep).dump() << "\n";

  json summary{{"best_epoch", rep.best_epoch ? json(*rep.best_epoch) : json(nullptr)},
               {"best_val", maybe(rep.best_val)},
               {"test_metric", maybe(rep.test_metric)},
               {"test_loss", maybe(rep.test_loss)},
               {"epochs_run", rep.epochs.size()},
               {"diverged", rep.diverged},
               {"diverged_epoch", rep.diverged_epoch ? json(*rep.diverged_epoch) : json(nullptr)},
               {"divergence", rep.divergence},
               {"parameters", init.parameter_count()},
               {"seed", cfg.train.seed},
               {"precision", cfg.train.precision}};
  auto os = open_out(dir / "summary.json");
  os << summary.dump(2) << "\n";

  save_checkpoint((dir / "best.s7").string(), res.best);
  save_checkpoint((dir / "final.s7").string(), res.last);
  if (!rep.diverged) write_gradient_scale(dir / "gradient_scale.csv", res.best, data.train.front(), cfg.train.loss);
  return rep;
}

TrainReport run_training_any(const RunConfig& cfg, const DatasetSplits& data, const fs::path& dir, int threads,
                             std::ostream& err) {
  return cfg.train.precision == 64 ? run_training<double>(cfg, data, dir, threads, err)
                                   : run_training<float>(cfg, data, dir, threads, err);
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
  } catch (const CheckpointVersionError& e) {
    err << "checkpoint version mismatch: found " << e.found << ", expected " << e.expected << "\n";
  } catch (const IngestionError& e) {
    err << "input error: " << e.what() << "\n";
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitUsage;
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_train(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_with_overrides(opt, false);
    const DatasetSplits data = build_dataset(cfg);
    const TrainReport rep = run_training_any(cfg, data, cfg.output_dir, opt.threads, err);
    out << final_json(rep).dump() << "\n";
    if (rep.diverged) out << "diverged at epoch " << *rep.diverged_epoch << ": " << rep.divergence << "\n";
    return int(kExitOk);
  });
}

int cmd_eval(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opt.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    RunConfig cfg = load_with_overrides(opt, false, false);
    std::ifstream is(opt.checkpoint);
    if (!is) throw IngestionError(opt.checkpoint + ": cannot open checkpoint");
    const CheckpointHeader h = read_checkpoint_header(is);
    const DatasetSplits data = build_dataset(cfg);
    EvalResult r;
    if (h.precision == 64) {
      r = evaluate(read_checkpoint_body<double>(is, h), data.test, cfg.train.loss, opt.threads);
    } else {
      r = evaluate(read_checkpoint_body<float>(is, h), data.test, cfg.train.loss, opt.threads);
    }
    out << json{{"test_metric", maybe(task_metric(r))}, {"test_loss", maybe(r.loss)}}.dump() << "\n";
    return int(kExitOk);
  });
}

// ---------------------------------------------------------------------------

namespace {

struct GradcheckCase {
  Model<double> model;
  SequenceSample sample;
  LossKind loss = LossKind::mse;
  std::string label;
};

// Case i covers flag combination i mod 16 (mod_B, mod_C, dt, loss); sizes,
// depth, reparam constants and data are random.
GradcheckCase make_case(std::size_t i, std::uint64_t seed) {
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(i)};
  std::mt19937_64 rng(sq);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };

  GradcheckCase c;
  ModelShape sh;
  sh.input_dep_B = (i & 1) != 0;
  sh.input_dep_C = (i & 2) != 0;
  const bool use_dt = (i & 4) != 0;
  c.loss = (i & 8) != 0 ? LossKind::cross_entropy : LossKind::mse;
  sh.m = pick(1, 8);
  sh.d = pick(1, 4);
  sh.depth = pick(1, 2);
  const std::size_t len = pick(1, 32);
  const bool tokens = c.loss == LossKind::cross_entropy && pick(0, 1) == 1;
  sh.input_width = tokens ? 6 : pick(1, 3);
  sh.output_width = c.loss == LossKind::cross_entropy ? pick(2, 4) : pick(1, 3);
  sh.readout = c.loss == LossKind::cross_entropy || pick(0, 1) == 1 ? Readout::pooled : Readout::per_step;

  TransitionSettings tr;
  tr.enabled = i % 5 != 4;
  tr.reparam.a = uni(0.5, 2.0);
  tr.reparam.b = uni(0.5, 1.0);
  tr.reparam.form = use_dt ? ReparamForm::continuous : ReparamForm::discrete;

  c.model = init_model<double>(sh, tr, rng());
  c.model.for_each_param([&](const std::string&, std::span<double> s, ParamGroup) {
    for (double& v : s) v += uni(-0.1, 0.1);
  });

  auto& smp = c.sample;
  smp.width = sh.input_width;
  if (tokens) {
    for (std::size_t k = 0; k < len; ++k) smp.tokens.push_back(static_cast<std::uint32_t>(pick(0, sh.input_width - 1)));
  } else {
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t k = 0; k < len * sh.input_width; ++k) smp.inputs.push_back(g(rng));
  }
  double t = 0.0;
  for (std::size_t k = 0; k < len; ++k) smp.timestamps.push_back(t += uni(0.2, 1.5));
  if (c.loss == LossKind::cross_entropy) {
    smp.target = ClassLabel{pick(0, sh.output_width - 1)};
  } else if (sh.readout == Readout::per_step) {
    StepTargets st{sh.output_width, {}};
    for (std::size_t k = 0; k < len * sh.output_width; ++k) st.values.push_back(uni(-1.0, 1.0));
    smp.target = st;
  } else {
    VectorTarget vt;
    for (std::size_t k = 0; k < sh.output_width; ++k) vt.values.push_back(uni(-1.0, 1.0));
    smp.target = vt;
  }

  char buf[160];
  std::snprintf(buf, sizeof buf, "m=%zu d=%zu depth=%zu len=%zu modB=%d modC=%d dt=%d loss=%s reparam=%s%s", sh.m, sh.d,
                sh.depth, len, int(sh.input_dep_B), int(sh.input_dep_C), int(use_dt),
                c.loss == LossKind::mse ? "mse" : "ce", tr.enabled ? "on" : "off", tokens ? " tokens" : "");
  c.label = buf;
  return c;
}

}  // namespace

int cmd_gradcheck(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opt.config.empty()) throw ConfigError("--config is required");
    GradcheckConfig cfg = load_gradcheck_config(opt.config);
    if (opt.seed) cfg.seed = *opt.seed;
    out << "gradcheck: " << cfg.configs << " configs, 64-bit analytic vs four-point central differences (h=" << num(cfg.h)
        << ")\n";

    std::map<std::string, double> worst;
    for (std::size_t i = 0; i < cfg.configs; ++i) {
      GradcheckCase c = make_case(i, cfg.seed);
      Model<double> analytic = c.model.zeros_like();
      ModelTrace<double> tr;
      loss_and_gradient<double>(c.model, c.sample, c.loss, analytic, tr);
      analytic.for_each_param([&](const std::string& name, std::span<double> s, ParamGroup) {
        if (!all_finite(std::span<const double>(s))) throw NumericError("non-finite analytic gradient in " + name);
        if (cfg.corrupt_family && param_family(name) == *cfg.corrupt_family) {
          for (double& v : s) v = v * (1.0 + 1e-3) + 1e-4;
        }
      });
      const Model<long double> wide = model_cast<long double>(c.model);
      const Model<double> numeric =
          model_cast<double>(finite_difference_gradients(wide, c.sample, c.loss, cfg.h, Stencil::four_point));
      const auto errs = worst_relative_error(analytic, numeric);
      double case_worst = 0.0;
      for (const auto& [family, e] : errs) {
        worst[family] = std::max(worst[family], e);
        case_worst = std::max(case_worst, e);
      }
      char line[256];
      std::snprintf(line, sizeof line, "  case %2zu  %-70s worst %.3e\n", i, c.label.c_str(), case_worst);
      out << line;
    }
    if (cfg.corrupt_family && !worst.count(*cfg.corrupt_family)) {
      throw ConfigError("gradcheck.corrupt_family: no parameter family named '" + *cfg.corrupt_family + "'");
    }

    bool pass = true;
    out << "worst relative error per parameter family:\n";
    for (const auto& [family, e] : worst) {
      const bool ok = e <= cfg.tolerance;
      pass = pass && ok;
      char line[128];
      std::snprintf(line, sizeof line, "  %-14s %.3e  %s\n", family.c_str(), e, ok ? "ok" : "FAIL");
      out << line;
    }
    out << (pass ? "PASS" : "FAIL") << " (tolerance " << num(cfg.tolerance) << ")\n";
    return pass ? int(kExitOk) : int(kExitCheckFailed);
  });
}

// ---------------------------------------------------------------------------

int cmd_ablate(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig base = load_with_overrides(opt, true);
    const DatasetSplits data = build_dataset(base);
    const fs::path dir = base.output_dir;
    fs::create_directories(dir);

    auto table = open_out(dir / "ablation.csv");
    const char* header = "variant,reparam,a,b,epochs_run,best_epoch,best_val,test_metric,diverged,diverged_epoch";
    table << header << "\n";
    out << header << "\n";
    for (std::size_t v = 0; v < base.ablation.size(); ++v) {
      const AblationVariant& var = base.ablation[v];
      RunConfig cfg = base;
      cfg.transition.enabled = var.enabled;
      cfg.transition.reparam.a = var.a;
      cfg.transition.reparam.b = var.b;
      err << "variant " << v << ": reparam " << (var.enabled ? "on" : "off") << " a=" << var.a << " b=" << var.b << "\n";
      const TrainReport rep = run_training_any(cfg, data, dir / ("variant_" + std::to_string(v)), opt.threads, err);
      std::string row = std::to_string(v) + "," + (var.enabled ? "on" : "off") + "," + num(var.a) + "," + num(var.b) +
                        "," + std::to_string(rep.epochs.size()) + "," +
                        (rep.best_epoch ? std::to_string(*rep.best_epoch) : "") + "," + num(rep.best_val) + "," +
                        num(rep.test_metric) + "," + (rep.diverged ? "1" : "0") + "," +
                        (rep.diverged_epoch ? std::to_string(*rep.diverged_epoch) : "");
      table << row << "\n" << std::flush;
      out << row << "\n" << std::flush;
    }

    // G_f(w) sweep per reparameterized variant, ready for plotting.
    auto sweep = open_out(dir / "gf_sweep.csv");
    sweep << "a,b,w,f_discrete,f_continuous,fprime,G_f\n";
    for (const auto& var : base.ablation) {
      if (!var.enabled) continue;
      for (int i = 0; i <= 1000; ++i) {
        const double w = -5.0 + 0.01 * i;
        const double fc = reparam::value(w, var.a, var.b, ReparamForm::continuous);
        const double fp = reparam::derivative(w, var.a, var.b);
        sweep << num(var.a) << ',' << num(var.b) << ',' << num(w) << ','
              << num(reparam::value(w, var.a, var.b, ReparamForm::discrete)) << ',' << num(fc) << ',' << num(fp) << ','
              << num(std::abs(fp) / (fc * fc)) << "\n";
      }
    }
    return int(kExitOk);
  });
}

// ---------------------------------------------------------------------------

int cmd_tokenize(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opt.input.empty()) throw ConfigError("--input is required");
    unsigned sx = 0, sy = 0;
    char tail = 0;
    if (std::sscanf(opt.sensor.c_str(), "%ux%u%c", &sx, &sy, &tail) != 2 || sx == 0 || sy == 0) {
      throw ConfigError("--sensor: expected <s_x>x<s_y>, got '" + opt.sensor + "'");
    }
    const SensorSize sensor{sx, sy};
    const auto events = load_events_csv(opt.input, sensor);
    for (std::size_t k = 0; k < events.size(); ++k) {
      const double dt = k == 0 ? 0.0 : static_cast<double>(events[k].t - events[k - 1].t) / 1e6;
      out << tokenize_event(events[k], sensor) << ',' << num(dt) << "\n";
    }
    return int(kExitOk);
  });
}

}  // namespace s7
