// Acceptance runner: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "s7/commands.hpp"
#include "s7/config.hpp"
#include "s7/gradcheck.hpp"
#include "s7/layer.hpp"
#include "s7/reparam.hpp"
#include "s7/tasks.hpp"

using namespace s7;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path kSource = S7_SOURCE_DIR;
const fs::path kWork = fs::current_path() / "acceptance_runs";

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

double num(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

// random model with perturbed parameters and a matching sample
struct Case {
  Model<double> model;
  SequenceSample sample;
  LossKind loss;
};

Case random_case(std::uint64_t seed, bool mod, bool use_dt, LossKind loss, std::size_t m, std::size_t d,
                 std::size_t depth, std::size_t len) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  ModelShape sh;
  sh.m = m;
  sh.d = d;
  sh.depth = depth;
  sh.input_width = 2;
  sh.output_width = loss == LossKind::cross_entropy ? 3 : 2;
  sh.input_dep_B = sh.input_dep_C = mod;
  sh.readout = loss == LossKind::cross_entropy ? Readout::pooled : Readout::per_step;
  const TransitionSettings ts{true, {1.0, 0.5, use_dt ? ReparamForm::continuous : ReparamForm::discrete}};
  Case c{init_model<double>(sh, ts, seed), {}, loss};
  c.model.for_each_param([&](const std::string&, std::span<double> s, ParamGroup) {
    for (double& v : s) v += 0.1 * u(rng);
  });
  c.sample.width = 2;
  for (std::size_t k = 0; k < 2 * len; ++k) c.sample.inputs.push_back(u(rng));
  if (use_dt) {
    double t = 0;
    for (std::size_t k = 0; k < len; ++k) c.sample.timestamps.push_back(t += 0.1 + (u(rng) + 1));
  }
  if (loss == LossKind::cross_entropy) {
    c.sample.target = ClassLabel{seed % 3};
  } else {
    StepTargets st{2, {}};
    for (std::size_t k = 0; k < 2 * len; ++k) st.values.push_back(u(rng));
    c.sample.target = st;
  }
  return c;
}

Outcome gradient_oracle() {
  CommandOptions opt;
  opt.config = (kSource / "configs" / "gradcheck.json").string();
  std::ostringstream out, err;
  const auto t0 = Clock::now();
  const int rc = cmd_gradcheck(opt, out, err);
  const double secs = seconds_since(t0);
  const json cfg = read_json(opt.config);
  const auto n = cfg["gradcheck"]["configs"].get<std::size_t>();
  const double tol = cfg["gradcheck"]["tolerance"].get<double>();
  double worst = 0;
  std::istringstream lines(out.str());
  std::string line;
  bool families = false;
  std::size_t n_families = 0;
  while (std::getline(lines, line)) {
    if (line.rfind("worst relative error per parameter family", 0) == 0) families = true;
    if (!families || line.rfind("  ", 0) != 0) continue;
    ++n_families;
    std::istringstream ls(line);
    std::string fam;
    double e = 0;
    if (ls >> fam >> e) worst = std::max(worst, e);
  }
  const bool pass = rc == 0 && n >= 20 && tol <= 1e-5 && worst <= 1e-5 && secs <= 300.0;
  return {pass, std::to_string(n) + " configs, " + std::to_string(n_families) + " families, worst relative error " + fmt("%.3g", worst) + " (tol 1e-5), " +
                    fmt("%.2f", secs) + " s" + (rc == 0 ? "" : ", gradcheck exit " + std::to_string(rc))};
}

Outcome chain_rule() {
  double worst = 0;
  std::size_t rows = 0, bad_rows = 0;
  std::uint64_t seed = 1000;
  for (bool mod : {false, true}) {
    for (bool dt : {false, true}) {
      for (auto loss : {LossKind::mse, LossKind::cross_entropy}) {
        for (std::size_t depth : {1, 2}) {
          const Case c = random_case(++seed, mod, dt, loss, 8, 4, depth, 32);
          const auto rep = gradient_scale_probe(c.model, c.sample, c.loss);
          worst = std::max(worst, rep.chain_rule_residual);
          for (const auto& r : rep.rows) {
            ++rows;
            if (r.fprime_abs != 0.0 && !std::isfinite(r.ratio)) ++bad_rows;
          }
        }
      }
    }
  }
  return {worst <= 1e-12 && bad_rows == 0,
          "max residual " + fmt("%.3g", worst) + " (tol 1e-12), " + std::to_string(rows) + " ratio rows, " +
              std::to_string(bad_rows) + " non-finite"};
}

Outcome stability() {
  const auto t0 = Clock::now();
  const std::size_t n = 1000000;
  std::size_t bad_disc = 0, bad_cont = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = -100.0 + 200.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    if (!(std::abs(reparam::value(w, 1.0, 0.5, ReparamForm::discrete)) <= 1.0)) ++bad_disc;
    if (!(reparam::value(w, 1.0, 0.5, ReparamForm::continuous) < 0.0)) ++bad_cont;
  }
  std::size_t rollouts = 0, nonfinite = 0;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1, 1);
  for (bool mod : {false, true}) {
    for (bool dt : {false, true}) {
      Case c = random_case(500 + rollouts, mod, dt, LossKind::mse, 16, 4, 2, 10000);
      for (double& x : c.sample.inputs) x = u(rng);
      ModelTrace<double> tr;
      const auto out = stack_forward(c.model, c.sample, tr);
      ++rollouts;
      bool ok = all_finite<double>(out);
      for (const auto& b : tr.blocks) ok = ok && all_finite<double>(b.x);
      if (!ok) ++nonfinite;
    }
  }
  const double secs = seconds_since(t0);
  return {bad_disc == 0 && bad_cont == 0 && nonfinite == 0 && secs <= 120.0,
          "sweep violations discrete " + std::to_string(bad_disc) + ", continuous " + std::to_string(bad_cont) + "; " +
              std::to_string(rollouts) + " rollouts of 10000 steps, " + std::to_string(nonfinite) +
              " non-finite; " + fmt("%.2f", secs) + " s"};
}

Outcome gf_identity() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-10, 10);
  const ReparamConfig cont{1.0, 0.5, ReparamForm::continuous};
  double worst = 0;
  for (int i = 0; i < 100000; ++i) {
    const double w = u(rng);
    worst = std::max(worst, std::abs(gradient_over_weight_ratio(w, cont) - 2.0 * std::abs(w)));
  }
  return {worst <= 1e-12, "max deviation " + fmt("%.3g", worst) + " over 1e5 points (tol 1e-12)"};
}

Outcome tokenizer() {
  const auto t0 = Clock::now();
  const SensorSize s{128, 128};
  std::vector<char> seen(vocabulary_size(s), 0);
  std::size_t dup = 0, out_of_range = 0, bad_round = 0, count = 0;
  for (std::uint32_t x = 0; x < s.width; ++x) {
    for (std::uint32_t y = 0; y < s.height; ++y) {
      for (int p : {-1, 1}) {
        ++count;
        const auto tok = tokenize_event({x, y, 0, p}, s);
        if (tok >= seen.size()) {
          ++out_of_range;
          continue;
        }
        if (seen[tok]) ++dup;
        seen[tok] = 1;
        const auto back = detokenize(tok, s);
        if (back.x != x || back.y != y || back.p != p) ++bad_round;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {count == 32768 && dup == 0 && out_of_range == 0 && bad_round == 0 && secs <= 1.0,
          std::to_string(count) + " triples, " + std::to_string(dup) + " collisions, " +
              std::to_string(bad_round) + " round-trip mismatches, " + fmt("%.3f", secs) + " s"};
}

Outcome event_pooling() {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1, 1), gap(0.1, 2.0);
  double worst = 0;
  std::size_t windows = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t d = 1 + trial % 4, m = 1 + (trial / 4) % 8, p = 1 + trial % 8;
    const bool use_dt = (trial / 8) % 2 == 1;
    const bool mod = (trial / 16) % 2 == 1;
    const Case c = random_case(3000 + trial, mod, use_dt, LossKind::mse, m, d, 1, 1);
    const auto& blk = c.model.blocks[0];
    const auto& s = c.model.transition;
    std::vector<StepInput<double>> win;
    for (std::size_t i = 0; i < p; ++i) {
      Vec<double> z(d);
      for (auto& v : z) v = u(rng);
      win.push_back({z, use_dt ? std::optional(gap(rng)) : std::nullopt});
    }
    Vec<double> x0(m);
    for (auto& v : x0) v = u(rng);
    const auto pooled = event_pool<double>(HiddenState<double>{x0}, win, blk, s);

    // sequential stepping with lam frozen at the first event and plain B
    const Vec<double> wk = modulate<double>(blk, win[0].u);
    Vec<double> lam(m), dlam(m);
    detail::transition_into<double>(wk, win[0].dt, s, lam, dlam);
    Vec<double> x = x0;
    for (const auto& in : win) {
      for (std::size_t j = 0; j < m; ++j) {
        double bu = 0;
        for (std::size_t i = 0; i < d; ++i) bu += blk.B.data[j * d + i] * in.u[i];
        x[j] = lam[j] * x[j] + bu;
      }
    }
    for (std::size_t j = 0; j < m; ++j) worst = std::max(worst, std::abs(x[j] - pooled.x[j]));
    ++windows;
  }
  return {worst <= 1e-10,
          std::to_string(windows) + " windows, p in 1..8, max deviation " + fmt("%.3g", worst) + " (tol 1e-10)"};
}

struct RunResult {
  int rc = -1;
  double secs = 0;
  json summary;
  std::string err;
};

RunResult train_run(const fs::path& config, const fs::path& out_dir) {
  fs::remove_all(out_dir);
  CommandOptions opt;
  opt.config = config.string();
  opt.out = out_dir.string();
  opt.threads = 1;
  std::ostringstream out, err;
  const auto t0 = Clock::now();
  RunResult r;
  r.rc = cmd_train(opt, out, err);
  r.secs = seconds_since(t0);
  if (r.rc == 0) r.summary = read_json(out_dir / "summary.json");
  const std::string e = err.str();
  const auto cut = e.rfind('\n', e.size() > 1 ? e.size() - 2 : 0);
  r.err = cut == std::string::npos ? e : e.substr(cut + 1);
  return r;
}

Outcome fhn_desk() {
  const fs::path cfg_path = kSource / "configs" / "fhn.json";
  const RunConfig cfg = load_run_config(cfg_path.string(), false);
  const RunResult r = train_run(cfg_path, kWork / "fhn");
  if (r.rc != 0) return {false, "train exit " + std::to_string(r.rc) + ": " + r.err};
  const double test = num(r.summary["test_metric"]);
  const auto params = r.summary["parameters"].get<std::size_t>();
  const auto& f = cfg.task.fhn;
  const bool shape_ok = cfg.model.depth == 1 && cfg.model.m == 16 && f.n_train == 128 && f.n_val == 32 &&
                        f.n_test == 32 && f.length == 1000 && cfg.train.epochs <= 300;
  return {shape_ok && !r.summary["diverged"].get<bool>() && test <= 1e-3 && params <= 5000 && r.secs <= 1800.0,
          "test L2 " + fmt("%.4g", test) + " (tol 1e-3), " + std::to_string(params) + " params, " +
              std::to_string(cfg.train.epochs) + " epochs, " + fmt("%.1f", r.secs) + " s"};
}

Outcome adding() {
  const fs::path cfg_path = kSource / "configs" / "adding.json";
  const RunConfig cfg = load_run_config(cfg_path.string(), false);
  const RunResult r = train_run(cfg_path, kWork / "adding");
  if (r.rc != 0) return {false, "train exit " + std::to_string(r.rc) + ": " + r.err};
  const double test = num(r.summary["test_metric"]);
  const bool shape_ok = cfg.task.adding_length == 200 && cfg.task.adding_samples == 2000;
  return {shape_ok && test <= 0.01 && r.secs <= 900.0,
          "test MSE " + fmt("%.4g", test) + " (tol 0.01, baseline 1/6), " + fmt("%.1f", r.secs) + " s"};
}

Outcome ablation() {
  const fs::path cfg_path = kSource / "configs" / "ablate_fhn.json";
  const RunConfig cfg = load_run_config(cfg_path.string(), true);
  const fs::path out_dir = kWork / "ablate_fhn";
  fs::remove_all(out_dir);
  CommandOptions opt;
  opt.config = cfg_path.string();
  opt.out = out_dir.string();
  opt.threads = 1;
  std::ostringstream out, err;
  const auto t0 = Clock::now();
  const int rc = cmd_ablate(opt, out, err);
  const double secs = seconds_since(t0);
  if (rc != 0) return {false, "ablate exit " + std::to_string(rc)};

  std::istringstream table(slurp(out_dir / "ablation.csv"));
  std::string line;
  std::getline(table, line);
  std::vector<json> rows;
  for (std::size_t v = 0; std::getline(table, line); ++v) rows.push_back(read_json(out_dir / ("variant_" + std::to_string(v)) / "summary.json"));
  if (rows.size() != cfg.ablation.size()) return {false, "table has " + std::to_string(rows.size()) + " rows"};

  const json* ref = nullptr;
  const json* off = nullptr;
  std::size_t grid = 0, grid_done = 0;
  for (std::size_t v = 0; v < rows.size(); ++v) {
    const auto& var = cfg.ablation[v];
    if (!var.enabled) {
      off = &rows[v];
      continue;
    }
    ++grid;
    if (!rows[v]["diverged"].get<bool>() && rows[v]["epochs_run"].get<std::size_t>() == cfg.train.epochs) ++grid_done;
    if (var.a == 1.0 && var.b == 0.5) ref = &rows[v];
  }
  if (!ref || !off) return {false, "grid lacks the (1, 0.5) or the disabled variant"};
  const bool ref_ok = !(*ref)["diverged"].get<bool>() && (*ref)["epochs_run"].get<std::size_t>() == cfg.train.epochs;
  const double ref_val = num((*ref)["best_val"]);
  const bool off_div = (*off)["diverged"].get<bool>();
  const double off_val = num((*off)["best_val"]);
  const bool direction = off_div || ref_val <= off_val;
  std::string detail = "(1, 0.5) best val " + fmt("%.4g", ref_val) + ", disabled ";
  detail += off_div ? "diverged at epoch " + std::to_string((*off)["diverged_epoch"].get<std::size_t>())
                    : "best val " + fmt("%.4g", off_val);
  detail += "; grid " + std::to_string(grid_done) + "/" + std::to_string(grid) + " complete, " + fmt("%.1f", secs) + " s";
  return {ref_ok && direction && grid >= 3 && grid_done == grid, detail};
}

Outcome determinism() {
  const fs::path first = kWork / "adding";
  if (!fs::exists(first / "metrics.jsonl")) {
    const RunResult r = train_run(kSource / "configs" / "adding.json", first);
    if (r.rc != 0) return {false, "train exit " + std::to_string(r.rc)};
  }
  const RunResult r = train_run(kSource / "configs" / "adding.json", kWork / "adding_rerun");
  if (r.rc != 0) return {false, "rerun exit " + std::to_string(r.rc)};
  std::string detail;
  bool same = true;
  for (const char* f : {"metrics.jsonl", "summary.json", "gradient_scale.csv", "best.s7"}) {
    const bool eq = slurp(first / f) == slurp(kWork / "adding_rerun" / f);
    same = same && eq;
    detail += std::string(f) + (eq ? " identical, " : " DIFFERS, ");
  }
  CommandOptions gc;
  gc.config = (kSource / "configs" / "gradcheck.json").string();
  std::ostringstream a, b, err;
  cmd_gradcheck(gc, a, err);
  cmd_gradcheck(gc, b, err);
  const bool gc_same = a.str() == b.str();
  detail += std::string("gradcheck report ") + (gc_same ? "identical" : "DIFFERS");
  return {same && gc_same, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"chain-rule factorization of dLoss/dw", chain_rule},
      {"stability sweep and long rollouts", stability},
      {"gradient-over-weight identity", gf_identity},
      {"tokenizer bijectivity", tokenizer},
      {"event pooling equivalence", event_pooling},
      {"FHN desk experiment", fhn_desk},
      {"adding problem", adding},
      {"reparameterization ablation", ablation},
      {"determinism at one thread", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  fs::create_directories(kWork);

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
