#include "s7/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "s7/errors.hpp"

namespace s7 {

namespace {

using nlohmann::json;

// Checks that object j at `path` has exactly the given keys.
void expect_keys(const json& j, const std::string& path, const std::vector<std::string>& keys) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(path + "." + k + ": unknown key");
  }
  for (const auto& k : keys) {
    if (!j.contains(k)) throw ConfigError(path + "." + k + ": missing key");
  }
}

double get_real(const json& j, const std::string& path, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(path + "." + key + ": expected a number");
  return v.get<double>();
}

std::size_t get_count(const json& j, const std::string& path, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ConfigError(path + "." + key + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

bool get_bool(const json& j, const std::string& path, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(path + "." + key + ": expected true or false");
  return v.get<bool>();
}

std::string get_string(const json& j, const std::string& path, const std::string& key) {
  const auto& v = j.at(key);
  if (!v.is_string()) throw ConfigError(path + "." + key + ": expected a string");
  return v.get<std::string>();
}

template <typename F>
void rethrow_as_config(const std::string& path, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot open config");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void check_schema_version(const json& j) {
  const auto& v = j.at("schema_version");
  if (!v.is_number_integer() || v.get<int>() != kConfigSchemaVersion) {
    throw ConfigError("schema_version: expected " + std::to_string(kConfigSchemaVersion));
  }
}

TaskConfig parse_task(const json& j) {
  TaskConfig t;
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("task.kind: missing key");
  const std::string kind = get_string(j, "task", "kind");
  if (kind == "fhn") {
    t.kind = TaskKind::fhn;
    expect_keys(j, "task", {"kind", "fhn"});
    const json& f = j.at("fhn");
    const std::string p = "task.fhn";
    expect_keys(f, p, {"eps", "a", "b", "I_ext", "dt_sim", "sample_every", "length", "n_train", "n_val", "n_test"});
    t.fhn.eps = get_real(f, p, "eps");
    t.fhn.a = get_real(f, p, "a");
    t.fhn.b = get_real(f, p, "b");
    t.fhn.I_ext = get_real(f, p, "I_ext");
    t.fhn.dt_sim = get_real(f, p, "dt_sim");
    t.fhn.sample_every = get_count(f, p, "sample_every");
    t.fhn.length = get_count(f, p, "length");
    t.fhn.n_train = get_count(f, p, "n_train");
    t.fhn.n_val = get_count(f, p, "n_val");
    t.fhn.n_test = get_count(f, p, "n_test");
    rethrow_as_config(p, [&] { t.fhn.validate(); });
  } else if (kind == "adding") {
    t.kind = TaskKind::adding;
    expect_keys(j, "task", {"kind", "adding"});
    const json& a = j.at("adding");
    expect_keys(a, "task.adding", {"length", "n_samples"});
    t.adding_length = get_count(a, "task.adding", "length");
    t.adding_samples = get_count(a, "task.adding", "n_samples");
    if (t.adding_length < 2) throw ConfigError("task.adding.length: must be >= 2");
  } else if (kind == "events") {
    t.kind = TaskKind::events;
    expect_keys(j, "task", {"kind", "events"});
    const json& e = j.at("events");
    const std::string p = "task.events";
    expect_keys(e, p, {"n_classes", "sensor_x", "sensor_y", "events_per_stream", "n_train", "n_val", "n_test",
                       "mean_gap_us", "noise_px"});
    t.events.n_classes = get_count(e, p, "n_classes");
    t.events.sensor = SensorSize{static_cast<std::uint32_t>(get_count(e, p, "sensor_x")),
                                 static_cast<std::uint32_t>(get_count(e, p, "sensor_y"))};
    t.events.events_per_stream = get_count(e, p, "events_per_stream");
    t.events.n_train = get_count(e, p, "n_train");
    t.events.n_val = get_count(e, p, "n_val");
    t.events.n_test = get_count(e, p, "n_test");
    t.events.mean_gap_us = get_real(e, p, "mean_gap_us");
    t.events.noise_px = get_real(e, p, "noise_px");
    rethrow_as_config(p, [&] { t.events.validate(); });
  } else if (kind == "csv") {
    t.kind = TaskKind::csv;
    expect_keys(j, "task", {"kind", "csv"});
    const json& c = j.at("csv");
    expect_keys(c, "task.csv", {"path", "features", "targets"});
    t.csv.path = get_string(c, "task.csv", "path");
    t.csv.schema.features = get_count(c, "task.csv", "features");
    t.csv.schema.targets = get_count(c, "task.csv", "targets");
    if (t.csv.schema.features == 0 || t.csv.schema.targets == 0) throw ConfigError("task.csv: features and targets must be >= 1");
  } else {
    throw ConfigError("task.kind: expected fhn, adding, events or csv, got '" + kind + "'");
  }
  return t;
}

}  // namespace

RunConfig parse_run_config(const json& j, bool require_ablation) {
  std::vector<std::string> top{"schema_version", "task", "model", "reparam", "train", "paths"};
  if (require_ablation) top.push_back("ablation");
  expect_keys(j, "config", top);
  check_schema_version(j);

  RunConfig cfg;
  cfg.task = parse_task(j.at("task"));

  const json& m = j.at("model");
  expect_keys(m, "model", {"depth", "d", "m", "input_dep_B", "input_dep_C", "readout"});
  cfg.model.depth = get_count(m, "model", "depth");
  cfg.model.d = get_count(m, "model", "d");
  cfg.model.m = get_count(m, "model", "m");
  cfg.model.input_dep_B = get_bool(m, "model", "input_dep_B");
  cfg.model.input_dep_C = get_bool(m, "model", "input_dep_C");
  const std::string readout = get_string(m, "model", "readout");
  if (readout == "per_step") cfg.model.readout = Readout::per_step;
  else if (readout == "pooled") cfg.model.readout = Readout::pooled;
  else throw ConfigError("model.readout: expected per_step or pooled");
  if (cfg.model.d == 0) throw ConfigError("model.d: must be >= 1");
  if (cfg.model.m == 0) throw ConfigError("model.m: must be >= 1");

  const json& r = j.at("reparam");
  expect_keys(r, "reparam", {"enabled", "a", "b", "form"});
  cfg.transition.enabled = get_bool(r, "reparam", "enabled");
  cfg.transition.reparam.a = get_real(r, "reparam", "a");
  cfg.transition.reparam.b = get_real(r, "reparam", "b");
  const std::string form = get_string(r, "reparam", "form");
  if (form == "discrete") cfg.transition.reparam.form = ReparamForm::discrete;
  else if (form == "continuous") cfg.transition.reparam.form = ReparamForm::continuous;
  else throw ConfigError("reparam.form: expected discrete or continuous");
  rethrow_as_config("reparam", [&] { cfg.transition.reparam.validate(); });

  const json& t = j.at("train");
  const std::string p = "train";
  expect_keys(t, p, {"base_lr", "ssm_lr", "wd_dense_inputdep", "wd_ssm", "wd_other", "epochs", "batch_size", "seed",
                     "loss", "precision"});
  cfg.train.base_lr = get_real(t, p, "base_lr");
  cfg.train.ssm_lr = get_real(t, p, "ssm_lr");
  cfg.train.wd_dense_inputdep = get_real(t, p, "wd_dense_inputdep");
  cfg.train.wd_ssm = get_real(t, p, "wd_ssm");
  cfg.train.wd_other = get_real(t, p, "wd_other");
  cfg.train.epochs = get_count(t, p, "epochs");
  if (cfg.train.epochs < 1) throw ConfigError("train.epochs: must be >= 1");
  cfg.train.batch_size = get_count(t, p, "batch_size");
  cfg.train.seed = get_count(t, p, "seed");
  const std::string loss = get_string(t, p, "loss");
  if (loss == "mse") cfg.train.loss = LossKind::mse;
  else if (loss == "cross_entropy") cfg.train.loss = LossKind::cross_entropy;
  else throw ConfigError("train.loss: expected mse or cross_entropy");
  cfg.train.precision = static_cast<int>(get_count(t, p, "precision"));
  rethrow_as_config("train", [&] { cfg.train.validate(); });

  const json& paths = j.at("paths");
  expect_keys(paths, "paths", {"data", "output"});
  cfg.data_dir = get_string(paths, "paths", "data");
  cfg.output_dir = get_string(paths, "paths", "output");

  // Task-derived widths and consistency.
  switch (cfg.task.kind) {
    case TaskKind::fhn:
      cfg.model.input_width = 2;
      cfg.model.output_width = 2;
      break;
    case TaskKind::adding:
      cfg.model.input_width = 2;
      cfg.model.output_width = 1;
      break;
    case TaskKind::events:
      cfg.model.input_width = static_cast<std::size_t>(vocabulary_size(cfg.task.events.sensor));
      cfg.model.output_width = cfg.task.events.n_classes;
      break;
    case TaskKind::csv:
      cfg.model.input_width = cfg.task.csv.schema.features;
      cfg.model.output_width = cfg.task.csv.schema.targets;
      break;
  }
  const bool classification = cfg.task.kind == TaskKind::events;
  const bool per_step = cfg.task.kind == TaskKind::fhn || cfg.task.kind == TaskKind::csv;
  if (classification != (cfg.train.loss == LossKind::cross_entropy)) {
    throw ConfigError(std::string("train.loss: task needs ") + (classification ? "cross_entropy" : "mse"));
  }
  if (per_step != (cfg.model.readout == Readout::per_step)) {
    throw ConfigError(std::string("model.readout: task needs ") + (per_step ? "per_step" : "pooled"));
  }

  if (require_ablation) {
    const json& a = j.at("ablation");
    expect_keys(a, "ablation", {"variants"});
    const json& vs = a.at("variants");
    if (!vs.is_array() || vs.empty()) throw ConfigError("ablation.variants: expected a non-empty array");
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const std::string vp = "ablation.variants[" + std::to_string(i) + "]";
      expect_keys(vs[i], vp, {"enabled", "a", "b"});
      AblationVariant v{get_bool(vs[i], vp, "enabled"), get_real(vs[i], vp, "a"), get_real(vs[i], vp, "b")};
      rethrow_as_config(vp, [&] { ReparamConfig{v.a, v.b, ReparamForm::discrete}.validate(); });
      cfg.ablation.push_back(v);
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path, bool require_ablation) {
  return parse_run_config(read_json(path), require_ablation);
}

GradcheckConfig parse_gradcheck_config(const json& j) {
  expect_keys(j, "config", {"schema_version", "gradcheck"});
  check_schema_version(j);
  const json& g = j.at("gradcheck");
  expect_keys(g, "gradcheck", {"configs", "seed", "h", "tolerance", "corrupt_family"});
  GradcheckConfig cfg;
  cfg.configs = get_count(g, "gradcheck", "configs");
  cfg.seed = get_count(g, "gradcheck", "seed");
  cfg.h = get_real(g, "gradcheck", "h");
  cfg.tolerance = get_real(g, "gradcheck", "tolerance");
  if (!g.at("corrupt_family").is_null()) cfg.corrupt_family = get_string(g, "gradcheck", "corrupt_family");
  if (cfg.configs < 1) throw ConfigError("gradcheck.configs: must be >= 1");
  if (!(cfg.h >= 1e-7 && cfg.h <= 1e-3)) throw ConfigError("gradcheck.h: must lie in [1e-7, 1e-3]");
  return cfg;
}

GradcheckConfig load_gradcheck_config(const std::string& path) { return parse_gradcheck_config(read_json(path)); }

DatasetSplits build_dataset(const RunConfig& cfg) {
  const std::uint64_t seed = cfg.train.seed;
  switch (cfg.task.kind) {
    case TaskKind::fhn: {
      DatasetSplits data = fhn_generate(cfg.task.fhn, seed);
      if (!cfg.data_dir.empty()) {
        std::filesystem::create_directories(cfg.data_dir);
        const std::pair<const char*, const std::vector<SequenceSample>*> parts[] = {
            {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
        for (const auto& [name, samples] : parts) {
          std::ofstream os(std::filesystem::path(cfg.data_dir) / ("fhn_" + std::string(name) + ".csv"));
          write_sequence_csv(os, *samples);
        }
      }
      return data;
    }
    case TaskKind::adding:
      return adding_problem_generate(cfg.task.adding_length, cfg.task.adding_samples, seed);
    case TaskKind::events:
      return event_stream_synthesize(cfg.task.events, seed);
    case TaskKind::csv:
      return load_sequence_csv(cfg.task.csv.path, cfg.task.csv.schema);
  }
  return {};
}

}  // namespace s7
