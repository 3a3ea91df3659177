#pragma once

// Strict JSON run configuration. Every key is required and unknown keys are
// rejected; errors name the offending field path.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "s7/layer.hpp"
#include "s7/optim.hpp"
#include "s7/tasks.hpp"

namespace s7 {

inline constexpr int kConfigSchemaVersion = 1;

enum class TaskKind { fhn, adding, events, csv };

struct CsvTaskConfig {
  std::string path;
  SequenceCsvSchema schema;
};

struct TaskConfig {
  TaskKind kind = TaskKind::fhn;
  FhnConfig fhn;
  std::size_t adding_length = 200;
  std::size_t adding_samples = 2000;
  EventStreamConfig events;
  CsvTaskConfig csv;
};

struct AblationVariant {
  bool enabled = true;
  double a = 1.0;
  double b = 0.5;
};

struct RunConfig {
  TaskConfig task;
  ModelShape model;  // input/output widths derived from the task
  TransitionSettings transition;
  TrainConfig train;
  std::string data_dir;    // generated datasets are cached here when non-empty
  std::string output_dir;
  std::vector<AblationVariant> ablation;  // only for the ablate command
};

struct GradcheckConfig {
  std::size_t configs = 24;
  std::uint64_t seed = 1;
  double h = 1e-5;
  double tolerance = 1e-5;
  std::optional<std::string> corrupt_family;  // negative-control hook
};

// require_ablation: the ablate command needs an "ablation" section, every
// other command forbids it.
RunConfig parse_run_config(const nlohmann::json& j, bool require_ablation = false);
RunConfig load_run_config(const std::string& path, bool require_ablation = false);

GradcheckConfig parse_gradcheck_config(const nlohmann::json& j);
GradcheckConfig load_gradcheck_config(const std::string& path);

// Dataset described by the task section (generated or loaded).
DatasetSplits build_dataset(const RunConfig& cfg);

}  // namespace s7
