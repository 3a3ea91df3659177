#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "s7/errors.hpp"

namespace s7 {

// Per-step regression targets, len x width row-major.
struct StepTargets {
  std::size_t width = 0;
  std::vector<double> values;
};

struct ClassLabel {
  std::size_t index = 0;
};

// One regression target for the whole sequence.
struct VectorTarget {
  std::vector<double> values;
};

using Target = std::variant<StepTargets, ClassLabel, VectorTarget>;

// One training example. Inputs are either dense feature rows or token ids
// (width is then the vocabulary size); timestamps are seconds.
struct SequenceSample {
  std::size_t width = 0;
  std::vector<double> inputs;
  std::vector<std::uint32_t> tokens;
  std::vector<double> timestamps;
  Target target;

  bool tokenized() const { return !tokens.empty(); }

  std::size_t length() const { return tokenized() ? tokens.size() : (width == 0 ? 0 : inputs.size() / width); }

  // dt_k = t_k - t_{k-1}; the first step reuses the first gap, and a single
  // step sequence gets dt = 1. Empty when no timestamps are attached.
  std::vector<double> intervals() const {
    std::vector<double> dt;
    if (timestamps.empty()) return dt;
    const std::size_t n = timestamps.size();
    dt.resize(n);
    for (std::size_t k = 1; k < n; ++k) dt[k] = timestamps[k] - timestamps[k - 1];
    dt[0] = n > 1 ? dt[1] : 1.0;
    return dt;
  }

  void validate() const {
    const std::size_t len = length();
    if (!tokenized() && width > 0 && inputs.size() % width != 0) {
      throw ShapeError("sample: input buffer of " + std::to_string(inputs.size()) + " values is not a multiple of width " +
                       std::to_string(width));
    }
    if (!timestamps.empty() && timestamps.size() != len) {
      throw ShapeError("sample: " + std::to_string(timestamps.size()) + " timestamps for " + std::to_string(len) +
                       " steps");
    }
    for (std::size_t k = 1; k < timestamps.size(); ++k) {
      if (!(timestamps[k] > timestamps[k - 1])) {
        throw ArgumentError("sample: timestamps not strictly increasing at step " + std::to_string(k));
      }
    }
    if (const auto* st = std::get_if<StepTargets>(&target)) {
      if (st->values.size() != st->width * len) {
        throw ShapeError("sample: per-step target has " + std::to_string(st->values.size()) + " values, expected " +
                         std::to_string(st->width) + "x" + std::to_string(len));
      }
    }
  }
};

struct DatasetSplits {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> val;
  std::vector<SequenceSample> test;
};

}  // namespace s7
