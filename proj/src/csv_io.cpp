#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "s7/errors.hpp"
#include "s7/tasks.hpp"

namespace s7 {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ' && c != '\t') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void fail(const std::string& path, std::size_t line, const std::string& msg) {
  throw IngestionError(path + ":" + std::to_string(line) + ": " + msg);
}

double parse_real(const std::string& tok, const std::string& path, std::size_t line, const std::string& column) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || *end != '\0' || !std::isfinite(v)) fail(path, line, "column " + column + ": bad number '" + tok + "'");
  return v;
}

std::int64_t parse_int(const std::string& tok, const std::string& path, std::size_t line, const std::string& column) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size()) {
    fail(path, line, "column " + column + ": bad integer '" + tok + "'");
  }
  return v;
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError(path + ": cannot open file");
  return is;
}

}  // namespace

DatasetSplits load_sequence_csv(const std::string& path, const SequenceCsvSchema& schema) {
  auto is = open_or_throw(path);
  std::string line;
  if (!std::getline(is, line)) fail(path, 1, "missing header");
  {
    std::vector<std::string> expected{"seq", "t"};
    for (std::size_t i = 1; i <= schema.features; ++i) expected.push_back("f" + std::to_string(i));
    for (std::size_t i = 1; i <= schema.targets; ++i) expected.push_back("target" + std::to_string(i));
    if (split_fields(line) != expected) {
      std::string want;
      for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
      fail(path, 1, "header must be '" + want + "'");
    }
  }
  const std::size_t cols = 2 + schema.features + schema.targets;

  std::vector<SequenceSample> seqs;
  std::vector<std::int64_t> ids;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_fields(line);
    if (f.size() != cols) fail(path, lineno, "expected " + std::to_string(cols) + " fields, found " + std::to_string(f.size()));
    const std::int64_t id = parse_int(f[0], path, lineno, "seq");
    const double t = parse_real(f[1], path, lineno, "t");
    if (ids.empty() || ids.back() != id) {
      for (auto prev : ids) {
        if (prev == id) fail(path, lineno, "rows of sequence " + std::to_string(id) + " are not contiguous");
      }
      ids.push_back(id);
      SequenceSample s;
      s.width = schema.features;
      s.target = StepTargets{schema.targets, {}};
      seqs.push_back(std::move(s));
    }
    auto& s = seqs.back();
    if (!s.timestamps.empty() && !(t > s.timestamps.back())) {
      fail(path, lineno, "t not strictly increasing within sequence " + std::to_string(id));
    }
    s.timestamps.push_back(t);
    for (std::size_t i = 0; i < schema.features; ++i) {
      s.inputs.push_back(parse_real(f[2 + i], path, lineno, "f" + std::to_string(i + 1)));
    }
    auto& tgt = std::get<StepTargets>(s.target);
    for (std::size_t i = 0; i < schema.targets; ++i) {
      tgt.values.push_back(parse_real(f[2 + schema.features + i], path, lineno, "target" + std::to_string(i + 1)));
    }
  }

  DatasetSplits out;
  const std::size_t n = seqs.size();
  const std::size_t n_train = n * 8 / 10, n_val = n / 10;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.push_back(std::move(seqs[i]));
  }
  return out;
}

std::vector<EventRecord> load_events_csv(const std::string& path, SensorSize sensor) {
  auto is = open_or_throw(path);
  std::string line;
  if (!std::getline(is, line)) return {};
  if (split_fields(line) != std::vector<std::string>{"t", "x", "y", "p"}) fail(path, 1, "header must be 't,x,y,p'");
  std::vector<EventRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_fields(line);
    if (f.size() != 4) fail(path, lineno, "expected 4 fields, found " + std::to_string(f.size()));
    EventRecord e;
    e.t = parse_int(f[0], path, lineno, "t");
    const auto x = parse_int(f[1], path, lineno, "x");
    const auto y = parse_int(f[2], path, lineno, "y");
    const auto p = parse_int(f[3], path, lineno, "p");
    if (x < 0 || x >= sensor.width) fail(path, lineno, "x=" + f[1] + " outside [0, " + std::to_string(sensor.width) + ")");
    if (y < 0 || y >= sensor.height) fail(path, lineno, "y=" + f[2] + " outside [0, " + std::to_string(sensor.height) + ")");
    if (p != -1 && p != 1) fail(path, lineno, "p=" + f[3] + " is not -1 or 1");
    if (!out.empty() && e.t < out.back().t) fail(path, lineno, "t decreases");
    e.x = static_cast<std::uint32_t>(x);
    e.y = static_cast<std::uint32_t>(y);
    e.p = static_cast<int>(p);
    out.push_back(e);
  }
  return out;
}

void write_sequence_csv(std::ostream& os, const std::vector<SequenceSample>& samples) {
  if (samples.empty()) return;
  const std::size_t features = samples.front().width;
  const auto* first = std::get_if<StepTargets>(&samples.front().target);
  if (!first || samples.front().tokenized()) throw ArgumentError("write_sequence_csv: needs dense inputs with per-step targets");
  const std::size_t targets = first->width;
  os << "seq,t";
  for (std::size_t i = 1; i <= features; ++i) os << ",f" << i;
  for (std::size_t i = 1; i <= targets; ++i) os << ",target" << i;
  os << "\n";
  char buf[40];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& s = samples[n];
    const auto* st = std::get_if<StepTargets>(&s.target);
    if (!st || s.width != features || st->width != targets) throw ArgumentError("write_sequence_csv: inconsistent samples");
    for (std::size_t k = 0; k < s.length(); ++k) {
      os << n << ',' << num(s.timestamps.empty() ? static_cast<double>(k + 1) : s.timestamps[k]);
      for (std::size_t i = 0; i < features; ++i) os << ',' << num(s.inputs[k * features + i]);
      for (std::size_t i = 0; i < targets; ++i) os << ',' << num(st->values[k * targets + i]);
      os << "\n";
    }
  }
}

void write_events_csv(std::ostream& os, const std::vector<EventRecord>& events) {
  os << "t,x,y,p\n";
  for (const auto& e : events) os << e.t << ',' << e.x << ',' << e.y << ',' << e.p << "\n";
}

}  // namespace s7
