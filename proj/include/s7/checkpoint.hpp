#pragma once

// Text checkpoint container. Values are written as C99 hex floats, so a
// write/read round trip is bit exact for both precisions.
//
//   s7-checkpoint <version>
//   precision <32|64>
//   shape <input_width> <d> <m> <output_width> <depth> <input_dep_B> <input_dep_C> <per_step|pooled>
//   transition <enabled> <a> <b> <discrete|continuous>
//   tensor <name> <count>
//   <count hex floats>
//   ...
//   end

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "s7/layer.hpp"

namespace s7 {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointVersionError : std::runtime_error {
  int found;
  int expected;
  CheckpointVersionError(int f, int e)
      : std::runtime_error("checkpoint format version " + std::to_string(f) + ", this build reads version " +
                           std::to_string(e)),
        found(f),
        expected(e) {}
};

struct CheckpointHeader {
  int version = 0;
  int precision = 0;
  ModelShape shape;
  TransitionSettings transition;
};

namespace detail {

inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_double(const std::string& tok, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw IngestionError("checkpoint: bad number '" + tok + "' in " + what);
  return v;
}

template <typename T>
constexpr int precision_bits() {
  return sizeof(T) == 4 ? 32 : 64;
}

}  // namespace detail

template <typename T>
void write_checkpoint(std::ostream& os, const Model<T>& model) {
  const auto& s = model.shape;
  const auto& t = model.transition;
  os << "s7-checkpoint " << kCheckpointVersion << "\n";
  os << "precision " << detail::precision_bits<T>() << "\n";
  os << "shape " << s.input_width << ' ' << s.d << ' ' << s.m << ' ' << s.output_width << ' ' << s.depth << ' '
     << int(s.input_dep_B) << ' ' << int(s.input_dep_C) << ' '
     << (s.readout == Readout::per_step ? "per_step" : "pooled") << "\n";
  os << "transition " << int(t.enabled) << ' ' << detail::hexfloat(t.reparam.a) << ' ' << detail::hexfloat(t.reparam.b)
     << ' ' << (t.reparam.form == ReparamForm::discrete ? "discrete" : "continuous") << "\n";
  model.for_each_param([&](const std::string& name, std::span<const T> v, ParamGroup) {
    os << "tensor " << name << ' ' << v.size() << "\n";
    for (std::size_t i = 0; i < v.size(); ++i) {
      os << detail::hexfloat(static_cast<double>(v[i])) << (i + 1 == v.size() ? "\n" : " ");
    }
    if (v.empty()) os << "\n";
  });
  os << "end\n";
}

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model) {
  std::ofstream os(path);
  if (!os) throw IngestionError("cannot write checkpoint " + path);
  write_checkpoint(os, model);
  if (!os) throw IngestionError("error writing checkpoint " + path);
}

inline CheckpointHeader read_checkpoint_header(std::istream& is) {
  CheckpointHeader h;
  std::string tag;
  if (!(is >> tag) || tag != "s7-checkpoint") throw IngestionError("checkpoint: missing s7-checkpoint magic");
  if (!(is >> h.version)) throw IngestionError("checkpoint: missing format version");
  if (h.version != kCheckpointVersion) throw CheckpointVersionError(h.version, kCheckpointVersion);
  if (!(is >> tag >> h.precision) || tag != "precision" || (h.precision != 32 && h.precision != 64)) {
    throw IngestionError("checkpoint: bad precision line");
  }
  int dep_b = 0, dep_c = 0;
  std::string readout;
  auto& s = h.shape;
  if (!(is >> tag >> s.input_width >> s.d >> s.m >> s.output_width >> s.depth >> dep_b >> dep_c >> readout) ||
      tag != "shape" || (readout != "per_step" && readout != "pooled")) {
    throw IngestionError("checkpoint: bad shape line");
  }
  s.input_dep_B = dep_b != 0;
  s.input_dep_C = dep_c != 0;
  s.readout = readout == "per_step" ? Readout::per_step : Readout::pooled;
  int enabled = 0;
  std::string a, b, form;
  if (!(is >> tag >> enabled >> a >> b >> form) || tag != "transition" || (form != "discrete" && form != "continuous")) {
    throw IngestionError("checkpoint: bad transition line");
  }
  h.transition.enabled = enabled != 0;
  h.transition.reparam.a = detail::parse_double(a, "transition a");
  h.transition.reparam.b = detail::parse_double(b, "transition b");
  h.transition.reparam.form = form == "discrete" ? ReparamForm::discrete : ReparamForm::continuous;
  return h;
}

// Reads the tensors that follow the header into a model of precision T.
template <typename T>
Model<T> read_checkpoint_body(std::istream& is, const CheckpointHeader& h) {
  Model<T> model = zero_model<T>(h.shape, h.transition);
  model.for_each_param([&](const std::string& name, std::span<T> v, ParamGroup) {
    std::string tag, got;
    std::size_t count = 0;
    if (!(is >> tag >> got >> count) || tag != "tensor") throw IngestionError("checkpoint: expected tensor " + name);
    if (got != name || count != v.size()) {
      throw IngestionError("checkpoint: expected tensor " + name + " with " + std::to_string(v.size()) +
                           " values, found " + got + " with " + std::to_string(count));
    }
    std::string tok;
    for (T& x : v) {
      if (!(is >> tok)) throw IngestionError("checkpoint: truncated tensor " + name);
      x = static_cast<T>(detail::parse_double(tok, name));
    }
  });
  std::string tag;
  if (!(is >> tag) || tag != "end") throw IngestionError("checkpoint: missing end marker");
  model.validate();
  return model;
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open checkpoint " + path);
  const CheckpointHeader h = read_checkpoint_header(is);
  return read_checkpoint_body<T>(is, h);
}

}  // namespace s7
