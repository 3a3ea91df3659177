#include "s7/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "s7/errors.hpp"

namespace s7 {

namespace {

// Independent stream per (seed, split) so splits never share draws.
std::mt19937_64 split_rng(std::uint64_t seed, std::uint64_t split) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), 0x53375eedu};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kTrain = 1, kVal = 2, kTest = 3;

}  // namespace

std::uint64_t tokenize_event(const EventRecord& e, SensorSize sensor) {
  if (e.x >= sensor.width || e.y >= sensor.height) {
    throw ArgumentError("tokenize_event: (" + std::to_string(e.x) + ", " + std::to_string(e.y) + ") outside " +
                        std::to_string(sensor.width) + "x" + std::to_string(sensor.height) + " sensor");
  }
  if (e.p != -1 && e.p != 1) throw ArgumentError("tokenize_event: polarity must be -1 or +1, got " + std::to_string(e.p));
  const std::uint64_t pixel = static_cast<std::uint64_t>(e.x) * sensor.height + e.y;
  return 2 * pixel + static_cast<std::uint64_t>((e.p + 1) / 2);
}

EventCoords detokenize(std::uint64_t token, SensorSize sensor) {
  if (token >= vocabulary_size(sensor)) {
    throw ArgumentError("detokenize: token " + std::to_string(token) + " outside [0, " +
                        std::to_string(vocabulary_size(sensor)) + ")");
  }
  const std::uint64_t pixel = token / 2;
  return EventCoords{static_cast<std::uint32_t>(pixel / sensor.height), static_cast<std::uint32_t>(pixel % sensor.height),
                     token % 2 == 1 ? 1 : -1};
}

// ---------------------------------------------------------------------------

void FhnConfig::validate() const {
  if (!(dt_sim > 0.0)) throw ArgumentError("fhn: dt_sim must be positive");
  if (length < 2) throw ArgumentError("fhn: length must be >= 2");
  if (sample_every < 1) throw ArgumentError("fhn: sample_every must be >= 1");
  if (!(eps > 0.0)) throw ArgumentError("fhn: eps must be positive");
}

FhnState fhn_derivative(const FhnState& s, double drive, const FhnConfig& cfg) {
  return {s.v - s.v * s.v * s.v / 3.0 - s.w + drive, cfg.eps * (s.v + cfg.a - cfg.b * s.w)};
}

FhnState fhn_rk4_step(const FhnState& s, double drive, double dt, const FhnConfig& cfg) {
  auto at = [&](const FhnState& k, double h) { return FhnState{s.v + h * k.v, s.w + h * k.w}; };
  const FhnState k1 = fhn_derivative(s, drive, cfg);
  const FhnState k2 = fhn_derivative(at(k1, dt / 2), drive, cfg);
  const FhnState k3 = fhn_derivative(at(k2, dt / 2), drive, cfg);
  const FhnState k4 = fhn_derivative(at(k3, dt), drive, cfg);
  return {s.v + dt / 6.0 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v), s.w + dt / 6.0 * (k1.w + 2 * k2.w + 2 * k3.w + k4.w)};
}

std::vector<FhnState> fhn_simulate(const FhnState& init, double drive, double dt, std::size_t steps, std::size_t every,
                                   const FhnConfig& cfg) {
  if (every == 0) throw ArgumentError("fhn_simulate: every must be >= 1");
  std::vector<FhnState> out{init};
  FhnState s = init;
  for (std::size_t i = 1; i <= steps; ++i) {
    s = fhn_rk4_step(s, drive, dt, cfg);
    if (i % every == 0) out.push_back(s);
  }
  return out;
}

FhnState fhn_equilibrium(const FhnConfig& cfg, double drive) {
  // w = (v + a) / b on the w-nullcline; solve g(v) = v - v^3/3 - (v + a)/b + I = 0.
  // g is strictly decreasing when b < 1, so bisection on a wide bracket is exact.
  auto g = [&](double v) { return v - v * v * v / 3.0 - (v + cfg.a) / cfg.b + drive; };
  double lo = -10.0, hi = 10.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (g(mid) > 0.0) lo = mid; else hi = mid;
  }
  const double v = 0.5 * (lo + hi);
  return {v, (v + cfg.a) / cfg.b};
}

namespace {

std::vector<SequenceSample> fhn_split(const FhnConfig& cfg, std::size_t count, std::uint64_t seed, std::uint64_t split) {
  auto rng = split_rng(seed, split);
  std::uniform_real_distribution<double> v0(-2.0, 2.0), w0(-0.5, 1.5), drive_scale(0.5, 1.5);
  std::vector<SequenceSample> out;
  const double dt_sample = cfg.dt_sim * static_cast<double>(cfg.sample_every);
  for (std::size_t n = 0; n < count; ++n) {
    const FhnState init{v0(rng), w0(rng)};
    const double drive = cfg.I_ext * drive_scale(rng);
    const auto traj = fhn_simulate(init, drive, cfg.dt_sim, cfg.length * cfg.sample_every, cfg.sample_every, cfg);
    SequenceSample s;
    s.width = 2;
    s.inputs.resize(2 * cfg.length);
    s.timestamps.resize(cfg.length);
    StepTargets tgt;
    tgt.width = 2;
    tgt.values.resize(2 * cfg.length);
    for (std::size_t k = 0; k < cfg.length; ++k) {
      const auto& cur = traj[k];
      const auto& next = traj[k + 1];
      if (!std::isfinite(next.v) || !std::isfinite(next.w)) {
        throw NumericError("fhn_generate: non-finite trajectory for seed " + std::to_string(seed));
      }
      s.inputs[2 * k] = cur.v;
      s.inputs[2 * k + 1] = drive;
      s.timestamps[k] = static_cast<double>(k + 1) * dt_sample;
      tgt.values[2 * k] = next.v;
      tgt.values[2 * k + 1] = next.w;
    }
    s.target = std::move(tgt);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

DatasetSplits fhn_generate(const FhnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return {fhn_split(cfg, cfg.n_train, seed, kTrain), fhn_split(cfg, cfg.n_val, seed, kVal),
          fhn_split(cfg, cfg.n_test, seed, kTest)};
}

// ---------------------------------------------------------------------------

namespace {

std::vector<SequenceSample> adding_split(std::size_t length, std::size_t count, std::uint64_t seed, std::uint64_t split) {
  auto rng = split_rng(seed, split);
  std::uniform_real_distribution<double> value(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pos(0, length - 1);
  std::vector<SequenceSample> out;
  for (std::size_t n = 0; n < count; ++n) {
    SequenceSample s;
    s.width = 2;
    s.inputs.assign(2 * length, 0.0);
    for (std::size_t k = 0; k < length; ++k) s.inputs[2 * k] = value(rng);
    const std::size_t first = pos(rng);
    std::size_t second = pos(rng);
    while (second == first) second = pos(rng);
    s.inputs[2 * first + 1] = 1.0;
    s.inputs[2 * second + 1] = 1.0;
    s.target = VectorTarget{{s.inputs[2 * first] + s.inputs[2 * second]}};
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

DatasetSplits adding_problem_generate(std::size_t length, std::size_t n_samples, std::uint64_t seed) {
  if (length < 2) throw ArgumentError("adding_problem_generate: length must be >= 2");
  const std::size_t n_train = n_samples * 8 / 10;
  const std::size_t n_val = n_samples / 10;
  const std::size_t n_test = n_samples - n_train - n_val;
  return {adding_split(length, n_train, seed, kTrain), adding_split(length, n_val, seed, kVal),
          adding_split(length, n_test, seed, kTest)};
}

// ---------------------------------------------------------------------------

void EventStreamConfig::validate() const {
  if (n_classes < 2) throw ArgumentError("event streams: n_classes must be >= 2");
  if (sensor.width < 4 || sensor.height < 4) throw ArgumentError("event streams: sensor must be at least 4x4");
  if (events_per_stream < 1) throw ArgumentError("event streams: events_per_stream must be >= 1");
  if (!(mean_gap_us > 0.0)) throw ArgumentError("event streams: mean_gap_us must be positive");
}

std::vector<EventStream> synthesize_event_streams(const EventStreamConfig& cfg, std::size_t count, std::uint64_t seed,
                                                  std::uint64_t split) {
  cfg.validate();
  auto rng = split_rng(seed, split);
  std::uniform_int_distribution<std::size_t> cls(0, cfg.n_classes - 1);
  std::exponential_distribution<double> gap(1.0 / cfg.mean_gap_us);
  std::normal_distribution<double> noise(0.0, cfg.noise_px);
  const double cx = 0.5 * (cfg.sensor.width - 1), cy = 0.5 * (cfg.sensor.height - 1);
  const double radius = 0.3 * std::min(cfg.sensor.width, cfg.sensor.height);
  constexpr double kSweep = 0.6;  // radians travelled over one stream

  std::vector<EventStream> out;
  for (std::size_t n = 0; n < count; ++n) {
    EventStream st;
    st.label = cls(rng);
    const double theta0 = 2.0 * std::numbers::pi * static_cast<double>(st.label) / static_cast<double>(cfg.n_classes);
    std::int64_t t = 0;
    for (std::size_t k = 0; k < cfg.events_per_stream; ++k) {
      t += 1 + static_cast<std::int64_t>(gap(rng));
      const double phase = theta0 + kSweep * static_cast<double>(k) / static_cast<double>(cfg.events_per_stream);
      const double dx = noise(rng), dy = noise(rng);
      const double px = cx + radius * std::cos(phase) + dx;
      const double py = cy + radius * std::sin(phase) + dy;
      // motion direction is the arc tangent; events ahead of the centre are ON
      const double lead = -std::sin(phase) * dx + std::cos(phase) * dy;
      EventRecord e;
      e.x = static_cast<std::uint32_t>(std::clamp(std::lround(px), 0l, static_cast<long>(cfg.sensor.width) - 1));
      e.y = static_cast<std::uint32_t>(std::clamp(std::lround(py), 0l, static_cast<long>(cfg.sensor.height) - 1));
      e.t = t;
      e.p = lead >= 0.0 ? 1 : -1;
      st.events.push_back(e);
    }
    out.push_back(std::move(st));
  }
  return out;
}

SequenceSample event_stream_to_sample(const EventStream& stream, SensorSize sensor) {
  SequenceSample s;
  s.width = static_cast<std::size_t>(vocabulary_size(sensor));
  for (const auto& e : stream.events) {
    s.tokens.push_back(static_cast<std::uint32_t>(tokenize_event(e, sensor)));
    s.timestamps.push_back(static_cast<double>(e.t) * 1e-6);
  }
  s.target = ClassLabel{stream.label};
  return s;
}

DatasetSplits event_stream_synthesize(const EventStreamConfig& cfg, std::uint64_t seed) {
  DatasetSplits out;
  auto convert = [&](std::size_t count, std::uint64_t split, std::vector<SequenceSample>& dst) {
    for (const auto& st : synthesize_event_streams(cfg, count, seed, split)) dst.push_back(event_stream_to_sample(st, cfg.sensor));
  };
  convert(cfg.n_train, kTrain, out.train);
  convert(cfg.n_val, kVal, out.val);
  convert(cfg.n_test, kTest, out.test);
  return out;
}

}  // namespace s7
