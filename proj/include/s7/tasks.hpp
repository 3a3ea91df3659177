#pragma once

// Synthetic datasets, the event tokenizer and CSV ingestion.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "s7/sample.hpp"

namespace s7 {

// ---------------------------------------------------------------------------
// Events

struct SensorSize {
  std::uint32_t width = 0;   // s_x, number of columns
  std::uint32_t height = 0;  // s_y, number of rows
};

struct EventRecord {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::int64_t t = 0;  // microseconds
  int p = 1;           // -1 or +1
};

struct EventCoords {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  int p = 1;
};

inline std::uint64_t vocabulary_size(SensorSize s) { return 2ull * s.width * s.height; }

// token = 2 (x s_y + y) + (p + 1) / 2, a bijection onto [0, 2 s_x s_y).
std::uint64_t tokenize_event(const EventRecord& e, SensorSize sensor);
EventCoords detokenize(std::uint64_t token, SensorSize sensor);

// ---------------------------------------------------------------------------
// FitzHugh-Nagumo
//   v' = v - v^3/3 - w + I
//   w' = eps (v + a - b w)

struct FhnConfig {
  double eps = 0.01;
  double a = 0.7;
  double b = 0.8;
  double I_ext = 0.5;         // drive; each sample draws I_ext * U(0.5, 1.5)
  double dt_sim = 0.1;        // RK4 step
  std::size_t sample_every = 5;  // integrator steps per emitted sample
  std::size_t length = 1000;
  std::size_t n_train = 128;
  std::size_t n_val = 32;
  std::size_t n_test = 32;

  void validate() const;
};

struct FhnState {
  double v = 0.0;
  double w = 0.0;
};

FhnState fhn_derivative(const FhnState& s, double drive, const FhnConfig& cfg);
FhnState fhn_rk4_step(const FhnState& s, double drive, double dt, const FhnConfig& cfg);
// steps RK4 steps of size dt, keeping every `every`-th state (the initial state included).
std::vector<FhnState> fhn_simulate(const FhnState& init, double drive, double dt, std::size_t steps, std::size_t every,
                                   const FhnConfig& cfg);
// The unique rest point for the given drive.
FhnState fhn_equilibrium(const FhnConfig& cfg, double drive);

// Inputs (v_k, I) per step, targets (v_{k+1}, w_{k+1}); timestamps are the
// sample times. Randomized initial conditions, deterministic per seed.
DatasetSplits fhn_generate(const FhnConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Adding problem: channel 0 uniform(0,1) values, channel 1 two marker ones;
// target is the sum of the two marked values. Split 80/10/10.

DatasetSplits adding_problem_generate(std::size_t length, std::size_t n_samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic event streams: class c is a noisy blob travelling along an arc
// that starts at angle 2 pi c / n_classes; leading-edge events are ON.

struct EventStreamConfig {
  std::size_t n_classes = 2;
  SensorSize sensor{16, 16};
  std::size_t events_per_stream = 64;
  std::size_t n_train = 128;
  std::size_t n_val = 32;
  std::size_t n_test = 32;
  double mean_gap_us = 1000.0;
  double noise_px = 0.8;

  void validate() const;
};

struct EventStream {
  std::vector<EventRecord> events;
  std::size_t label = 0;
};

std::vector<EventStream> synthesize_event_streams(const EventStreamConfig& cfg, std::size_t count, std::uint64_t seed,
                                                  std::uint64_t split);
// Token ids plus timestamps in seconds, labelled with the class.
SequenceSample event_stream_to_sample(const EventStream& stream, SensorSize sensor);
DatasetSplits event_stream_synthesize(const EventStreamConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// CSV ingestion
//
// Sequence files: header `seq,t,f1..fd,target1..targetk`; rows of a sequence
// are contiguous with strictly increasing t (seconds). Sequences are split
// 80/10/10 in file order.
// Event files: header `t,x,y,p`, t in microseconds, nondecreasing.

struct SequenceCsvSchema {
  std::size_t features = 1;
  std::size_t targets = 1;
};

DatasetSplits load_sequence_csv(const std::string& path, const SequenceCsvSchema& schema);
std::vector<EventRecord> load_events_csv(const std::string& path, SensorSize sensor);

void write_sequence_csv(std::ostream& os, const std::vector<SequenceSample>& samples);
void write_events_csv(std::ostream& os, const std::vector<EventRecord>& events);

}  // namespace s7
