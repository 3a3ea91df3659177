#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "s7/errors.hpp"
#include "s7/tasks.hpp"

using namespace s7;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "s7_test_tasks";
  fs::create_directories(dir);
  return dir / name;
}

fs::path write_file(const std::string& name, const std::string& body) {
  const fs::path p = scratch(name);
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST_CASE("tokenizer examples") {
  const SensorSize s{128, 128};
  CHECK(tokenize_event({0, 0, 0, -1}, s) == 0);
  CHECK(tokenize_event({0, 0, 0, 1}, s) == 1);
  CHECK(tokenize_event({127, 127, 0, 1}, s) == 32767);
  CHECK_THROWS_AS(tokenize_event({128, 0, 0, 1}, s), ArgumentError);
  CHECK_THROWS_AS(tokenize_event({0, 128, 0, 1}, s), ArgumentError);
  CHECK_THROWS_AS(tokenize_event({0, 0, 0, 0}, s), ArgumentError);
}

TEST_CASE("tokenizer is a bijection onto a dense range") {
  for (const SensorSize s : {SensorSize{128, 128}, SensorSize{7, 13}, SensorSize{13, 7}, SensorSize{1, 5}}) {
    std::vector<char> seen(vocabulary_size(s), 0);
    std::size_t count = 0;
    for (std::uint32_t x = 0; x < s.width; ++x) {
      for (std::uint32_t y = 0; y < s.height; ++y) {
        for (int p : {-1, 1}) {
          const auto tok = tokenize_event({x, y, 0, p}, s);
          REQUIRE(tok < seen.size());
          CHECK(seen[tok] == 0);
          seen[tok] = 1;
          ++count;
          const auto back = detokenize(tok, s);
          CHECK(back.x == x);
          CHECK(back.y == y);
          CHECK(back.p == p);
        }
      }
    }
    CHECK(count == vocabulary_size(s));
  }
}

TEST_CASE("detokenize") {
  const SensorSize s{16, 16};
  const auto z = detokenize(0, s);
  CHECK(z.x == 0);
  CHECK(z.y == 0);
  CHECK(z.p == -1);
  for (std::uint64_t t = 0; t < vocabulary_size(s); ++t) {
    const auto c = detokenize(t, s);
    CHECK(tokenize_event({c.x, c.y, 0, c.p}, s) == t);
  }
  CHECK_THROWS_AS(detokenize(2 * 16 * 16, s), ArgumentError);
}

TEST_CASE("FHN rest point is a fixed point") {
  FhnConfig cfg;
  const FhnState eq = fhn_equilibrium(cfg, 0.0);
  const FhnState d = fhn_derivative(eq, 0.0, cfg);
  CHECK(std::abs(d.v) <= 1e-9);
  CHECK(std::abs(d.w) <= 1e-9);
  const auto traj = fhn_simulate(eq, 0.0, 0.1, 2000, 10, cfg);
  for (const auto& s : traj) {
    CHECK(std::abs(s.v - eq.v) <= 1e-9);
    CHECK(std::abs(s.w - eq.w) <= 1e-9);
  }
}

TEST_CASE("RK4 converges at fourth order") {
  FhnConfig cfg;
  const FhnState init{1.2, -0.3};
  const double T = 20.0, drive = 0.5;
  auto run = [&](double dt) { return fhn_simulate(init, drive, dt, static_cast<std::size_t>(std::lround(T / dt)), 1, cfg).back(); };
  const double dt = 0.2;
  const FhnState ref = run(dt / 8), a = run(dt), b = run(dt / 2);
  const double ea = std::hypot(a.v - ref.v, a.w - ref.w);
  const double eb = std::hypot(b.v - ref.v, b.w - ref.w);
  CHECK(ea / eb == doctest::Approx(16.0).epsilon(0.25));
}

TEST_CASE("FHN generator") {
  FhnConfig cfg;
  const auto a = fhn_generate(cfg, 5);
  const auto b = fhn_generate(cfg, 5);
  REQUIRE(a.train.size() == 128);
  REQUIRE(a.val.size() == 32);
  REQUIRE(a.test.size() == 32);
  CHECK(a.train[7].inputs == b.train[7].inputs);
  CHECK(a.test[3].timestamps == b.test[3].timestamps);
  const auto c = fhn_generate(cfg, 6);
  CHECK(a.train[0].inputs != c.train[0].inputs);
  CHECK(a.train[0].inputs != a.val[0].inputs);
  CHECK(a.val[0].inputs != a.test[0].inputs);

  std::size_t out_of_bounds = 0;
  for (const auto* split : {&a.train, &a.val, &a.test}) {
    for (const auto& s : *split) {
      s.validate();
      CHECK(s.length() == 1000);
      const auto& tgt = std::get<StepTargets>(s.target);
      for (std::size_t k = 0; k < 1000; ++k) {
        if (std::abs(tgt.values[2 * k]) > 3 || std::abs(tgt.values[2 * k + 1]) > 3) ++out_of_bounds;
        if (k + 1 < 1000) CHECK(tgt.values[2 * k] == s.inputs[2 * (k + 1)]);
        CHECK(s.inputs[2 * k + 1] == s.inputs[1]);
      }
      CHECK(s.inputs[1] >= 0.25);
      CHECK(s.inputs[1] <= 0.75);
    }
  }
  CHECK(out_of_bounds == 0);
  CHECK(a.train[0].timestamps[1] - a.train[0].timestamps[0] == doctest::Approx(0.5));
}

TEST_CASE("FHN generator errors") {
  FhnConfig bad;
  bad.length = 1;
  CHECK_THROWS_AS(fhn_generate(bad, 1), ArgumentError);
  bad = FhnConfig{};
  bad.dt_sim = 0.0;
  CHECK_THROWS_AS(fhn_generate(bad, 1), ArgumentError);
  FhnConfig blow;
  blow.dt_sim = 40.0;
  blow.n_train = 1;
  blow.length = 50;
  try {
    fhn_generate(blow, 1234);
    FAIL("no throw");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("1234") != std::string::npos);
  }
}

TEST_CASE("adding problem") {
  const auto d = adding_problem_generate(50, 2000, 3);
  CHECK(d.train.size() == 1600);
  CHECK(d.val.size() == 200);
  CHECK(d.test.size() == 200);
  for (const auto* split : {&d.train, &d.val, &d.test}) {
    for (const auto& s : *split) {
      int markers = 0;
      double sum = 0;
      for (std::size_t k = 0; k < 50; ++k) {
        const double v = s.inputs[2 * k], mk = s.inputs[2 * k + 1];
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
        if (mk == 1.0) {
          ++markers;
          sum += v;
        } else {
          CHECK(mk == 0.0);
        }
      }
      CHECK(markers == 2);
      CHECK(std::get<VectorTarget>(s.target).values[0] == sum);
    }
  }
  CHECK(adding_problem_generate(50, 2000, 3).train[10].inputs == d.train[10].inputs);
  CHECK_THROWS_AS(adding_problem_generate(1, 10, 3), ArgumentError);
}

TEST_CASE("constant predictor on the adding problem scores about 1/6") {
  const auto d = adding_problem_generate(20, 40000, 4);
  double acc = 0;
  for (const auto& s : d.train) {
    const double e = std::get<VectorTarget>(s.target).values[0] - 1.0;
    acc += e * e;
  }
  CHECK(acc / d.train.size() == doctest::Approx(1.0 / 6.0).epsilon(0.02));
}

TEST_CASE("event streams: two separated templates are centroid-separable") {
  EventStreamConfig cfg;
  cfg.n_classes = 2;
  cfg.events_per_stream = 1000;
  cfg.n_train = 100;
  cfg.n_val = 0;
  cfg.n_test = 200;
  const auto data = event_stream_synthesize(cfg, 11);
  const std::size_t vocab = vocabulary_size(cfg.sensor);
  auto hist = [&](const SequenceSample& s) {
    std::vector<double> h(vocab, 0.0);
    for (auto t : s.tokens) h[t] += 1.0 / s.tokens.size();
    return h;
  };
  std::vector<std::vector<double>> centroid(2, std::vector<double>(vocab, 0.0));
  std::vector<double> counts(2, 0.0);
  for (const auto& s : data.train) {
    const auto c = std::get<ClassLabel>(s.target).index;
    const auto h = hist(s);
    for (std::size_t i = 0; i < vocab; ++i) centroid[c][i] += h[i];
    counts[c] += 1;
  }
  for (int c = 0; c < 2; ++c)
    for (auto& v : centroid[c]) v /= counts[c];
  std::size_t correct = 0;
  for (const auto& s : data.test) {
    const auto h = hist(s);
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < 2; ++c) {
      double dist = 0;
      for (std::size_t i = 0; i < vocab; ++i) dist += (h[i] - centroid[c][i]) * (h[i] - centroid[c][i]);
      if (dist < best) {
        best = dist;
        arg = c;
      }
    }
    correct += arg == std::get<ClassLabel>(s.target).index;
  }
  CHECK(static_cast<double>(correct) / data.test.size() >= 0.99);
}

TEST_CASE("event streams: timestamps, determinism, validation") {
  EventStreamConfig cfg;
  cfg.n_classes = 4;
  const auto streams = synthesize_event_streams(cfg, 50, 3, 1);
  const auto again = synthesize_event_streams(cfg, 50, 3, 1);
  for (std::size_t n = 0; n < streams.size(); ++n) {
    CHECK(streams[n].label < 4);
    for (std::size_t k = 1; k < streams[n].events.size(); ++k) CHECK(streams[n].events[k].t > streams[n].events[k - 1].t);
    for (std::size_t k = 0; k < streams[n].events.size(); ++k) {
      CHECK(streams[n].events[k].x == again[n].events[k].x);
      CHECK(streams[n].events[k].t == again[n].events[k].t);
    }
    const auto s = event_stream_to_sample(streams[n], cfg.sensor);
    s.validate();
    CHECK(s.tokens.size() == cfg.events_per_stream);
    CHECK(s.timestamps[0] == doctest::Approx(streams[n].events[0].t * 1e-6));
  }
  cfg.n_classes = 1;
  CHECK_THROWS_AS(event_stream_synthesize(cfg, 1), ArgumentError);
}

TEST_CASE("event CSV fixture") {
  const auto p = write_file("events3.csv", "t,x,y,p\n10,0,0,-1\n25,3,2,1\n25,127,127,1\n");
  const auto ev = load_events_csv(p.string(), {128, 128});
  REQUIRE(ev.size() == 3);
  CHECK(ev[0].t == 10);
  CHECK(ev[0].x == 0);
  CHECK(ev[0].p == -1);
  CHECK(ev[1].t == 25);
  CHECK(ev[1].x == 3);
  CHECK(ev[1].y == 2);
  CHECK(ev[1].p == 1);
  CHECK(ev[2].x == 127);
  CHECK(ev[2].y == 127);
  std::ostringstream os;
  write_events_csv(os, ev);
  CHECK(os.str() == "t,x,y,p\n10,0,0,-1\n25,3,2,1\n25,127,127,1\n");
}

TEST_CASE("event CSV validation names the line") {
  auto expect_error = [](const std::string& body, const std::string& needle) {
    const auto p = write_file("bad_events.csv", body);
    try {
      load_events_csv(p.string(), {16, 16});
      FAIL("no throw for " << body);
    } catch (const IngestionError& e) {
      const std::string msg = e.what();
      CHECK_MESSAGE(msg.find(needle) != std::string::npos, msg);
    }
  };
  expect_error("t,x,y,p\n1,0,0,1\n2,0,0,2\n", ":3:");
  expect_error("t,x,y,p\n1,16,0,1\n", ":2:");
  expect_error("t,x,y,p\n5,0,0,1\n4,0,0,1\n", ":3:");
  expect_error("t,y,x,p\n", ":1:");
  expect_error("t,x,y,p\n1,0,0\n", ":2:");
  expect_error("t,x,y,p\n1,a,0,1\n", ":2:");
  CHECK_THROWS_AS(load_events_csv(scratch("missing.csv").string(), {16, 16}), IngestionError);
  CHECK(load_events_csv(write_file("header_only.csv", "t,x,y,p\n").string(), {16, 16}).empty());
  CHECK(load_events_csv(write_file("empty.csv", "").string(), {16, 16}).empty());
}

TEST_CASE("sequence CSV") {
  const SequenceCsvSchema schema{2, 1};
  const auto empty = load_sequence_csv(write_file("seq_empty.csv", "seq,t,f1,f2,target1\n").string(), schema);
  CHECK(empty.train.empty());
  CHECK(empty.val.empty());
  CHECK(empty.test.empty());

  std::string body = "seq,t,f1,f2,target1\n";
  for (int n = 0; n < 10; ++n)
    for (int k = 0; k < 3; ++k) body += std::to_string(n) + "," + std::to_string(0.1 * (k + 1)) + "," + std::to_string(n) + ",1," + std::to_string(k) + "\n";
  const auto d = load_sequence_csv(write_file("seq10.csv", body).string(), schema);
  CHECK(d.train.size() == 8);
  CHECK(d.val.size() == 1);
  CHECK(d.test.size() == 1);
  CHECK(d.val[0].inputs[0] == 8.0);
  CHECK(d.train[2].length() == 3);
  CHECK(std::get<StepTargets>(d.train[2].target).values == std::vector<double>{0, 1, 2});

  // write and read back through the same format
  std::ostringstream os;
  write_sequence_csv(os, d.train);
  const auto back = load_sequence_csv(write_file("seq_back.csv", os.str()).string(), schema);
  std::vector<SequenceSample> all = back.train;
  all.insert(all.end(), back.val.begin(), back.val.end());
  all.insert(all.end(), back.test.begin(), back.test.end());
  REQUIRE(all.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(all[i].inputs == d.train[i].inputs);
    CHECK(all[i].timestamps == d.train[i].timestamps);
  }

  auto expect_error = [&](const std::string& text, const std::string& needle) {
    try {
      load_sequence_csv(write_file("seq_bad.csv", text).string(), schema);
      FAIL("no throw");
    } catch (const IngestionError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  expect_error("seq,t,f1,target1\n", ":1:");
  expect_error("seq,t,f1,f2,target1\n0,1,0,0,0\n0,1,0,0,0\n", ":3:");
  expect_error("seq,t,f1,f2,target1\n0,1,0,0,0\n1,1,0,0,0\n0,2,0,0,0\n", ":4:");
  expect_error("seq,t,f1,f2,target1\n0,1,0,nan,0\n", ":2:");
}
