// Serial vs OpenMP batch gradient on an FHN-sized problem.
//   bench_batch [batch] [length] [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <numeric>

#include <omp.h>

#include "s7/tasks.hpp"
#include "s7/trainer.hpp"

using namespace s7;

int main(int argc, char** argv) {
  const std::size_t batch = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 32;
  const std::size_t length = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 1000;
  const int repeats = argc > 3 ? std::atoi(argv[3]) : 5;

  FhnConfig fc;
  fc.length = length;
  fc.n_train = batch;
  fc.n_val = fc.n_test = 0;
  const DatasetSplits data = fhn_generate(fc, 7);

  ModelShape sh;
  sh.input_width = 2;
  sh.output_width = 2;
  sh.d = 16;
  sh.m = 16;
  sh.input_dep_B = sh.input_dep_C = true;
  const Model<float> model = init_model<float>(sh, TransitionSettings{}, 1);

  std::vector<std::size_t> idx(batch);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<float> losses(batch);
  Model<float> g_serial = model.zeros_like(), g_par = model.zeros_like();
  parallel::Workspace<float> ws;
  const int threads = omp_get_max_threads();

  auto time_ms = [&](auto&& f) {
    f();  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < repeats; ++r) f();
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / repeats;
  };
  const double ts = time_ms([&] { serial::batch_gradient<float>(model, data.train, idx, LossKind::mse, g_serial, losses); });
  const double tp = time_ms(
      [&] { parallel::batch_gradient<float>(model, data.train, idx, LossKind::mse, g_par, losses, ws, threads); });

  bool same = true;
  std::vector<std::span<const float>> a;
  g_serial.for_each_param([&](const std::string&, std::span<const float> s, ParamGroup) { a.push_back(s); });
  std::size_t t = 0;
  g_par.for_each_param([&](const std::string&, std::span<const float> s, ParamGroup) {
    same = same && std::equal(s.begin(), s.end(), a[t++].begin());
  });

  std::printf("batch %zu  length %zu  params %zu  threads %d\n", batch, length, model.parameter_count(), threads);
  std::printf("serial   %9.2f ms\n", ts);
  std::printf("openmp   %9.2f ms  (x%.2f)\n", tp, ts / tp);
  std::printf("gradients bit-identical: %s\n", same ? "yes" : "no");
  return same ? 0 : 1;
}
