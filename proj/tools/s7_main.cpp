#include <iostream>

#include <CLI11.hpp>
#include <omp.h>

#include "s7/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"s7: input-dependent diagonal state-space sequence models"};
  app.require_subcommand(1);

  s7::CommandOptions opt;
  opt.threads = omp_get_max_threads();
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", opt.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    if (with_out) sub->add_option("--out", opt.out, "output directory (overrides paths.output)");
    sub->add_option("--seed", seed, "seed (overrides the config)");
    sub->add_option("--threads", opt.threads, "worker threads; 1 is the serial reference path")
        ->check(CLI::PositiveNumber);
  };

  auto* train = app.add_subcommand("train", "train a model, write metrics and checkpoints");
  common(train, true);
  auto* eval = app.add_subcommand("eval", "test metric of a checkpoint");
  common(eval, false);
  eval->add_option("--checkpoint", opt.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  auto* grad = app.add_subcommand("gradcheck", "analytic gradients against finite differences");
  common(grad, false);
  auto* ablate = app.add_subcommand("ablate", "train a grid of reparameterization variants");
  common(ablate, true);
  auto* tok = app.add_subcommand("tokenize", "event CSV to token,dt rows on stdout");
  tok->add_option("--input", opt.input, "event CSV (t,x,y,p)")->required()->check(CLI::ExistingFile);
  tok->add_option("--sensor", opt.sensor, "sensor size <s_x>x<s_y>")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  for (auto* sub : {train, eval, grad, ablate}) {
    if (sub->parsed() && sub->count("--seed")) opt.seed = seed;
  }
  if (train->parsed()) return s7::cmd_train(opt, std::cout, std::cerr);
  if (eval->parsed()) return s7::cmd_eval(opt, std::cout, std::cerr);
  if (grad->parsed()) return s7::cmd_gradcheck(opt, std::cout, std::cerr);
  if (ablate->parsed()) return s7::cmd_ablate(opt, std::cout, std::cerr);
  return s7::cmd_tokenize(opt, std::cout, std::cerr);
}
