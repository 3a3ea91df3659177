#pragma once

// Subcommand bodies. Each returns a process exit code and talks only through
// files under the output directory and the two streams passed in.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace s7 {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,  // gradcheck mismatch
  kExitUsage = 2,        // config, IO and data errors
};

struct CommandOptions {
  std::string config;
  std::string out;                     // overrides paths.output when non-empty
  std::optional<std::uint64_t> seed;   // overrides train.seed
  int threads = 1;                     // 1: serial reference path, no wall clock in metrics
  std::string checkpoint;              // eval
  std::string input;                   // tokenize
  std::string sensor = "128x128";      // tokenize, "<s_x>x<s_y>"
};

int cmd_train(const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_eval(const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_ablate(const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_tokenize(const CommandOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace s7
