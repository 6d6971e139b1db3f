#pragma once

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "fsl/errors.hpp"

namespace fsl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitLayout = 3;   // missing / malformed data tree
inline constexpr int kExitNumeric = 4;  // non-finite training loss
inline constexpr int kExitFormat = 5;   // archives, caches, checkpoints

// Bad flag combination detected after parsing, e.g. a trainable head with no
// checkpoint.
class UsageError : public Error {
 public:
  using Error::Error;
};

int exit_code_for(const std::exception& e);

// `fewshot <command> [flags]`. Commands: synth, train, evaluate, benchmark,
// export-embeddings. Reports go to `out`, diagnostics to `err`. Options may
// also come from a TOML config file (--config, or FEWSHOT_CONFIG); flags on
// the command line win.
int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

// Same, with the arguments after the program name.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace fsl::cli
