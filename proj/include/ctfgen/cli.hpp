#pragma once

// Command-line front end. Subcommands: gen-data, train, infer, eval, selftest.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <string>
#include <vector>

namespace ctfgen::cli {

int run(const std::vector<std::string>& args);

}  // namespace ctfgen::cli
