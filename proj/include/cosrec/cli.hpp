#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cosrec {

// Exit statuses of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // runtime or numeric failure
inline constexpr int kExitUsage = 2;    // bad flags, missing files, incompatible inputs

// Environment variable naming the directory that holds raw dataset files.
inline constexpr const char* kDataDirVariable = "COSREC_DATA_DIR";

// Runs `cosrec <subcommand> ...`; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cosrec
