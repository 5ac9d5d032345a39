#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace seqchess {

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs the command line tool. Exit codes: 0 success, 1 analysis error,
/// 2 usage error (bad flags, missing inputs).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& p);

}  // namespace seqchess
