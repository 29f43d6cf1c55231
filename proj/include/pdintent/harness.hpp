#pragma once

// Command-line orchestration: every subcommand writes its artifacts plus a
// run manifest into --out-dir, and can be rerun from that manifest.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdintent/classifiers.hpp"

namespace pdintent {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitRuntime = 1,
  kExitUsage = 2,
  kExitValidation = 3,
};

/// Runs one subcommand. `args` excludes the program name, e.g.
/// {"simulate", "--pairing", "ALLD:ALLC", "--lambda", "10"}. Failures are
/// reported on `err` as a JSON object {"error": {...}}.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_command(const std::vector<std::string>& args);

/// File name of the manifest a subcommand writes next to its artifacts.
std::string manifest_name(const std::string& subcommand);

/// Inclusive macro-F1 band a kind must land in on the default corpus.
struct F1Band {
  double low = 0.0;
  double high = 1.0;
  bool contains(double f1) const { return f1 >= low && f1 <= high; }
};
F1Band acceptance_band(ClassifierKind kind);

}  // namespace pdintent
