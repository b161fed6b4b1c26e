#pragma once

// Command layer behind the `tta` executable. Each stage reads a RunConfig,
// writes its artifacts under the output directory and records itself in
// <out>/manifest.json.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tta_cli/config.hpp"

namespace tta::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Version string stamped into manifests.
std::string code_version();

struct Artifact {
  std::string path;  // relative to the output directory
  std::string kind;
};

struct StageRecord {
  std::string stage;
  std::vector<Artifact> artifacts;
  double wall_clock_s = 0.0;
  std::vector<std::pair<std::string, std::uint64_t>> seeds;
};

/// Stage results also land in the manifest; returning them keeps callers
/// (tests, scripts) off the file system for bookkeeping.
StageRecord cmd_train(const RunConfig& cfg, std::ostream& log);
StageRecord cmd_reduce(const RunConfig& cfg, std::ostream& log);
StageRecord cmd_generate(const RunConfig& cfg, std::ostream& log);
StageRecord cmd_analyze(const RunConfig& cfg, std::ostream& log);
StageRecord cmd_duality(const RunConfig& cfg, std::ostream& log);

/// Full command line entry point. Never throws; returns an exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tta::cli
