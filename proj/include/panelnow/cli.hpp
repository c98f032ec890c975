#pragma once

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace panelnow::cli {

enum ExitCode { ok = 0, validation_failure = 1, runtime_failure = 2 };

/// Reads a JSON config, resolving relative paths against its directory.
nlohmann::ordered_json load_config(const std::filesystem::path& path);

/// Applies "a.b.c=value"; value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::ordered_json& config, const std::string& assignment);

struct RunResult {
    std::filesystem::path output_dir;
    std::vector<std::string> outputs; ///< file names written, manifest excluded
};

/// Executes config["command"], writes its outputs and manifest.json into config["output_dir"].
RunResult run(const nlohmann::ordered_json& config, std::ostream& log);

/// Re-runs the config stored in a manifest into `out_dir` and compares output fingerprints.
/// Returns true when every output is byte-identical.
bool replay(const std::filesystem::path& manifest, const std::filesystem::path& out_dir, std::ostream& log);

/// Command-line entry point; returns the process exit code.
int main(int argc, char** argv);

} // namespace panelnow::cli
