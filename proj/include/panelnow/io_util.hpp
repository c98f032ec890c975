#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace panelnow::io {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Split one CSV line; double quotes group fields containing commas.
std::vector<std::string> split_csv_line(std::string_view line);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

/// FNV-1a, used for config and output fingerprints in run manifests.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

/// splitmix64 step; derives independent RNG seeds from (seed, stream index).
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

} // namespace panelnow::io
