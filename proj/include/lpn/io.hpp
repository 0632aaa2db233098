#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace lpn {

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);
/// Parses a full string as a double; throws std::invalid_argument otherwise.
double parse_double(std::string_view text);

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

std::vector<std::string_view> split(std::string_view line, char sep);

/// 64-bit FNV-1a, as 16 hex digits.
std::string fnv1a_hex(std::string_view data);

/// Runs body(i) for i in [0, n) on up to `workers` threads. Exceptions are rethrown
/// (the one from the lowest index wins).
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body);

}  // namespace lpn
