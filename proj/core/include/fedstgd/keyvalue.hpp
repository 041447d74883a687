#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fedstgd {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses flat `key=value` text. Blank lines and lines starting with '#'
/// are skipped; surrounding whitespace is trimmed. Throws ConfigError on a
/// line without '=' or with an empty key.
KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);

std::string format_key_values(const KeyValues& entries);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

/// Strict scalar parsing; the whole string must be consumed.
double parse_double(std::string_view text, std::string_view what);
std::size_t parse_size(std::string_view text, std::string_view what);
std::uint64_t parse_u64(std::string_view text, std::string_view what);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

} // namespace fedstgd
