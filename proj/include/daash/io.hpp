#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace daash {

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary and renames, so readers never see a
/// partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
std::map<std::string, std::string> parse_key_values(std::string_view text);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& what);
long long parse_int(const std::string& s, const std::string& what);

}  // namespace daash
