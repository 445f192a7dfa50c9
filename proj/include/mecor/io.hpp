#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mecor {

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);

/// Writes `contents` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partially written file. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Splits on `sep`, keeping empty fields.
std::vector<std::string> split(std::string_view text, char sep);

std::string_view trim(std::string_view text);

} // namespace mecor
