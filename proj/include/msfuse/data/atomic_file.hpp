#pragma once

#include <filesystem>
#include <string_view>

namespace msfuse {

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never see a partial file. Throws InputError on I/O failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same float.
std::string format_float(float v);

}  // namespace msfuse
