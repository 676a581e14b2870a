#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace nasdet {

namespace fs = std::filesystem;

/// Writes to a temporary sibling and renames it over `path`, so readers never
/// see a partial file. Creates missing parent directories. Throws IoError.
void write_file_atomic(const fs::path& path, std::string_view bytes);

/// Throws IoError if the file cannot be read.
std::string read_file(const fs::path& path);

}  // namespace nasdet
