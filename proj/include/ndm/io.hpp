#pragma once

#include <filesystem>
#include <string>

namespace ndm {

/// Throws Errc::io when the file cannot be opened.
std::string read_text_file(const std::filesystem::path& path);

/// Writes through a sibling temporary file and renames it into place, so
/// readers never observe a partially written file.
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace ndm
