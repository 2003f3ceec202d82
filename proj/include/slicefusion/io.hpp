#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace slicefusion {

/// Writes `contents` to a sibling temp file and renames it over `path`, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace slicefusion
