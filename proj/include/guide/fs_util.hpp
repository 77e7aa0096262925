#pragma once

#include <filesystem>
#include <string>

namespace guide {

std::string read_file(const std::filesystem::path& path);

// Write to a sibling temp file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace guide
