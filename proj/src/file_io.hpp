#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace robdet::detail {

std::string read_file(const std::filesystem::path& path);

/// Writes to `path.tmp` then renames over `path`; the temp file is removed on
/// failure.
void write_atomically(const std::filesystem::path& path, std::string_view data);

}  // namespace robdet::detail
