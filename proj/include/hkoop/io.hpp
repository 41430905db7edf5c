#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace hkoop {

/// Writes to a sibling temp file and renames it over `path`, so the final
/// name only ever holds complete content.
void atomic_write(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace hkoop
