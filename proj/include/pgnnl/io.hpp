#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace pgnnl {

/// Formats a double with 17 significant digits (round-trip exact).
std::string format_double(double v);

/// Writes `contents` to a temporary sibling file and renames it over `path`.
/// Parent directories are created as needed.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a; stable across platforms, used for config hashes.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

/// Warning sink. Defaults to stderr; tests install a capturing handler.
using WarningHandler = std::function<void(const std::string&)>;
void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

}  // namespace pgnnl
