#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace pkgscope {

std::string read_file(const std::filesystem::path& path);
/// Writes `data` to `path`, creating parent directories. Throws IoError.
void write_file(const std::filesystem::path& path, std::string_view data);

std::uint64_t fnv1a64(std::string_view data) noexcept;
std::string hex64(std::uint64_t value);

std::string_view trim(std::string_view s) noexcept;
std::string to_lower(std::string_view s);

}  // namespace pkgscope
