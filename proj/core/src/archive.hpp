#pragma once

// Manifest-plus-blob container shared by every on-disk artifact: one line of
// JSON, a newline, then 32-bit little-endian IEEE-754 floats.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

namespace oneshot::detail {

struct Archive {
  nlohmann::json manifest;
  std::vector<float> payload;
};

/// Returns the number of payload bytes written (manifest excluded).
std::uint64_t write_archive(const std::filesystem::path& path, const nlohmann::json& manifest,
                            std::span<const float> payload);

Archive read_archive(const std::filesystem::path& path);

/// Verify manifest["format"] and return the manifest's version.
int expect_format(const nlohmann::json& manifest, const char* format);

void ensure_parent_dir(const std::filesystem::path& path);

}  // namespace oneshot::detail
