#include "archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "oneshot/error.hpp"

namespace oneshot::detail {
namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

}  // namespace

void ensure_parent_dir(const std::filesystem::path& path) {
  const auto parent = path.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

std::uint64_t write_archive(const std::filesystem::path& path, const nlohmann::json& manifest,
                            std::span<const float> payload) {
  ensure_parent_dir(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string header = manifest.dump();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.put('\n');
  std::vector<std::uint32_t> words(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(payload[i]));
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw IoError("write failed for " + path.string());
  return static_cast<std::uint64_t>(payload.size()) * 4;
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw IoError("empty archive " + path.string());
  Archive a;
  try {
    a.manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad manifest in " + path.string() + ": " + e.what());
  }
  std::vector<char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (rest.size() % 4 != 0) throw IoError("payload of " + path.string() + " is not a whole number of floats");
  a.payload.resize(rest.size() / 4);
  for (std::size_t i = 0; i < a.payload.size(); ++i) {
    std::uint32_t w;
    std::memcpy(&w, rest.data() + i * 4, 4);
    a.payload[i] = std::bit_cast<float>(to_le(w));
  }
  return a;
}

int expect_format(const nlohmann::json& manifest, const char* format) {
  if (!manifest.contains("format") || manifest["format"] != format) {
    throw IoError(std::string("archive is not a ") + format + " archive");
  }
  return manifest.value("version", 1);
}

}  // namespace oneshot::detail
