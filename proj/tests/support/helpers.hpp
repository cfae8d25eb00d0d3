#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "oneshot/image.hpp"
#include "oneshot/partition.hpp"
#include "oneshot/rng.hpp"

namespace testing {

inline oneshot::Image random_image(oneshot::Rng& rng, std::size_t c = 3, std::size_t h = 32, std::size_t w = 32) {
  oneshot::Image im(c, h, w);
  for (auto& v : im.pixels) v = static_cast<float>(oneshot::uniform01(rng));
  return im;
}

/// Two linearly separable classes: bright vs dark images with mild noise.
inline std::vector<oneshot::LabeledImage> two_class_toy(std::size_t per_class, std::uint64_t seed,
                                                        std::size_t side = 16) {
  oneshot::Rng rng(seed);
  std::vector<oneshot::LabeledImage> out;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    oneshot::Image im(3, side, side);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          const double base = label == 0 ? 0.25 : 0.75;
          im.at(c, y, x) = static_cast<float>(base + 0.2 * (oneshot::uniform01(rng) - 0.5));
        }
      }
    }
    out.push_back({std::move(im), label});
  }
  return out;
}

inline oneshot::ClientShard shard_of(std::vector<oneshot::LabeledImage> images, int id = 0) {
  oneshot::ClientShard s;
  s.client_id = id;
  int max_label = 0;
  for (const auto& li : images) max_label = std::max(max_label, li.label);
  s.class_histogram.assign(static_cast<std::size_t>(max_label) + 1, 0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    s.corpus_indices.push_back(i);
    ++s.class_histogram[static_cast<std::size_t>(images[i].label)];
  }
  s.images = std::move(images);
  return s;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("oneshot-test-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
