#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "oneshot/nn/tensor.hpp"

namespace oneshot {

/// Channel-major (C x H x W) floating-point image with values nominally in [0, 1].
struct Image {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  std::size_t size() const noexcept { return pixels.size(); }
  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  bool same_shape(const Image& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct LabeledImage {
  Image image;
  int label = 0;
};

constexpr bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

/// Bilinear resize of the window [top, top+h) x [left, left+w) to out_h x out_w,
/// using half-pixel centers and edge clamping. Window bounds may be fractional.
Image crop_resize(const Image& src, double top, double left, double h, double w, std::size_t out_h,
                  std::size_t out_w);

inline Image resize(const Image& src, std::size_t out_h, std::size_t out_w) {
  return crop_resize(src, 0, 0, static_cast<double>(src.height), static_cast<double>(src.width), out_h,
                     out_w);
}

void clip01(Image& img);

/// Stack same-shape images into an N x C x H x W tensor.
nn::Tensor<float> to_batch(std::span<const Image> images);
nn::Tensor<float> to_batch(std::span<const Image* const> images);
/// Split an N x C x H x W tensor back into images.
std::vector<Image> from_batch(const nn::Tensor<float>& batch);

/// Raster IO. PNG (8/16-bit, any colour type) and binary PPM are supported;
/// grayscale is expanded to RGB and alpha dropped.
Image read_image(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

}  // namespace oneshot
