#include "oneshot/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

namespace oneshot {

Image crop_resize(const Image& src, double top, double left, double h, double w, std::size_t out_h,
                  std::size_t out_w) {
  if (src.height == 0 || src.width == 0) throw InvalidArgument("crop_resize: empty source image");
  Image out(src.channels, out_h, out_w);
  const double sy = h / static_cast<double>(out_h), sx = w / static_cast<double>(out_w);
  const double max_y = static_cast<double>(src.height - 1), max_x = static_cast<double>(src.width - 1);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp(top + (static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp(left + (static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1)) +
                         wy * ((1 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1));
        out.at(c, oy, ox) = static_cast<float>(v);
      }
    }
  }
  return out;
}

void clip01(Image& img) {
  for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

nn::Tensor<float> to_batch(std::span<const Image* const> images) {
  if (images.empty()) return nn::Tensor<float>({0, 3, 0, 0});
  const Image& first = *images.front();
  nn::Tensor<float> t({images.size(), first.channels, first.height, first.width});
  const std::size_t stride = first.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i]->same_shape(first)) throw InvalidArgument("to_batch: images differ in shape");
    std::copy(images[i]->pixels.begin(), images[i]->pixels.end(), t.data() + i * stride);
  }
  return t;
}

nn::Tensor<float> to_batch(std::span<const Image> images) {
  std::vector<const Image*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& im : images) ptrs.push_back(&im);
  return to_batch(std::span<const Image* const>(ptrs));
}

std::vector<Image> from_batch(const nn::Tensor<float>& batch) {
  if (batch.rank() != 4) throw InvalidArgument("from_batch: expected NCHW tensor");
  std::vector<Image> out;
  const std::size_t n = batch.dim(0);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Image im(batch.dim(1), batch.dim(2), batch.dim(3));
    std::copy(batch.data() + i * im.size(), batch.data() + (i + 1) * im.size(), im.pixels.begin());
    out.push_back(std::move(im));
  }
  return out;
}

namespace {

Image from_interleaved_rgb8(const unsigned char* data, std::size_t h, std::size_t w) {
  Image img(3, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(data[(y * w + x) * 3 + c]) / 255.0f;
    }
  }
  return img;
}

Image read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("unreadable image " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("unreadable image " + path.string() + ": " + msg);
  }
  return from_interleaved_rgb8(buffer.data(), image.height, image.width);
}

std::string next_ppm_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("unreadable image " + path.string());
  if (next_ppm_token(in) != "P6") throw IoError("unreadable image " + path.string() + ": not a binary PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_ppm_token(in));
    h = std::stoul(next_ppm_token(in));
    maxval = std::stoul(next_ppm_token(in));
  } catch (const std::exception&) {
    throw IoError("unreadable image " + path.string() + ": bad PPM header");
  }
  if (maxval == 0 || maxval > 255) throw IoError("unreadable image " + path.string() + ": unsupported maxval");
  std::vector<unsigned char> data(w * h * 3);
  if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()))) {
    throw IoError("unreadable image " + path.string() + ": truncated PPM");
  }
  Image img = from_interleaved_rgb8(data.data(), h, w);
  if (maxval != 255) {
    for (auto& v : img.pixels) v = v * 255.0f / static_cast<float>(maxval);
  }
  return img;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm") return read_ppm(path);
  throw IoError("unreadable image " + path.string() + ": unsupported format");
}

void write_png(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 3) throw InvalidArgument("write_png: expected a 3-channel image");
  std::vector<unsigned char> buffer(img.height * img.width * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        buffer[(y * img.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot write " + path.string() + ": " + image.message);
  }
}

}  // namespace oneshot
