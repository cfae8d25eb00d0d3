#include "oneshot/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "archive.hpp"
#include "oneshot/rng.hpp"

namespace fs = std::filesystem;

namespace oneshot {
namespace {

void check_resize(std::size_t resize) {
  if (resize < 16 || !is_power_of_two(resize)) {
    throw InvalidArgument("resize must be a power of two >= 16, got " + std::to_string(resize));
  }
}

void require_classes(std::size_t n) {
  if (n < 2) throw InvalidArgument("corpus has fewer than 2 classes");
}

Image normalize(Image img, std::size_t side) {
  if (img.height != side || img.width != side) img = resize(img, side, side);
  clip01(img);
  return img;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm";
}

Corpus load_tree(const fs::path& root, std::size_t side) {
  Corpus corpus;
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().front() != '.') {
      class_dirs.push_back(entry.path());
    }
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  require_classes(class_dirs.size());
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    corpus.class_names.push_back(class_dirs[k].filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[k])) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      corpus.images.push_back({normalize(read_image(f), side), static_cast<int>(k)});
    }
  }
  return corpus;
}

Corpus load_archive(const fs::path& path, std::size_t side) {
  auto a = detail::read_archive(path);
  detail::expect_format(a.manifest, "oneshot-corpus");
  Corpus corpus;
  corpus.class_names = a.manifest.at("classes").get<std::vector<std::string>>();
  require_classes(corpus.class_names.size());
  for (const auto& e : a.manifest.at("entries")) {
    const auto offset = e.at(0).get<std::size_t>();
    const auto h = e.at(1).get<std::size_t>();
    const auto w = e.at(2).get<std::size_t>();
    const auto label = e.at(3).get<int>();
    if (label < 0 || static_cast<std::size_t>(label) >= corpus.class_names.size()) {
      throw IoError("corpus archive entry has label outside the class list");
    }
    Image img(3, h, w);
    if (offset + img.size() > a.payload.size()) throw IoError("corpus archive entry exceeds payload");
    std::copy_n(a.payload.begin() + static_cast<std::ptrdiff_t>(offset), img.size(), img.pixels.begin());
    if (!nn::all_finite<float>(img.pixels)) throw IoError("corpus archive entry has non-finite pixels");
    corpus.images.push_back({normalize(std::move(img), side), label});
  }
  return corpus;
}

}  // namespace

Corpus load_corpus(const fs::path& path, std::size_t resize) {
  check_resize(resize);
  if (!fs::exists(path)) throw IoError("corpus path does not exist: " + path.string());
  return fs::is_directory(path) ? load_tree(path, resize) : load_archive(path, resize);
}

void write_corpus_archive(const Corpus& corpus, const fs::path& path) {
  nlohmann::json entries = nlohmann::json::array();
  std::vector<float> blob;
  for (const auto& li : corpus.images) {
    if (li.image.channels != 3) throw InvalidArgument("corpus archive images must have 3 channels");
    entries.push_back({blob.size(), li.image.height, li.image.width, li.label});
    blob.insert(blob.end(), li.image.pixels.begin(), li.image.pixels.end());
  }
  nlohmann::json manifest = {{"format", "oneshot-corpus"},
                             {"version", 1},
                             {"classes", corpus.class_names},
                             {"entries", entries}};
  detail::write_archive(path, manifest, blob);
}

void write_corpus_tree(const Corpus& corpus, const fs::path& root) {
  std::vector<std::size_t> counter(corpus.num_classes(), 0);
  for (const auto& name : corpus.class_names) fs::create_directories(root / name);
  char buf[32];
  for (const auto& li : corpus.images) {
    const auto k = static_cast<std::size_t>(li.label);
    std::snprintf(buf, sizeof(buf), "%05zu.png", counter[k]++);
    write_png(li.image, root / corpus.class_names.at(k) / buf);
  }
}

// ---- procedural corpus ------------------------------------------------------

namespace {

constexpr std::array<const char*, 10> kShapeNames = {
    "00_disk",  "01_square", "02_triangle", "03_plus",    "04_ring",
    "05_hstripes", "06_vstripes", "07_checker", "08_diagcross", "09_dots"};

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double gaussian(Rng& rng) {
  const double u1 = std::max(uniform01(rng), 1e-300), u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct ShapeParams {
  int kind = 0;
  double cx = 0.5, cy = 0.5, r = 0.25, theta = 0, period = 0.2;
  std::vector<std::array<double, 3>> dots;  // x, y, radius
};

double frac(double x) { return x - std::floor(x); }

bool plus_shape(double px, double py, double r) {
  const double w = r * 0.35;
  return (std::abs(px) <= w && std::abs(py) <= r) || (std::abs(py) <= w && std::abs(px) <= r);
}

bool inside(const ShapeParams& s, double u, double v) {
  const double dx = u - s.cx, dy = v - s.cy;
  const double c = std::cos(s.theta), sn = std::sin(s.theta);
  const double px = c * dx + sn * dy, py = -sn * dx + c * dy;
  switch (s.kind) {
    case 0:
      return px * px + py * py <= s.r * s.r;
    case 1:
      return std::abs(px) <= 0.85 * s.r && std::abs(py) <= 0.85 * s.r;
    case 2: {
      const double R = 1.2 * s.r;
      std::array<std::array<double, 2>, 3> vtx;
      for (int i = 0; i < 3; ++i) {
        const double a = std::numbers::pi / 2 + i * 2 * std::numbers::pi / 3;
        vtx[i] = {R * std::cos(a), R * std::sin(a)};
      }
      bool pos = false, neg = false;
      for (int i = 0; i < 3; ++i) {
        const auto& a = vtx[i];
        const auto& b = vtx[(i + 1) % 3];
        const double cross = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
        pos |= cross > 0;
        neg |= cross < 0;
      }
      return !(pos && neg);
    }
    case 3:
    case 8:
      return plus_shape(px, py, s.r);
    case 4: {
      const double d2 = px * px + py * py;
      return d2 <= s.r * s.r && d2 >= 0.3 * s.r * s.r;
    }
    case 5:
      return frac(py / s.period) < 0.5;
    case 6:
      return frac(px / s.period) < 0.5;
    case 7:
      return (static_cast<long>(std::floor(px / s.period)) + static_cast<long>(std::floor(py / s.period))) % 2 == 0;
    case 9:
      for (const auto& d : s.dots) {
        if ((u - d[0]) * (u - d[0]) + (v - d[1]) * (v - d[1]) <= d[2] * d[2]) return true;
      }
      return false;
    default:
      return false;
  }
}

Image render_shape(int kind, std::size_t side, Rng& rng) {
  ShapeParams s;
  s.kind = kind;
  s.cx = uniform(rng, 0.3, 0.7);
  s.cy = uniform(rng, 0.3, 0.7);
  s.r = uniform(rng, 0.18, 0.32);
  s.theta = uniform(rng, 0, 2 * std::numbers::pi);
  if (kind == 3 || kind >= 5) s.theta = uniform(rng, -0.25, 0.25);
  if (kind == 8) s.theta += std::numbers::pi / 4;
  s.period = kind == 7 ? uniform(rng, 0.1, 0.2) : uniform(rng, 0.12, 0.25);
  if (kind == 9) {
    const auto n = 5 + uniform_index(rng, 4);
    for (std::size_t i = 0; i < n; ++i) {
      s.dots.push_back({uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85), uniform(rng, 0.04, 0.07)});
    }
  }

  std::array<double, 3> bg{}, fg{};
  for (auto& b : bg) b = uniform(rng, 0.1, 0.9);
  for (int attempt = 0; attempt < 100; ++attempt) {
    double diff = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      fg[c] = uniform01(rng);
      diff += std::abs(fg[c] - bg[c]);
    }
    if (diff / 3 >= 0.3) break;
  }
  const double phi = uniform(rng, 0, 2 * std::numbers::pi);
  const double amp = uniform(rng, 0, 0.25);

  Image img(3, side, side);
  const double inv = 1.0 / static_cast<double>(side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          hits += inside(s, (static_cast<double>(x) + 0.25 + 0.5 * sx) * inv,
                         (static_cast<double>(y) + 0.25 + 0.5 * sy) * inv);
        }
      }
      const double cover = hits / 4.0;
      const double u = (static_cast<double>(x) + 0.5) * inv - 0.5, v = (static_cast<double>(y) + 0.5) * inv - 0.5;
      const double grad = amp * (u * std::cos(phi) + v * std::sin(phi));
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = (1 - cover) * (bg[c] + grad) + cover * fg[c] + 0.03 * gaussian(rng);
        img.at(c, y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

Corpus generate_shapes_corpus(const ShapesCorpusSpec& spec) {
  check_resize(spec.side);
  Corpus corpus;
  corpus.class_names.assign(kShapeNames.begin(), kShapeNames.end());
  corpus.images.reserve(spec.per_class * kShapeNames.size());
  for (std::size_t k = 0; k < kShapeNames.size(); ++k) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      Rng rng(derive_seed(spec.seed, "shape", k * 1'000'003ULL + i));
      corpus.images.push_back({render_shape(static_cast<int>(k), spec.side, rng), static_cast<int>(k)});
    }
  }
  return corpus;
}

}  // namespace oneshot
