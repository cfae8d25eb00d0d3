#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oneshot/image.hpp"

namespace oneshot {

/// A labeled image collection. Class index k names class_names[k].
struct Corpus {
  std::vector<std::string> class_names;
  std::vector<LabeledImage> images;

  std::size_t num_classes() const noexcept { return class_names.size(); }
};

/// Load a corpus from either
///   - a directory tree `root/<class_name>/<image files>` (PNG or binary PPM), or
///   - a corpus archive file (see write_corpus_archive).
/// Every image is resized to resize x resize and clipped to [0, 1]. Class
/// indices follow sorted class-name order; files within a class are read in
/// sorted filename order.
/// Throws IoError on a missing path or unreadable image and InvalidArgument
/// when fewer than 2 classes are found or `resize` is not a power of two >= 16.
Corpus load_corpus(const std::filesystem::path& path, std::size_t resize);

/// Archive layout: a one-line JSON manifest
///   {"format":"oneshot-corpus","version":1,"classes":[...],
///    "entries":[[offset,H,W,label],...]}
/// followed by the concatenated channel-major float32 little-endian pixel
/// blobs; `offset` counts floats from the start of the blob section.
void write_corpus_archive(const Corpus& corpus, const std::filesystem::path& path);

/// Writes `root/<class_name>/<index>.png` for every image.
void write_corpus_tree(const Corpus& corpus, const std::filesystem::path& root);

struct ShapesCorpusSpec {
  std::size_t per_class = 500;
  std::size_t side = 32;
  std::uint64_t seed = 7;
};

/// Procedurally generated 10-class corpus of coloured shapes and textures on
/// noisy gradient backgrounds (disk, square, triangle, plus, ring,
/// horizontal stripes, vertical stripes, checkerboard, diagonal cross, dots).
/// Deterministic in `spec`.
Corpus generate_shapes_corpus(const ShapesCorpusSpec& spec);

}  // namespace oneshot
