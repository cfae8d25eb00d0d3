#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "oneshot/model.hpp"

namespace oneshot {

/// A candidate or selected image segment, resized to model resolution.
struct Patch {
  Image pixels;
  std::size_t source_index = 0;  // index of the originating image within its shard
  int label = 0;
  double score = 0.0;  // -cross-entropy under the observer model
};

struct SelectionSpec {
  std::size_t ipc = 50;  // images per class
  std::size_t patches_per_image = 4;  // K
  std::pair<double, double> scale_range{0.08, 1.0};  // crop area fraction
  std::pair<double, double> aspect_range{3.0 / 4.0, 4.0 / 3.0};
  bool keep_underfull = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CoreSet {
  int client_id = 0;
  std::size_t ipc = 0;
  /// Grouped by ascending class; within a class sorted by descending score,
  /// ties broken by ascending source_index.
  std::vector<Patch> patches;
  std::set<int> covered_classes;

  std::size_t size() const noexcept { return patches.size(); }
  bool empty() const noexcept { return patches.empty(); }
};

/// Crop window in source pixel coordinates.
struct CropBox {
  std::size_t top = 0, left = 0, height = 0, width = 0;
};

/// Random-resized-crop box sampler: area fraction uniform in scale_range,
/// log-uniform aspect ratio in aspect_range, up to 10 attempts, then a
/// centre crop with the aspect ratio clamped into range.
CropBox sample_crop(std::size_t height, std::size_t width, const SelectionSpec& spec, Rng& rng);

/// K random-resized crops of `image`, bilinearly resized to `resolution`.
/// Deterministic in (spec.seed, image_index).
std::vector<Patch> extract_patches(const LabeledImage& image, std::size_t image_index, const SelectionSpec& spec,
                                   std::size_t resolution);

/// -CE(softmax(f(h(patch))), label). Throws if the label is outside [0, C).
double score_patch(const LocalModel& model, const Patch& patch);

/// Batched score_patch; writes each patch's score.
void score_patches(const LocalModel& model, std::span<Patch> patches);

/// Two-level selection. Level 1 keeps each image's best-scoring candidate;
/// level 2 keeps the top-ipc survivors per class ordered by (score desc,
/// source_index asc). Classes with fewer than ipc survivors are dropped
/// unless spec.keep_underfull is set, in which case all survivors are kept.
/// Throws on an empty shard.
CoreSet select_coreset(const ClientShard& shard, const LocalModel& model, const SelectionSpec& spec);

/// Ablation: the same two-level structure with the observer replaced by
/// seeded random priorities (a random crop per image, random ipc per class).
CoreSet select_coreset_random(const ClientShard& shard, const SelectionSpec& spec, std::size_t resolution);

/// Level-2 rule applied to already-chosen per-image survivors. Exposed for
/// reuse by the ablation and by oracles.
CoreSet select_top_per_class(std::vector<Patch> survivors, std::size_t ipc, bool keep_underfull);

/// Core-Set archive: manifest (client_id, ipc, K, seed, per-patch
/// label/score/source, patch shape) followed by the pixel blobs.
std::uint64_t save_coreset(const CoreSet& coreset, const SelectionSpec& spec, const std::filesystem::path& path);
CoreSet load_coreset(const std::filesystem::path& path);

/// Save/load a plain image list (perturbed patches) in the same convention.
std::uint64_t save_images(std::span<const Image> images, const std::filesystem::path& path);
std::vector<Image> load_images(const std::filesystem::path& path);

}  // namespace oneshot
