#include "oneshot/coreset.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "archive.hpp"

namespace oneshot {

void SelectionSpec::validate() const {
  if (ipc == 0) throw InvalidArgument("ipc must be positive");
  if (patches_per_image == 0) throw InvalidArgument("patches per image (K) must be >= 1");
  const auto [lo, hi] = scale_range;
  if (!(lo > 0.0 && lo <= hi && hi <= 1.0)) throw InvalidArgument("scale_range must satisfy 0 < lo <= hi <= 1");
  const auto [alo, ahi] = aspect_range;
  if (!(alo > 0.0 && alo <= ahi)) throw InvalidArgument("aspect_range must satisfy 0 < lo <= hi");
}

CropBox sample_crop(std::size_t height, std::size_t width, const SelectionSpec& spec, Rng& rng) {
  const double area = static_cast<double>(height * width);
  const double log_lo = std::log(spec.aspect_range.first), log_hi = std::log(spec.aspect_range.second);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * (spec.scale_range.first +
                                  (spec.scale_range.second - spec.scale_range.first) * uniform01(rng));
    const double aspect = std::exp(log_lo + (log_hi - log_lo) * uniform01(rng));
    const auto w = static_cast<long>(std::lround(std::sqrt(target * aspect)));
    const auto h = static_cast<long>(std::lround(std::sqrt(target / aspect)));
    if (w > 0 && h > 0 && static_cast<std::size_t>(w) <= width && static_cast<std::size_t>(h) <= height) {
      CropBox box;
      box.height = static_cast<std::size_t>(h);
      box.width = static_cast<std::size_t>(w);
      box.top = static_cast<std::size_t>(uniform_index(rng, height - box.height + 1));
      box.left = static_cast<std::size_t>(uniform_index(rng, width - box.width + 1));
      return box;
    }
  }
  const double in_ratio = static_cast<double>(width) / static_cast<double>(height);
  CropBox box{0, 0, height, width};
  if (in_ratio < spec.aspect_range.first) {
    box.height = static_cast<std::size_t>(std::lround(static_cast<double>(width) / spec.aspect_range.first));
  } else if (in_ratio > spec.aspect_range.second) {
    box.width = static_cast<std::size_t>(std::lround(static_cast<double>(height) * spec.aspect_range.second));
  }
  box.top = (height - box.height) / 2;
  box.left = (width - box.width) / 2;
  return box;
}

std::vector<Patch> extract_patches(const LabeledImage& image, std::size_t image_index, const SelectionSpec& spec,
                                   std::size_t resolution) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "patch", image_index));
  std::vector<Patch> out;
  out.reserve(spec.patches_per_image);
  for (std::size_t k = 0; k < spec.patches_per_image; ++k) {
    const auto box = sample_crop(image.image.height, image.image.width, spec, rng);
    Patch p;
    p.pixels = crop_resize(image.image, static_cast<double>(box.top), static_cast<double>(box.left),
                           static_cast<double>(box.height), static_cast<double>(box.width), resolution, resolution);
    clip01(p.pixels);
    p.source_index = image_index;
    p.label = image.label;
    out.push_back(std::move(p));
  }
  return out;
}

void score_patches(const LocalModel& model, std::span<Patch> patches) {
  const std::size_t c = model.num_classes();
  for (const auto& p : patches) {
    if (p.label < 0 || static_cast<std::size_t>(p.label) >= c) {
      throw InvalidArgument("patch label " + std::to_string(p.label) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  constexpr std::size_t kChunk = 256;
  for (std::size_t b = 0; b < patches.size(); b += kChunk) {
    const std::size_t e = std::min(patches.size(), b + kChunk);
    std::vector<const Image*> imgs;
    for (std::size_t i = b; i < e; ++i) imgs.push_back(&patches[i].pixels);
    const auto logp = nn::log_softmax(predict_logits(model, to_batch(std::span<const Image* const>(imgs))));
    for (std::size_t i = b; i < e; ++i) {
      patches[i].score = static_cast<double>(logp[(i - b) * c + static_cast<std::size_t>(patches[i].label)]);
    }
  }
}

double score_patch(const LocalModel& model, const Patch& patch) {
  Patch copy = patch;
  score_patches(model, std::span<Patch>(&copy, 1));
  return copy.score;
}

CoreSet select_top_per_class(std::vector<Patch> survivors, std::size_t ipc, bool keep_underfull) {
  std::map<int, std::vector<Patch>> by_class;
  for (auto& p : survivors) by_class[p.label].push_back(std::move(p));
  CoreSet cs;
  cs.ipc = ipc;
  for (auto& [label, members] : by_class) {
    std::sort(members.begin(), members.end(), [](const Patch& a, const Patch& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.source_index < b.source_index;
    });
    if (members.size() < ipc && !keep_underfull) continue;
    const std::size_t take = std::min(ipc, members.size());
    for (std::size_t i = 0; i < take; ++i) cs.patches.push_back(std::move(members[i]));
    cs.covered_classes.insert(label);
  }
  return cs;
}

CoreSet select_coreset(const ClientShard& shard, const LocalModel& model, const SelectionSpec& spec) {
  spec.validate();
  if (shard.empty()) throw InvalidArgument("select_coreset: client " + std::to_string(shard.client_id) + " has an empty shard");
  const std::size_t res = model.spec().resolution;
  std::vector<Patch> survivors;
  survivors.reserve(shard.images.size());
  constexpr std::size_t kImagesPerChunk = 64;
  const std::size_t K = spec.patches_per_image;
  for (std::size_t b = 0; b < shard.images.size(); b += kImagesPerChunk) {
    const std::size_t e = std::min(shard.images.size(), b + kImagesPerChunk);
    std::vector<Patch> candidates;
    candidates.reserve((e - b) * K);
    for (std::size_t i = b; i < e; ++i) {
      auto c = extract_patches(shard.images[i], i, spec, res);
      std::move(c.begin(), c.end(), std::back_inserter(candidates));
    }
    score_patches(model, candidates);
    for (std::size_t i = 0; i < e - b; ++i) {
      std::size_t best = i * K;
      for (std::size_t k = 1; k < K; ++k) {
        if (candidates[i * K + k].score > candidates[best].score) best = i * K + k;
      }
      survivors.push_back(std::move(candidates[best]));
    }
  }
  auto cs = select_top_per_class(std::move(survivors), spec.ipc, spec.keep_underfull);
  cs.client_id = shard.client_id;
  return cs;
}

CoreSet select_coreset_random(const ClientShard& shard, const SelectionSpec& spec, std::size_t resolution) {
  spec.validate();
  if (shard.empty()) throw InvalidArgument("select_coreset_random: empty shard");
  std::vector<Patch> survivors;
  for (std::size_t i = 0; i < shard.images.size(); ++i) {
    auto candidates = extract_patches(shard.images[i], i, spec, resolution);
    Rng rng(derive_seed(spec.seed, "random-selection", i));
    auto pick = std::move(candidates[uniform_index(rng, candidates.size())]);
    pick.score = uniform01(rng);  // random priority stands in for the observer score
    survivors.push_back(std::move(pick));
  }
  auto cs = select_top_per_class(std::move(survivors), spec.ipc, spec.keep_underfull);
  cs.client_id = shard.client_id;
  return cs;
}

std::uint64_t save_coreset(const CoreSet& coreset, const SelectionSpec& spec, const std::filesystem::path& path) {
  nlohmann::json patches = nlohmann::json::array();
  std::vector<float> blob;
  nn::Shape shape{0, 0, 0};
  for (const auto& p : coreset.patches) {
    shape = {p.pixels.channels, p.pixels.height, p.pixels.width};
    patches.push_back({{"label", p.label}, {"score", p.score}, {"source_index", p.source_index}});
    blob.insert(blob.end(), p.pixels.pixels.begin(), p.pixels.pixels.end());
  }
  nlohmann::json manifest = {{"format", "oneshot-coreset"},
                             {"version", 1},
                             {"client_id", coreset.client_id},
                             {"ipc", coreset.ipc},
                             {"K", spec.patches_per_image},
                             {"seed", spec.seed},
                             {"patch_shape", shape},
                             {"covered_classes", coreset.covered_classes},
                             {"patches", patches}};
  return detail::write_archive(path, manifest, blob);
}

CoreSet load_coreset(const std::filesystem::path& path) {
  auto a = detail::read_archive(path);
  detail::expect_format(a.manifest, "oneshot-coreset");
  CoreSet cs;
  cs.client_id = a.manifest.at("client_id").get<int>();
  cs.ipc = a.manifest.at("ipc").get<std::size_t>();
  cs.covered_classes = a.manifest.at("covered_classes").get<std::set<int>>();
  const auto shape = a.manifest.at("patch_shape").get<nn::Shape>();
  const std::size_t stride = shape.at(0) * shape.at(1) * shape.at(2);
  const auto& entries = a.manifest.at("patches");
  if (entries.size() * stride != a.payload.size()) throw IoError("core-set payload size does not match manifest");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Patch p;
    p.label = entries[i].at("label").get<int>();
    p.score = entries[i].at("score").get<double>();
    p.source_index = entries[i].at("source_index").get<std::size_t>();
    p.pixels = Image(shape[0], shape[1], shape[2]);
    std::copy_n(a.payload.begin() + static_cast<std::ptrdiff_t>(i * stride), stride, p.pixels.pixels.begin());
    cs.patches.push_back(std::move(p));
  }
  return cs;
}

std::uint64_t save_images(std::span<const Image> images, const std::filesystem::path& path) {
  nlohmann::json shapes = nlohmann::json::array();
  std::vector<float> blob;
  for (const auto& im : images) {
    shapes.push_back({im.channels, im.height, im.width});
    blob.insert(blob.end(), im.pixels.begin(), im.pixels.end());
  }
  return detail::write_archive(path, {{"format", "oneshot-images"}, {"version", 1}, {"shapes", shapes}}, blob);
}

std::vector<Image> load_images(const std::filesystem::path& path) {
  auto a = detail::read_archive(path);
  detail::expect_format(a.manifest, "oneshot-images");
  std::vector<Image> out;
  std::size_t offset = 0;
  for (const auto& s : a.manifest.at("shapes")) {
    Image im(s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>());
    if (offset + im.size() > a.payload.size()) throw IoError("image archive payload too short");
    std::copy_n(a.payload.begin() + static_cast<std::ptrdiff_t>(offset), im.size(), im.pixels.begin());
    offset += im.size();
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace oneshot
