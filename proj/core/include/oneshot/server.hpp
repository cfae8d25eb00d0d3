#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "oneshot/distiller.hpp"

namespace oneshot {

struct CombinedSet {
  std::vector<Distillate> distillates;
  /// Client ids in ascending order and the number of distillates each sent.
  std::vector<int> client_ids;
  std::vector<std::size_t> per_client_counts;
  nn::Shape latent_shape;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return distillates.size(); }
  bool empty() const noexcept { return distillates.empty(); }
};

/// Concatenates sets in ascending client_id order, so the result does not
/// depend on the order sets are passed in. Throws on an empty list or on
/// latent shape / class count mismatches.
CombinedSet aggregate(std::span<const DistillateSet> sets);

struct ServerTrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  nn::KlDirection direction = nn::KlDirection::kTeacherToStudent;
  /// Evaluate on the eval set every this many epochs (and after the last); 0 disables.
  std::size_t eval_every = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  /// NaN on epochs without an evaluation.
  double accuracy = 0.0;
};

struct ServerResult {
  LocalModel model;
  std::vector<EpochRecord> trace;
};

/// KL distillation of the decoded distillates' soft labels into a fresh
/// classifier built from `spec`, by SGD with momentum over seeded shuffled
/// mini-batches. Latents are decoded per batch; the decoder is read-only.
ServerResult train_server(const CombinedSet& combined, const Autoencoder& ae, const ModelSpec& spec,
                          const ServerTrainConfig& cfg, std::span<const LabeledImage> eval_set = {});

/// Columnar text log: header "epoch\tloss\taccuracy" then one row per epoch.
void write_trace(std::span<const EpochRecord> trace, const std::filesystem::path& path);

/// Uniform elementwise parameter average. Throws if architectures differ.
LocalModel fedavg_oneshot(std::span<const LocalModel> models);

/// Top-1 accuracy of the mean of the members' softmax outputs.
double ensemble_eval(std::span<const LocalModel> models, std::span<const LabeledImage> dataset);

}  // namespace oneshot
