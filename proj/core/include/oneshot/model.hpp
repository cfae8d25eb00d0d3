#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "oneshot/image.hpp"
#include "oneshot/nn/loss.hpp"
#include "oneshot/nn/sequential.hpp"
#include "oneshot/partition.hpp"

namespace oneshot {

enum class Arch { kSmallConv, kResnetSmall };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& s);

/// Architecture and initialization of a classifier.
///
/// small_conv: one conv3x3 -> instance-norm -> relu -> 2x2 avg-pool block per
/// entry of `widths`, then global average pooling. resnet_small: conv stem
/// followed by three residual blocks (the last two stride 2) and global
/// pooling, eight weight layers counting the linear head. In both cases the
/// feature width is widths.back().
struct ModelSpec {
  Arch arch = Arch::kSmallConv;
  std::size_t num_classes = 10;
  std::size_t resolution = 32;
  std::vector<std::size_t> widths{32, 64, 128};
  std::uint64_t init_seed = 0;

  std::size_t feature_dim() const { return widths.back(); }
  void validate() const;
};

/// Feature extractor h followed by classification head f.
template <typename T>
struct Classifier {
  nn::Sequential<T> extractor;
  nn::Sequential<T> head;

  std::vector<nn::Tensor<T>*> parameters();
  std::vector<const nn::Tensor<T>*> parameters() const;
  nn::Gradients<T> zero_gradients() const;
};

template <typename T>
Classifier<T> build_classifier(const ModelSpec& spec);

extern template struct Classifier<float>;
extern template struct Classifier<double>;

struct SoftLabel {
  std::vector<float> probs;
};

/// A client (or server) classifier. Immutable once trained; inference is
/// const and safe to call concurrently.
class LocalModel {
 public:
  LocalModel() = default;
  explicit LocalModel(ModelSpec spec);
  LocalModel(ModelSpec spec, Classifier<float> net) : spec_(std::move(spec)), net_(std::move(net)) {}

  const ModelSpec& spec() const noexcept { return spec_; }
  Arch arch() const noexcept { return spec_.arch; }
  std::size_t feature_dim() const { return spec_.feature_dim(); }
  std::size_t num_classes() const noexcept { return spec_.num_classes; }

  Classifier<float>& net() noexcept { return net_; }
  const Classifier<float>& net() const noexcept { return net_; }
  std::size_t parameter_count() const;

  /// Throws InvalidArgument unless `batch` is N x 3 x R x R at this model's resolution.
  void check_input(const nn::Tensor<float>& batch) const;

 private:
  ModelSpec spec_;
  Classifier<float> net_;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainReport {
  double train_accuracy = 0.0;
  std::vector<double> epoch_loss;
  /// Set when the shard holds a single class (allowed; the non-IID extreme).
  bool single_class = false;
};

struct TrainedModel {
  LocalModel model;
  TrainReport report;
};

/// Mini-batch SGD (momentum, weight decay) on cross-entropy. The model is
/// initialized from spec.init_seed and batches are drawn with cfg.seed.
/// epochs == 0 returns the initialized model. Throws on an empty shard.
TrainedModel train_local(const ClientShard& shard, const ModelSpec& spec, const TrainConfig& cfg);

/// Same loop over an arbitrary labeled set, starting from `init`.
TrainedModel train_classifier(std::span<const LabeledImage> data, LocalModel init, const TrainConfig& cfg);

/// Row j is h(image_j). N == 0 gives a 0 x d matrix.
nn::Tensor<float> extract_features(const LocalModel& model, std::span<const Image> batch);
nn::Tensor<float> extract_features(const LocalModel& model, const nn::Tensor<float>& batch);

/// Logits f(h(x)).
nn::Tensor<float> predict_logits(const LocalModel& model, const nn::Tensor<float>& batch);

/// softmax(f(h(x))) at temperature 1.
std::vector<SoftLabel> predict_soft(const LocalModel& model, std::span<const Image> batch);
nn::Tensor<float> predict_proba(const LocalModel& model, const nn::Tensor<float>& batch);

/// Top-1 accuracy. Throws on an empty dataset.
double evaluate(const LocalModel& model, std::span<const LabeledImage> dataset);

/// Checkpoint: one-line JSON header (arch, d, C, resolution, seed, widths,
/// parameter table) followed by float32 little-endian parameter blobs.
/// Returns the parameter payload size in bytes.
std::uint64_t save_checkpoint(const LocalModel& model, const std::filesystem::path& path);
LocalModel load_checkpoint(const std::filesystem::path& path);

/// Bytes a checkpoint's parameter payload occupies (4 per scalar).
std::uint64_t checkpoint_payload_bytes(const LocalModel& model);

}  // namespace oneshot
