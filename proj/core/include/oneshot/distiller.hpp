#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "oneshot/coreset.hpp"

namespace oneshot {

enum class AeKind { kTrainedSmall, kRandomInit, kIdentityPassthrough };

std::string to_string(AeKind kind);
AeKind parse_ae_kind(const std::string& s);

/// Conv kinds: encoder conv3x3/2 (3->hidden) relu conv3x3/2 (hidden->c),
/// decoder up2 conv relu up2 conv sigmoid. Downsample factor is 4, so a
/// 32x32 image maps to c x 8 x 8. Identity passthrough keeps 3 x H x W.
struct AutoencoderSpec {
  AeKind kind = AeKind::kTrainedSmall;
  std::size_t resolution = 32;
  std::size_t latent_channels = 4;
  std::size_t hidden_channels = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AeTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;  // Adam
  std::uint64_t seed = 0;
};

class Autoencoder {
 public:
  /// Builds the networks for spec (random weights for conv kinds).
  explicit Autoencoder(AutoencoderSpec spec = {});

  const AutoencoderSpec& spec() const noexcept { return spec_; }
  AeKind kind() const noexcept { return spec_.kind; }
  std::size_t downsample_factor() const noexcept { return spec_.kind == AeKind::kIdentityPassthrough ? 1 : 4; }
  /// c x h' x w'
  nn::Shape latent_shape() const;
  std::size_t latent_size() const { return nn::shape_size(latent_shape()); }
  std::size_t parameter_count() const { return encoder_.parameter_count() + decoder_.parameter_count(); }

  const nn::Sequential<float>& encoder() const noexcept { return encoder_; }
  const nn::Sequential<float>& decoder() const noexcept { return decoder_; }
  nn::Sequential<float>& encoder() noexcept { return encoder_; }
  nn::Sequential<float>& decoder() noexcept { return decoder_; }

  /// 16-hex-digit FNV-1a over the spec and every parameter byte.
  std::string config_hash() const;

  /// Mean squared reconstruction error recorded by train_autoencoder (held-in sample).
  double train_error = 0.0;

 private:
  AutoencoderSpec spec_;
  nn::Sequential<float> encoder_, decoder_;
};

/// Trains a conv autoencoder with Adam on pixel MSE over a server-side proxy
/// sample. Kinds other than trained_small are returned untrained. Throws on
/// an empty sample.
Autoencoder train_autoencoder(std::span<const Image> sample, const AutoencoderSpec& spec, const AeTrainConfig& cfg);

/// N x 3 x H x W -> N x c x h' x w'. Throws InvalidArgument on shape mismatch.
nn::Tensor<float> encode(const Autoencoder& ae, const nn::Tensor<float>& images);
std::vector<float> encode(const Autoencoder& ae, const Image& image);

/// N x c x h' x w' -> N x 3 x H x W clipped to [0, 1].
nn::Tensor<float> decode(const Autoencoder& ae, const nn::Tensor<float>& latents);
Image decode(const Autoencoder& ae, std::span<const float> latent);

/// Mean per-pixel squared error of decode(encode(x)) over `images`.
double reconstruction_error(const Autoencoder& ae, std::span<const Image> images);

std::uint64_t save_autoencoder(const Autoencoder& ae, const std::filesystem::path& path);
Autoencoder load_autoencoder(const std::filesystem::path& path);

struct SynthesisConfig {
  std::size_t T_syn = 50;
  double eta_syn = 0.1;
  std::size_t batch_size = 50;
  /// Per-sample feature matching instead of the batch-mean form.
  bool per_sample = false;
  /// Halve the step (up to 10 times) whenever a step would raise the batch loss.
  bool step_halving = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DistillateOrigin {
  int client_id = 0;
  int label = 0;
  std::size_t coreset_index = 0;
};

struct Distillate {
  std::vector<float> latent;
  SoftLabel soft_label;
  DistillateOrigin origin;
};

struct DistillateSet {
  int client_id = 0;
  nn::Shape latent_shape;
  std::size_t num_classes = 0;
  AeKind ae_kind = AeKind::kTrainedSmall;
  std::string ae_hash;
  std::uint64_t seed = 0;
  std::vector<Distillate> items;
  /// loss_trace[b][t]: L_syn of batch b before iteration t; the last entry is
  /// the loss after the final step, so each row holds T_syn + 1 values.
  std::vector<std::vector<double>> loss_trace;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
  /// Payload bytes the archive carries: count * (latent + C) * 4.
  std::uint64_t payload_bytes() const;
  /// Sums of the first and last loss_trace column.
  double initial_loss() const;
  double final_loss() const;
};

/// Value and latent gradient of the alignment loss for one batch:
///   batch-mean: || mean_j h(D(z_j)) - target_mean ||^2   (target is 1 x d)
///   per-sample: mean_j || h(D(z_j)) - target_j ||^2       (target is B x d)
/// The decoder output is clipped to [0, 1] before h, with the clip's
/// gradient mask applied. Both networks are read-only.
template <typename T>
nn::LossResult<T> alignment_loss(const nn::Sequential<T>& decoder, const nn::Sequential<T>& extractor,
                                 const nn::Tensor<T>& z, const nn::Tensor<T>& target, bool per_sample);

extern template nn::LossResult<float> alignment_loss(const nn::Sequential<float>&, const nn::Sequential<float>&,
                                                     const nn::Tensor<float>&, const nn::Tensor<float>&, bool);
extern template nn::LossResult<double> alignment_loss(const nn::Sequential<double>&, const nn::Sequential<double>&,
                                                      const nn::Tensor<double>&, const nn::Tensor<double>&, bool);

/// z_j = E(perturbed_j); fixed contiguous batches in Core-Set order; T_syn
/// plain gradient steps z <- z - eta * dL/dz per batch against the original
/// patches' features; soft labels softmax(f(h(D(z)))) computed afterwards.
/// Throws InvalidArgument if perturbed is not 1:1 with the Core-Set and
/// NumericError on a non-finite loss.
DistillateSet synthesize_distillates(const CoreSet& coreset, std::span<const Image> perturbed, const Autoencoder& ae,
                                     const LocalModel& model, const SynthesisConfig& cfg);

/// Archive: manifest (client_id, count, latent shape, C, ae kind and hash,
/// seed, origins) then latent blobs then soft-label blobs. Returns payload bytes.
std::uint64_t serialize_distillates(const DistillateSet& set, const std::filesystem::path& path);
DistillateSet load_distillates(const std::filesystem::path& path);

/// Decoded images of every distillate, in order.
std::vector<Image> decode_distillates(const DistillateSet& set, const Autoencoder& ae);

}  // namespace oneshot
