#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oneshot/distiller.hpp"

namespace oneshot {

/// Returned by psnr() for identical images.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) with peak 1. Throws on shape mismatch.
double psnr(const Image& a, const Image& b);

/// Single-scale SSIM on unit dynamic range, x100. Gaussian 11x11 window
/// (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, population statistics, averaged
/// over every window position that lies fully inside the image and then over
/// channels. Throws on shape mismatch or sides smaller than 11.
double ssim(const Image& a, const Image& b);

struct PrivacyReport {
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::vector<double> psnr;
  std::vector<double> ssim;
  std::string config;  // e.g. "fourier lambda=0.8"
};

/// Pairwise metrics between Core-Set patches and the images a server would
/// reconstruct from the corresponding distillates.
PrivacyReport privacy_report(const CoreSet& coreset, std::span<const Image> decoded, std::string config = {});
PrivacyReport privacy_report(std::span<const Image> originals, std::span<const Image> decoded, std::string config = {});

enum class NoiseDist { kLaplace, kGaussian };

std::string to_string(NoiseDist d);
NoiseDist parse_noise_dist(const std::string& s);

/// z <- (1 - p) z + s e, with e unit Laplace (b = 1) or standard normal.
struct NoiseConfig {
  double p = 0.1;
  double s = 0.2;
  NoiseDist distribution = NoiseDist::kLaplace;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Unit-scale noise draw, portable across standard libraries.
double sample_noise(NoiseDist d, Rng& rng);

std::vector<float> noise_perturb(std::span<const float> latents, const NoiseConfig& cfg);

/// Applies noise_perturb to every latent (stream j derived from the seed and
/// j); soft labels are kept as synthesized.
DistillateSet noise_perturb(const DistillateSet& set, const NoiseConfig& cfg);

struct MixedSet {
  std::vector<Image> images;
  std::vector<SoftLabel> labels;
  /// Core-Set indices averaged into each image.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

/// Seeded disjoint pairing of Core-Set patches; each image is the pair's
/// pixel mean and its label the mean of the two one-hot vectors. An odd
/// patch out is dropped. Throws with fewer than 2 patches.
MixedSet fedmix_synthesize(const CoreSet& coreset, std::size_t num_classes, std::uint64_t seed);

/// Wraps raw images as identity-passthrough distillates so they can travel
/// the same server path.
DistillateSet images_as_distillates(std::span<const Image> images, std::span<const SoftLabel> labels, int client_id,
                                    std::size_t num_classes);

struct CostReport {
  std::size_t clients = 0;
  std::uint64_t total_payload_bytes = 0;
  double mean_payload_bytes = 0.0;  // per client
  std::uint64_t model_bytes = 0;    // one checkpoint upload
  /// mean per-client payload / model bytes (0 without clients).
  double ratio = 0.0;
};

/// Autoencoder distribution is not counted.
CostReport comm_cost(std::span<const std::uint64_t> payload_bytes_per_client, std::uint64_t model_bytes);

}  // namespace oneshot
