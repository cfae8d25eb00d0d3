#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oneshot/coreset.hpp"

namespace oneshot {

/// In-place iterative radix-2 FFT. Forward uses the e^{-j 2 pi k n / N}
/// kernel; inverse uses e^{+j...} and divides by N. Size must be a power of two.
void fft_inplace(std::span<std::complex<double>> data, bool inverse);

/// Row-major H x W 2-D transform built from 1-D passes over rows then columns.
void fft2_inplace(std::span<std::complex<double>> data, std::size_t height, std::size_t width, bool inverse);

/// Polar form of a per-channel 2-D DFT written as F = A * exp(-j P):
/// amplitude A = |F| and phase P = -arg(F), wrapped to (-pi, pi].
struct Spectrum {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> amplitude;  // channel-major, >= 0
  std::vector<double> phase;

  bool same_shape(const Spectrum& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

/// Throws InvalidArgument for non-finite pixels or non-power-of-two sides.
Spectrum fft2(const Image& image);

struct InverseTransform {
  Image image;                    // real part, unclipped
  double max_imag_residual = 0.0;  // largest |imag| seen (0 for Hermitian spectra)
};

/// Real part of the inverse transform of A * exp(-j P), without clipping.
InverseTransform ifft2_unclipped(const Spectrum& spec);

/// As above, clipped to [0, 1].
Image ifft2(const Spectrum& spec, double* max_imag_residual = nullptr);

/// amplitude <- (1 - lambda) * A + lambda * ref_amp; phase untouched.
Spectrum perturb_amplitude(const Spectrum& spec, std::span<const double> ref_amp, double lambda);

enum class RefSource { kOtherImage, kUniformNoise };

std::string to_string(RefSource r);
RefSource parse_ref_source(const std::string& s);

struct PerturbConfig {
  double lambda = 0.8;
  RefSource ref_source = RefSource::kOtherImage;
  /// Draw x* from the same class when the Core-Set allows it.
  bool same_class_ref = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PerturbResult {
  /// images[j] is the perturbation of coreset.patches[j].
  std::vector<Image> images;
  /// Index of the Core-Set patch used as x*, or -1 for a noise reference.
  std::vector<long> reference;
  std::vector<std::string> warnings;
};

/// Amplitude-mixing perturbation of every Core-Set patch. With
/// ref_source == kOtherImage the reference is a different patch (a different
/// source image whenever one exists); a single-patch Core-Set falls back to
/// noise with a warning. Per-patch streams derive from (seed, patch index).
PerturbResult fourier_perturb(const CoreSet& coreset, const PerturbConfig& cfg);

/// Single-image form of the same chain.
Image fourier_perturb_image(const Image& image, const Image& reference, double lambda);

}  // namespace oneshot
