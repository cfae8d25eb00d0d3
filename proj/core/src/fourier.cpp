#include "oneshot/fourier.hpp"

#include <cmath>
#include <numbers>

namespace oneshot {
namespace {

using cd = std::complex<double>;

void require_pow2(std::size_t n, const char* what) {
  if (!is_power_of_two(n)) {
    throw InvalidArgument(std::string(what) + " must be a power of two, got " + std::to_string(n));
  }
}

double wrap_phase(double p) {
  // -arg() lies in [-pi, pi); fold the lower endpoint so P is in (-pi, pi].
  return p <= -std::numbers::pi ? p + 2 * std::numbers::pi : p;
}

}  // namespace

void fft_inplace(std::span<cd> data, bool inverse) {
  const std::size_t n = data.size();
  if (n <= 1) return;
  require_pow2(n, "FFT length");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles computed directly rather than by recurrence to keep error flat.
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      const cd w(std::cos(ang), std::sin(ang));
      for (std::size_t i = k; i < n; i += len) {
        const cd u = data[i], v = data[i + half] * w;
        data[i] = u + v;
        data[i + half] = u - v;
      }
    }
  }
  if (inverse) {
    for (auto& v : data) v /= static_cast<double>(n);
  }
}

void fft2_inplace(std::span<cd> data, std::size_t height, std::size_t width, bool inverse) {
  if (data.size() != height * width) throw InvalidArgument("fft2: buffer size does not match H x W");
  require_pow2(height, "image height");
  require_pow2(width, "image width");
  for (std::size_t r = 0; r < height; ++r) fft_inplace(data.subspan(r * width, width), inverse);
  std::vector<cd> column(height);
  for (std::size_t c = 0; c < width; ++c) {
    for (std::size_t r = 0; r < height; ++r) column[r] = data[r * width + c];
    fft_inplace(column, inverse);
    for (std::size_t r = 0; r < height; ++r) data[r * width + c] = column[r];
  }
}

Spectrum fft2(const Image& image) {
  require_pow2(image.height, "image height");
  require_pow2(image.width, "image width");
  if (!nn::all_finite<float>(image.pixels)) throw InvalidArgument("fft2: image has non-finite pixels");
  Spectrum s{image.channels, image.height, image.width, {}, {}};
  const std::size_t plane = image.height * image.width;
  s.amplitude.resize(image.size());
  s.phase.resize(image.size());
  std::vector<cd> buf(plane);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) buf[i] = cd(image.pixels[c * plane + i], 0.0);
    fft2_inplace(buf, image.height, image.width, false);
    for (std::size_t i = 0; i < plane; ++i) {
      s.amplitude[c * plane + i] = std::abs(buf[i]);
      s.phase[c * plane + i] = wrap_phase(-std::arg(buf[i]));
    }
  }
  return s;
}

InverseTransform ifft2_unclipped(const Spectrum& spec) {
  const std::size_t plane = spec.height * spec.width;
  if (spec.amplitude.size() != spec.channels * plane || spec.phase.size() != spec.amplitude.size()) {
    throw InvalidArgument("ifft2: spectrum buffers do not match its shape");
  }
  InverseTransform out{Image(spec.channels, spec.height, spec.width), 0.0};
  std::vector<cd> buf(plane);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      buf[i] = std::polar(spec.amplitude[c * plane + i], -spec.phase[c * plane + i]);
    }
    fft2_inplace(buf, spec.height, spec.width, true);
    for (std::size_t i = 0; i < plane; ++i) {
      out.image.pixels[c * plane + i] = static_cast<float>(buf[i].real());
      out.max_imag_residual = std::max(out.max_imag_residual, std::abs(buf[i].imag()));
    }
  }
  return out;
}

Image ifft2(const Spectrum& spec, double* max_imag_residual) {
  auto r = ifft2_unclipped(spec);
  if (max_imag_residual) *max_imag_residual = r.max_imag_residual;
  clip01(r.image);
  return std::move(r.image);
}

Spectrum perturb_amplitude(const Spectrum& spec, std::span<const double> ref_amp, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must be in [0, 1]");
  if (ref_amp.size() != spec.amplitude.size()) {
    throw InvalidArgument("perturb_amplitude: reference amplitude shape does not match spectrum");
  }
  Spectrum out = spec;
  for (std::size_t i = 0; i < out.amplitude.size(); ++i) {
    out.amplitude[i] = (1.0 - lambda) * spec.amplitude[i] + lambda * ref_amp[i];
  }
  return out;
}

std::string to_string(RefSource r) { return r == RefSource::kOtherImage ? "other_image" : "uniform_noise"; }

RefSource parse_ref_source(const std::string& s) {
  if (s == "other_image") return RefSource::kOtherImage;
  if (s == "uniform_noise") return RefSource::kUniformNoise;
  throw InvalidArgument("unknown reference source '" + s + "' (expected other_image or uniform_noise)");
}

void PerturbConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must be in [0, 1]");
}

Image fourier_perturb_image(const Image& image, const Image& reference, double lambda) {
  if (!image.same_shape(reference)) throw InvalidArgument("fourier_perturb: reference shape mismatch");
  const auto spec = fft2(image);
  const auto ref = fft2(reference);
  return ifft2(perturb_amplitude(spec, ref.amplitude, lambda));
}

PerturbResult fourier_perturb(const CoreSet& coreset, const PerturbConfig& cfg) {
  cfg.validate();
  if (coreset.empty()) throw InvalidArgument("fourier_perturb: empty core-set");
  const std::size_t n = coreset.size();
  PerturbResult out;
  out.images.reserve(n);
  out.reference.assign(n, -1);

  RefSource mode = cfg.ref_source;
  if (mode == RefSource::kOtherImage && n < 2) {
    out.warnings.push_back("single-patch core-set: falling back to a uniform-noise reference");
    mode = RefSource::kUniformNoise;
  }

  std::vector<Spectrum> spectra;
  spectra.reserve(n);
  for (const auto& p : coreset.patches) spectra.push_back(fft2(p.pixels));

  for (std::size_t j = 0; j < n; ++j) {
    Rng rng(derive_seed(cfg.seed, "fourier-ref", j));
    const auto& patch = coreset.patches[j];
    if (mode == RefSource::kUniformNoise) {
      Image noise(patch.pixels.channels, patch.pixels.height, patch.pixels.width);
      for (auto& v : noise.pixels) v = static_cast<float>(uniform01(rng));
      const auto ref = fft2(noise);
      out.images.push_back(ifft2(perturb_amplitude(spectra[j], ref.amplitude, cfg.lambda)));
      continue;
    }
    // Candidate references: different source image, optionally same class.
    std::vector<std::size_t> pool;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == j || coreset.patches[k].source_index == patch.source_index) continue;
      if (cfg.same_class_ref && coreset.patches[k].label != patch.label) continue;
      pool.push_back(k);
    }
    if (pool.empty() && cfg.same_class_ref) {
      for (std::size_t k = 0; k < n; ++k) {
        if (k != j && coreset.patches[k].source_index != patch.source_index) pool.push_back(k);
      }
    }
    if (pool.empty()) {
      for (std::size_t k = 0; k < n; ++k) {
        if (k != j) pool.push_back(k);
      }
    }
    const auto r = pool[uniform_index(rng, pool.size())];
    out.reference[j] = static_cast<long>(r);
    out.images.push_back(ifft2(perturb_amplitude(spectra[j], spectra[r].amplitude, cfg.lambda)));
  }
  return out;
}

}  // namespace oneshot
