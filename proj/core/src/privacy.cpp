#include "oneshot/privacy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

namespace oneshot {
namespace {

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;

std::array<double, 2 * kRadius + 1> gaussian_kernel() {
  std::array<double, 2 * kRadius + 1> k{};
  double sum = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) {
    k[static_cast<std::size_t>(i + kRadius)] = std::exp(-0.5 * i * i / (kSigma * kSigma));
    sum += k[static_cast<std::size_t>(i + kRadius)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable weighted mean over every fully-inside window of a H x W plane.
std::vector<double> filter_valid(const std::vector<double>& in, std::size_t h, std::size_t w) {
  static const auto k = gaussian_kernel();
  constexpr std::size_t n = 2 * kRadius + 1;
  const std::size_t ow = w - n + 1, oh = h - n + 1;
  std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += k[t] * in[y * w + x + t];
      rows[y * ow + x] = s;
    }
  }
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += k[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": image shapes differ");
}

double draw_open01(Rng& rng) {
  double u;
  do {
    u = uniform01(rng);
  } while (u == 0.0);
  return u;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same(a, b, "psnr");
  if (a.pixels.empty()) throw InvalidArgument("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  require_same(a, b, "ssim");
  constexpr std::size_t n = 2 * kRadius + 1;
  if (a.height < n || a.width < n) throw InvalidArgument("ssim: images smaller than the 11x11 window");
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t h = a.height, w = a.width, plane = h * w;
  double total = 0.0;
  std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
  for (std::size_t c = 0; c < a.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = a.pixels[c * plane + i];
      y[i] = b.pixels[c * plane + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto ux = filter_valid(x, h, w), uy = filter_valid(y, h, w);
    const auto uxx = filter_valid(xx, h, w), uyy = filter_valid(yy, h, w), uxy = filter_valid(xy, h, w);
    double s = 0.0;
    for (std::size_t i = 0; i < ux.size(); ++i) {
      const double vx = uxx[i] - ux[i] * ux[i], vy = uyy[i] - uy[i] * uy[i], vxy = uxy[i] - ux[i] * uy[i];
      s += ((2 * ux[i] * uy[i] + c1) * (2 * vxy + c2)) / ((ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2));
    }
    total += s / static_cast<double>(ux.size());
  }
  return 100.0 * total / static_cast<double>(a.channels);
}

PrivacyReport privacy_report(std::span<const Image> originals, std::span<const Image> decoded, std::string config) {
  if (decoded.size() != originals.size()) {
    throw InvalidArgument("privacy_report: " + std::to_string(decoded.size()) + " reconstructions for " +
                          std::to_string(originals.size()) + " originals");
  }
  PrivacyReport r;
  r.config = std::move(config);
  for (std::size_t j = 0; j < decoded.size(); ++j) {
    r.psnr.push_back(psnr(originals[j], decoded[j]));
    r.ssim.push_back(ssim(originals[j], decoded[j]));
  }
  if (!r.psnr.empty()) {
    r.mean_psnr = std::accumulate(r.psnr.begin(), r.psnr.end(), 0.0) / static_cast<double>(r.psnr.size());
    r.mean_ssim = std::accumulate(r.ssim.begin(), r.ssim.end(), 0.0) / static_cast<double>(r.ssim.size());
  }
  return r;
}

PrivacyReport privacy_report(const CoreSet& coreset, std::span<const Image> decoded, std::string config) {
  std::vector<Image> originals;
  originals.reserve(coreset.size());
  for (const auto& p : coreset.patches) originals.push_back(p.pixels);
  return privacy_report(originals, decoded, std::move(config));
}

std::string to_string(NoiseDist d) { return d == NoiseDist::kLaplace ? "laplace" : "gaussian"; }

NoiseDist parse_noise_dist(const std::string& s) {
  if (s == "laplace") return NoiseDist::kLaplace;
  if (s == "gaussian") return NoiseDist::kGaussian;
  throw InvalidArgument("unknown noise distribution '" + s + "' (expected laplace or gaussian)");
}

void NoiseConfig::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("noise p must be in [0, 1]");
  if (!(s >= 0.0)) throw InvalidArgument("noise scale s must be non-negative");
}

double sample_noise(NoiseDist d, Rng& rng) {
  if (d == NoiseDist::kLaplace) {
    const double u = draw_open01(rng) - 0.5;
    return u < 0 ? std::log(1.0 + 2.0 * u) : -std::log(1.0 - 2.0 * u);
  }
  const double u1 = draw_open01(rng), u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<float> noise_perturb(std::span<const float> latents, const NoiseConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "noise"));
  std::vector<float> out(latents.size());
  for (std::size_t i = 0; i < latents.size(); ++i) {
    const double e = sample_noise(cfg.distribution, rng);
    out[i] = static_cast<float>((1.0 - cfg.p) * latents[i] + e * cfg.s);
  }
  return out;
}

DistillateSet noise_perturb(const DistillateSet& set, const NoiseConfig& cfg) {
  DistillateSet out = set;
  for (std::size_t j = 0; j < out.size(); ++j) {
    NoiseConfig c = cfg;
    c.seed = derive_seed(cfg.seed, "noise-item", j);
    out.items[j].latent = noise_perturb(set.items[j].latent, c);
  }
  return out;
}

MixedSet fedmix_synthesize(const CoreSet& coreset, std::size_t num_classes, std::uint64_t seed) {
  if (coreset.size() < 2) throw InvalidArgument("fedmix_synthesize: needs at least 2 core-set patches");
  std::vector<std::size_t> order(coreset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "fedmix"));
  shuffle(order.begin(), order.end(), rng);
  MixedSet out;
  for (std::size_t i = 0; i + 1 < order.size(); i += 2) {
    const auto& a = coreset.patches[order[i]];
    const auto& b = coreset.patches[order[i + 1]];
    require_same(a.pixels, b.pixels, "fedmix_synthesize");
    Image m = a.pixels;
    for (std::size_t k = 0; k < m.size(); ++k) m.pixels[k] = 0.5f * (a.pixels.pixels[k] + b.pixels.pixels[k]);
    SoftLabel y;
    y.probs.assign(num_classes, 0.0f);
    for (int l : {a.label, b.label}) {
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw InvalidArgument("fedmix_synthesize: bad label");
      y.probs[static_cast<std::size_t>(l)] += 0.5f;
    }
    out.images.push_back(std::move(m));
    out.labels.push_back(std::move(y));
    out.pairs.emplace_back(order[i], order[i + 1]);
  }
  return out;
}

DistillateSet images_as_distillates(std::span<const Image> images, std::span<const SoftLabel> labels, int client_id,
                                    std::size_t num_classes) {
  if (images.size() != labels.size()) throw InvalidArgument("images_as_distillates: length mismatch");
  DistillateSet s;
  s.client_id = client_id;
  s.num_classes = num_classes;
  s.ae_kind = AeKind::kIdentityPassthrough;
  s.ae_hash = "identity";
  if (!images.empty()) s.latent_shape = {images[0].channels, images[0].height, images[0].width};
  for (std::size_t j = 0; j < images.size(); ++j) {
    Distillate d;
    d.latent = images[j].pixels;
    d.soft_label = labels[j];
    const auto& p = labels[j].probs;
    d.origin = {client_id, static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()), j};
    s.items.push_back(std::move(d));
  }
  return s;
}

CostReport comm_cost(std::span<const std::uint64_t> payload_bytes_per_client, std::uint64_t model_bytes) {
  CostReport r;
  r.clients = payload_bytes_per_client.size();
  r.model_bytes = model_bytes;
  r.total_payload_bytes = std::accumulate(payload_bytes_per_client.begin(), payload_bytes_per_client.end(),
                                          std::uint64_t{0});
  if (r.clients > 0) {
    r.mean_payload_bytes = static_cast<double>(r.total_payload_bytes) / static_cast<double>(r.clients);
    if (model_bytes > 0) r.ratio = r.mean_payload_bytes / static_cast<double>(model_bytes);
  }
  return r;
}

}  // namespace oneshot
