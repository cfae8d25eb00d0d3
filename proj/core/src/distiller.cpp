#include "oneshot/distiller.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "archive.hpp"
#include "oneshot/nn/optim.hpp"

namespace oneshot {
namespace {

constexpr std::size_t kChunk = 256;

nn::Tensor<float> run_chunked(const nn::Sequential<float>& net, const nn::Tensor<float>& x) {
  const std::size_t n = x.dim(0);
  if (n <= kChunk) return net.forward(x);
  std::vector<float> out;
  nn::Shape shape;
  for (std::size_t b = 0; b < n; b += kChunk) {
    auto part = net.forward(x.rows(b, std::min(n, b + kChunk)));
    shape = part.shape();
    out.insert(out.end(), part.values().begin(), part.values().end());
  }
  shape[0] = n;
  return nn::Tensor<float>(shape, std::move(out));
}

template <typename T>
void clamp_unit(nn::Tensor<T>& t) {
  for (auto& v : t.values()) v = std::clamp(v, T(0), T(1));
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace

std::string to_string(AeKind kind) {
  switch (kind) {
    case AeKind::kTrainedSmall: return "trained_small";
    case AeKind::kRandomInit: return "random_init";
    case AeKind::kIdentityPassthrough: return "identity_passthrough";
  }
  return "?";
}

AeKind parse_ae_kind(const std::string& s) {
  if (s == "trained_small") return AeKind::kTrainedSmall;
  if (s == "random_init") return AeKind::kRandomInit;
  if (s == "identity_passthrough") return AeKind::kIdentityPassthrough;
  throw InvalidArgument("unknown autoencoder kind '" + s +
                        "' (expected trained_small, random_init or identity_passthrough)");
}

void AutoencoderSpec::validate() const {
  if (resolution < 16 || !is_power_of_two(resolution)) {
    throw InvalidArgument("autoencoder resolution must be a power of two >= 16");
  }
  if (kind != AeKind::kIdentityPassthrough && (latent_channels == 0 || hidden_channels == 0)) {
    throw InvalidArgument("autoencoder channel counts must be positive");
  }
  if (kind != AeKind::kIdentityPassthrough && latent_channels >= 3 * 16) {
    throw InvalidArgument("latent_channels too large: latent must be smaller than the image");
  }
}

Autoencoder::Autoencoder(AutoencoderSpec spec) : spec_(spec) {
  spec_.validate();
  if (spec_.kind == AeKind::kIdentityPassthrough) return;
  Rng rng(derive_seed(spec_.seed, "ae-init"));
  const nn::ops::ConvGeometry down{3, 2, 1}, same{3, 1, 1};
  const auto h = spec_.hidden_channels, c = spec_.latent_channels;
  encoder_.emplace<nn::Conv2d<float>>(3, h, down, rng);
  encoder_.emplace<nn::Relu<float>>();
  encoder_.emplace<nn::Conv2d<float>>(h, c, down, rng);
  decoder_.emplace<nn::Upsample2<float>>();
  decoder_.emplace<nn::Conv2d<float>>(c, h, same, rng);
  decoder_.emplace<nn::Relu<float>>();
  decoder_.emplace<nn::Upsample2<float>>();
  decoder_.emplace<nn::Conv2d<float>>(h, 3, same, rng);
  decoder_.emplace<nn::Sigmoid<float>>();
}

nn::Shape Autoencoder::latent_shape() const {
  if (spec_.kind == AeKind::kIdentityPassthrough) return {3, spec_.resolution, spec_.resolution};
  return {spec_.latent_channels, spec_.resolution / 4, spec_.resolution / 4};
}

std::string Autoencoder::config_hash() const {
  std::uint64_t h = fnv1a(to_string(spec_.kind) + ":" + std::to_string(spec_.resolution) + ":" +
                          std::to_string(spec_.latent_channels) + ":" + std::to_string(spec_.hidden_channels));
  auto mix = [&](const nn::Sequential<float>& net) {
    for (const auto* p : net.parameters()) {
      for (float v : p->values()) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        h = mix64(h ^ bits);
      }
    }
  };
  mix(encoder_);
  mix(decoder_);
  return hex64(h);
}

nn::Tensor<float> encode(const Autoencoder& ae, const nn::Tensor<float>& images) {
  const auto r = ae.spec().resolution;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != r || images.dim(3) != r) {
    throw InvalidArgument("encode: expected Nx3x" + std::to_string(r) + "x" + std::to_string(r) + ", got " +
                          nn::shape_string(images.shape()));
  }
  if (ae.kind() == AeKind::kIdentityPassthrough || images.dim(0) == 0) {
    auto s = ae.latent_shape();
    s.insert(s.begin(), images.dim(0));
    return nn::Tensor<float>(s, images.storage());
  }
  return run_chunked(ae.encoder(), images);
}

std::vector<float> encode(const Autoencoder& ae, const Image& image) {
  return encode(ae, to_batch(std::span<const Image>(&image, 1))).storage();
}

nn::Tensor<float> decode(const Autoencoder& ae, const nn::Tensor<float>& latents) {
  const auto ls = ae.latent_shape();
  if (latents.rank() != 4 || !std::equal(ls.begin(), ls.end(), latents.shape().begin() + 1)) {
    throw InvalidArgument("decode: latent shape " + nn::shape_string(latents.shape()) + " does not match N x " +
                          nn::shape_string(ls));
  }
  const auto r = ae.spec().resolution;
  nn::Tensor<float> out = ae.kind() == AeKind::kIdentityPassthrough || latents.dim(0) == 0
                              ? nn::Tensor<float>({latents.dim(0), 3, r, r}, latents.storage())
                              : run_chunked(ae.decoder(), latents);
  clamp_unit(out);
  return out;
}

Image decode(const Autoencoder& ae, std::span<const float> latent) {
  auto s = ae.latent_shape();
  s.insert(s.begin(), 1);
  return from_batch(decode(ae, nn::Tensor<float>(s, std::vector<float>(latent.begin(), latent.end())))).at(0);
}

double reconstruction_error(const Autoencoder& ae, std::span<const Image> images) {
  if (images.empty()) throw InvalidArgument("reconstruction_error: empty image set");
  const auto x = to_batch(images);
  const auto y = decode(ae, encode(ae, x));
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

Autoencoder train_autoencoder(std::span<const Image> sample, const AutoencoderSpec& spec, const AeTrainConfig& cfg) {
  if (sample.empty()) throw InvalidArgument("train_autoencoder: empty sample");
  if (cfg.batch_size == 0 || !(cfg.learning_rate > 0)) throw InvalidArgument("train_autoencoder: bad config");
  Autoencoder ae(spec);
  if (spec.kind != AeKind::kTrainedSmall) {
    ae.train_error = reconstruction_error(ae, sample);
    return ae;
  }
  auto params = ae.encoder().parameters();
  const auto dp = ae.decoder().parameters();
  params.insert(params.end(), dp.begin(), dp.end());
  nn::Adam<float> opt(cfg.learning_rate);
  Rng rng(derive_seed(cfg.seed, "ae-train"));
  std::vector<std::size_t> order(sample.size());
  std::iota(order.begin(), order.end(), 0);
  nn::Trace<float> te, td;
  std::vector<const Image*> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      batch.clear();
      for (std::size_t i = b; i < e; ++i) batch.push_back(&sample[order[i]]);
      const auto x = to_batch(std::span<const Image* const>(batch));
      const auto z = ae.encoder().forward(x, te);
      const auto y = ae.decoder().forward(z, td);
      const auto loss = nn::mse<float>(y, x);
      if (!std::isfinite(loss.value)) throw NumericError("autoencoder training produced a non-finite loss");
      auto ge = ae.encoder().zero_gradients();
      auto gd = ae.decoder().zero_gradients();
      const auto gz = ae.decoder().backward(td, loss.grad, &gd);
      ae.encoder().backward(te, gz, &ge, false);
      std::move(gd.begin(), gd.end(), std::back_inserter(ge));
      opt.step(params, ge);
    }
  }
  ae.train_error = reconstruction_error(ae, sample);
  return ae;
}

std::uint64_t save_autoencoder(const Autoencoder& ae, const std::filesystem::path& path) {
  std::vector<float> blob;
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto* net : {&ae.encoder(), &ae.decoder()}) {
    for (const auto* p : net->parameters()) {
      shapes.push_back(p->shape());
      blob.insert(blob.end(), p->values().begin(), p->values().end());
    }
  }
  const auto& s = ae.spec();
  nlohmann::json manifest = {{"format", "oneshot-autoencoder"}, {"version", 1},
                             {"kind", to_string(s.kind)},       {"resolution", s.resolution},
                             {"latent_channels", s.latent_channels}, {"hidden_channels", s.hidden_channels},
                             {"seed", s.seed},                   {"train_error", ae.train_error},
                             {"hash", ae.config_hash()},         {"shapes", shapes}};
  return detail::write_archive(path, manifest, blob);
}

Autoencoder load_autoencoder(const std::filesystem::path& path) {
  auto a = detail::read_archive(path);
  detail::expect_format(a.manifest, "oneshot-autoencoder");
  AutoencoderSpec s;
  s.kind = parse_ae_kind(a.manifest.at("kind").get<std::string>());
  s.resolution = a.manifest.at("resolution").get<std::size_t>();
  s.latent_channels = a.manifest.at("latent_channels").get<std::size_t>();
  s.hidden_channels = a.manifest.at("hidden_channels").get<std::size_t>();
  s.seed = a.manifest.at("seed").get<std::uint64_t>();
  Autoencoder ae(s);
  ae.train_error = a.manifest.at("train_error").get<double>();
  std::size_t offset = 0;
  for (auto* net : {&ae.encoder(), &ae.decoder()}) {
    for (auto* p : net->parameters()) {
      if (offset + p->size() > a.payload.size()) throw IoError("autoencoder payload too short");
      std::copy_n(a.payload.begin() + static_cast<std::ptrdiff_t>(offset), p->size(), p->values().begin());
      offset += p->size();
    }
  }
  if (offset != a.payload.size()) throw IoError("autoencoder payload does not match its architecture");
  return ae;
}

void SynthesisConfig::validate() const {
  if (!(eta_syn > 0)) throw InvalidArgument("eta_syn must be positive");
  if (batch_size == 0) throw InvalidArgument("synthesis batch_size must be positive");
}

std::uint64_t DistillateSet::payload_bytes() const {
  return static_cast<std::uint64_t>(items.size()) * (nn::shape_size(latent_shape) + num_classes) * 4;
}

double DistillateSet::initial_loss() const {
  double s = 0.0;
  for (const auto& row : loss_trace) s += row.empty() ? 0.0 : row.front();
  return s;
}

double DistillateSet::final_loss() const {
  double s = 0.0;
  for (const auto& row : loss_trace) s += row.empty() ? 0.0 : row.back();
  return s;
}

template <typename T>
nn::LossResult<T> alignment_loss(const nn::Sequential<T>& decoder, const nn::Sequential<T>& extractor,
                                 const nn::Tensor<T>& z, const nn::Tensor<T>& target, bool per_sample) {
  const std::size_t n = z.dim(0);
  nn::Trace<T> td, th;
  auto img = decoder.forward(z, td);
  std::vector<unsigned char> inside(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    inside[i] = img[i] >= T(0) && img[i] <= T(1);
    img[i] = std::clamp(img[i], T(0), T(1));
  }
  const auto feats = extractor.forward(img, th);
  const std::size_t d = feats.dim(1);
  nn::Tensor<T> gfeat(feats.shape());
  T value = 0;
  if (per_sample) {
    if (target.dim(0) != n || target.dim(1) != d) throw InvalidArgument("alignment_loss: target must be B x d");
    for (std::size_t i = 0; i < n * d; ++i) {
      const T diff = feats[i] - target[i];
      value += diff * diff;
      gfeat[i] = T(2) * diff / static_cast<T>(n);
    }
    value /= static_cast<T>(n);
  } else {
    if (target.size() != d) throw InvalidArgument("alignment_loss: target must be 1 x d");
    for (std::size_t k = 0; k < d; ++k) {
      T m = 0;
      for (std::size_t j = 0; j < n; ++j) m += feats[j * d + k];
      const T diff = m / static_cast<T>(n) - target[k];
      value += diff * diff;
      for (std::size_t j = 0; j < n; ++j) gfeat[j * d + k] = T(2) * diff / static_cast<T>(n);
    }
  }
  auto gimg = extractor.backward(th, gfeat, nullptr, true);
  for (std::size_t i = 0; i < gimg.size(); ++i) {
    if (!inside[i]) gimg[i] = T(0);
  }
  auto gz = decoder.empty() ? std::move(gimg) : decoder.backward(td, gimg, nullptr, true);
  return {value, std::move(gz).reshaped(z.shape())};
}

template nn::LossResult<float> alignment_loss(const nn::Sequential<float>&, const nn::Sequential<float>&,
                                              const nn::Tensor<float>&, const nn::Tensor<float>&, bool);
template nn::LossResult<double> alignment_loss(const nn::Sequential<double>&, const nn::Sequential<double>&,
                                               const nn::Tensor<double>&, const nn::Tensor<double>&, bool);

DistillateSet synthesize_distillates(const CoreSet& coreset, std::span<const Image> perturbed, const Autoencoder& ae,
                                     const LocalModel& model, const SynthesisConfig& cfg) {
  cfg.validate();
  if (perturbed.size() != coreset.size()) {
    throw InvalidArgument("synthesize_distillates: " + std::to_string(perturbed.size()) +
                          " perturbed images for a core-set of " + std::to_string(coreset.size()));
  }
  DistillateSet out;
  out.client_id = coreset.client_id;
  out.latent_shape = ae.latent_shape();
  out.num_classes = model.num_classes();
  out.ae_kind = ae.kind();
  out.ae_hash = ae.config_hash();
  out.seed = cfg.seed;
  if (coreset.empty()) return out;

  const std::size_t n = coreset.size(), L = ae.latent_size();
  auto z = encode(ae, to_batch(perturbed));
  std::vector<Image> originals;
  originals.reserve(n);
  for (const auto& p : coreset.patches) originals.push_back(p.pixels);
  const auto target_all = extract_features(model, std::span<const Image>(originals));
  const std::size_t d = target_all.dim(1);
  const auto& h = model.net().extractor;

  for (std::size_t b = 0; b < n; b += cfg.batch_size) {
    const std::size_t e = std::min(n, b + cfg.batch_size), bn = e - b;
    auto zb = z.rows(b, e);
    nn::Tensor<float> target = target_all.rows(b, e);
    if (!cfg.per_sample) {
      nn::Tensor<float> mean({1, d});
      for (std::size_t j = 0; j < bn; ++j) {
        for (std::size_t k = 0; k < d; ++k) mean[k] += target[j * d + k];
      }
      for (auto& v : mean.values()) v /= static_cast<float>(bn);
      target = std::move(mean);
    }
    std::vector<double> trace;
    trace.reserve(cfg.T_syn + 1);
    auto cur = alignment_loss<float>(ae.decoder(), h, zb, target, cfg.per_sample);
    for (std::size_t t = 0; t <= cfg.T_syn; ++t) {
      if (!std::isfinite(cur.value)) {
        throw NumericError("synthesis loss became non-finite (client " + std::to_string(coreset.client_id) +
                           ", batch " + std::to_string(b / cfg.batch_size) + ", iteration " + std::to_string(t) + ")");
      }
      trace.push_back(cur.value);
      if (t == cfg.T_syn) break;
      double eta = cfg.eta_syn;
      for (int attempt = 0;; ++attempt) {
        auto next = zb;
        for (std::size_t i = 0; i < next.size(); ++i) next[i] -= static_cast<float>(eta) * cur.grad[i];
        auto nl = alignment_loss<float>(ae.decoder(), h, next, target, cfg.per_sample);
        if (!cfg.step_halving || nl.value <= cur.value || attempt == 10) {
          zb = std::move(next);
          cur = std::move(nl);
          break;
        }
        eta *= 0.5;
      }
    }
    std::copy(zb.values().begin(), zb.values().end(), z.data() + b * L);
    out.loss_trace.push_back(std::move(trace));
  }

  const auto probs = predict_proba(model, decode(ae, z));
  const std::size_t c = model.num_classes();
  out.items.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    auto& item = out.items[j];
    item.latent.assign(z.data() + j * L, z.data() + (j + 1) * L);
    item.soft_label.probs.assign(probs.data() + j * c, probs.data() + (j + 1) * c);
    item.origin = {coreset.client_id, coreset.patches[j].label, j};
  }
  return out;
}

std::uint64_t serialize_distillates(const DistillateSet& set, const std::filesystem::path& path) {
  const std::size_t L = nn::shape_size(set.latent_shape);
  std::vector<float> blob;
  blob.reserve(set.size() * (L + set.num_classes));
  nlohmann::json origins = nlohmann::json::array();
  for (const auto& d : set.items) {
    if (d.latent.size() != L || d.soft_label.probs.size() != set.num_classes) {
      throw InvalidArgument("serialize_distillates: item does not match the set's latent shape or class count");
    }
    blob.insert(blob.end(), d.latent.begin(), d.latent.end());
    origins.push_back({d.origin.client_id, d.origin.label, d.origin.coreset_index});
  }
  for (const auto& d : set.items) blob.insert(blob.end(), d.soft_label.probs.begin(), d.soft_label.probs.end());
  nlohmann::json manifest = {{"format", "oneshot-distillates"},
                             {"version", 1},
                             {"client_id", set.client_id},
                             {"count", set.size()},
                             {"latent_shape", set.latent_shape},
                             {"C", set.num_classes},
                             {"ae_kind", to_string(set.ae_kind)},
                             {"ae_hash", set.ae_hash},
                             {"seed", set.seed},
                             {"origins", origins},
                             {"loss_trace", set.loss_trace}};
  return detail::write_archive(path, manifest, blob);
}

DistillateSet load_distillates(const std::filesystem::path& path) {
  auto a = detail::read_archive(path);
  detail::expect_format(a.manifest, "oneshot-distillates");
  const auto& m = a.manifest;
  DistillateSet set;
  set.client_id = m.at("client_id").get<int>();
  set.latent_shape = m.at("latent_shape").get<nn::Shape>();
  set.num_classes = m.at("C").get<std::size_t>();
  set.ae_kind = parse_ae_kind(m.at("ae_kind").get<std::string>());
  set.ae_hash = m.at("ae_hash").get<std::string>();
  set.seed = m.at("seed").get<std::uint64_t>();
  set.loss_trace = m.at("loss_trace").get<std::vector<std::vector<double>>>();
  const auto count = m.at("count").get<std::size_t>();
  const std::size_t L = nn::shape_size(set.latent_shape), C = set.num_classes;
  if (a.payload.size() != count * (L + C)) throw IoError("distillate payload size does not match manifest");
  const auto& origins = m.at("origins");
  if (origins.size() != count) throw IoError("distillate origin table does not match count");
  set.items.resize(count);
  for (std::size_t j = 0; j < count; ++j) {
    auto& d = set.items[j];
    const auto* lat = a.payload.data() + j * L;
    const auto* lab = a.payload.data() + count * L + j * C;
    d.latent.assign(lat, lat + L);
    d.soft_label.probs.assign(lab, lab + C);
    d.origin = {origins[j].at(0).get<int>(), origins[j].at(1).get<int>(), origins[j].at(2).get<std::size_t>()};
  }
  return set;
}

std::vector<Image> decode_distillates(const DistillateSet& set, const Autoencoder& ae) {
  if (set.empty()) return {};
  const std::size_t L = nn::shape_size(set.latent_shape);
  nn::Shape s = set.latent_shape;
  s.insert(s.begin(), set.size());
  nn::Tensor<float> z(s);
  for (std::size_t j = 0; j < set.size(); ++j) std::copy(set.items[j].latent.begin(), set.items[j].latent.end(), z.data() + j * L);
  return from_batch(decode(ae, z));
}

}  // namespace oneshot
