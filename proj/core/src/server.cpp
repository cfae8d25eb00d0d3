#include "oneshot/server.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "archive.hpp"
#include "oneshot/nn/optim.hpp"

namespace oneshot {

CombinedSet aggregate(std::span<const DistillateSet> sets) {
  if (sets.empty()) throw InvalidArgument("aggregate: no distillate sets");
  std::vector<const DistillateSet*> order;
  for (const auto& s : sets) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const DistillateSet* a, const DistillateSet* b) { return a->client_id < b->client_id; });
  CombinedSet out;
  out.latent_shape = order.front()->latent_shape;
  out.num_classes = order.front()->num_classes;
  for (const auto* s : order) {
    if (s->latent_shape != out.latent_shape) {
      throw InvalidArgument("aggregate: client " + std::to_string(s->client_id) + " latent shape " +
                            nn::shape_string(s->latent_shape) + " differs from " +
                            nn::shape_string(out.latent_shape));
    }
    if (s->num_classes != out.num_classes) {
      throw InvalidArgument("aggregate: client " + std::to_string(s->client_id) + " reports a different class count");
    }
    out.client_ids.push_back(s->client_id);
    out.per_client_counts.push_back(s->size());
    out.distillates.insert(out.distillates.end(), s->items.begin(), s->items.end());
  }
  return out;
}

void ServerTrainConfig::validate() const {
  if (batch_size == 0) throw InvalidArgument("server batch_size must be positive");
  if (!(learning_rate > 0)) throw InvalidArgument("server learning_rate must be positive");
  if (momentum < 0 || momentum >= 1) throw InvalidArgument("server momentum must be in [0, 1)");
  if (weight_decay < 0) throw InvalidArgument("server weight_decay must be non-negative");
}

ServerResult train_server(const CombinedSet& combined, const Autoencoder& ae, const ModelSpec& spec,
                          const ServerTrainConfig& cfg, std::span<const LabeledImage> eval_set) {
  cfg.validate();
  if (combined.empty()) throw InvalidArgument("train_server: empty combined set");
  if (combined.latent_shape != ae.latent_shape()) {
    throw InvalidArgument("train_server: decoder expects latents " + nn::shape_string(ae.latent_shape()) +
                          ", got " + nn::shape_string(combined.latent_shape));
  }
  if (combined.num_classes != spec.num_classes) throw InvalidArgument("train_server: class count mismatch");

  ServerResult out{LocalModel(spec), {}};
  auto& net = out.model.net();
  auto params = net.parameters();
  const std::size_t head_params = net.head.parameters().size();
  nn::Sgd<float> opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  Rng rng(derive_seed(cfg.seed, "server-train"));

  const std::size_t n = combined.size(), L = nn::shape_size(combined.latent_shape), C = combined.num_classes;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  nn::Trace<float> th, tf;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      const std::size_t e = std::min(n, b + cfg.batch_size), bn = e - b;
      nn::Shape zs = combined.latent_shape;
      zs.insert(zs.begin(), bn);
      nn::Tensor<float> z(zs), y({bn, C});
      for (std::size_t i = 0; i < bn; ++i) {
        const auto& d = combined.distillates[order[b + i]];
        std::copy(d.latent.begin(), d.latent.end(), z.data() + i * L);
        std::copy(d.soft_label.probs.begin(), d.soft_label.probs.end(), y.data() + i * C);
      }
      const auto x = decode(ae, z);
      const auto logits = net.head.forward(net.extractor.forward(x, th), tf);
      const auto loss = nn::soft_kl<float>(logits, y, cfg.direction);
      if (!std::isfinite(loss.value)) {
        throw NumericError("server training loss became non-finite at epoch " + std::to_string(epoch));
      }
      auto grads = net.zero_gradients();
      nn::Gradients<float> gh(grads.begin(), grads.end() - static_cast<std::ptrdiff_t>(head_params));
      nn::Gradients<float> gf(grads.end() - static_cast<std::ptrdiff_t>(head_params), grads.end());
      const auto gfeat = net.head.backward(tf, loss.grad, &gf);
      net.extractor.backward(th, gfeat, &gh, false);
      std::move(gf.begin(), gf.end(), std::back_inserter(gh));
      opt.step(params, gh);
      loss_sum += static_cast<double>(loss.value) * static_cast<double>(bn);
    }
    EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(n), std::numeric_limits<double>::quiet_NaN()};
    const bool last = epoch + 1 == cfg.epochs;
    if (!eval_set.empty() && cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      rec.accuracy = evaluate(out.model, eval_set);
    }
    out.trace.push_back(rec);
  }
  return out;
}

void write_trace(std::span<const EpochRecord> trace, const std::filesystem::path& path) {
  detail::ensure_parent_dir(path);
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "epoch\tloss\taccuracy\n";
  char buf[96];
  for (const auto& r : trace) {
    if (std::isnan(r.accuracy)) {
      std::snprintf(buf, sizeof buf, "%zu\t%.6f\t-\n", r.epoch, r.loss);
    } else {
      std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.4f\n", r.epoch, r.loss, r.accuracy);
    }
    f << buf;
  }
}

LocalModel fedavg_oneshot(std::span<const LocalModel> models) {
  if (models.empty()) throw InvalidArgument("fedavg_oneshot: no models");
  const auto& s0 = models.front().spec();
  for (const auto& m : models) {
    const auto& s = m.spec();
    if (s.arch != s0.arch || s.widths != s0.widths || s.num_classes != s0.num_classes ||
        s.resolution != s0.resolution) {
      throw InvalidArgument("fedavg_oneshot: architecture mismatch");
    }
  }
  LocalModel avg = models.front();
  auto dst = avg.net().parameters();
  std::vector<std::vector<double>> acc(dst.size());
  for (std::size_t i = 0; i < dst.size(); ++i) acc[i].assign(dst[i]->size(), 0.0);
  for (const auto& m : models) {
    const auto src = m.net().parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      for (std::size_t j = 0; j < src[i]->size(); ++j) acc[i][j] += static_cast<double>((*src[i])[j]);
    }
  }
  const double k = static_cast<double>(models.size());
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t j = 0; j < dst[i]->size(); ++j) (*dst[i])[j] = static_cast<float>(acc[i][j] / k);
  }
  return avg;
}

double ensemble_eval(std::span<const LocalModel> models, std::span<const LabeledImage> dataset) {
  if (models.empty()) throw InvalidArgument("ensemble_eval: no models");
  if (dataset.empty()) throw InvalidArgument("ensemble_eval: empty dataset");
  const std::size_t C = models.front().num_classes();
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t b = 0; b < dataset.size(); b += kChunk) {
    const std::size_t e = std::min(dataset.size(), b + kChunk);
    std::vector<const Image*> imgs;
    for (std::size_t i = b; i < e; ++i) imgs.push_back(&dataset[i].image);
    const auto x = to_batch(std::span<const Image* const>(imgs));
    std::vector<double> sum((e - b) * C, 0.0);
    for (const auto& m : models) {
      if (m.num_classes() != C) throw InvalidArgument("ensemble_eval: class count mismatch");
      const auto p = predict_proba(m, x);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p[i];
    }
    for (std::size_t i = 0; i < e - b; ++i) {
      const auto row = sum.begin() + static_cast<std::ptrdiff_t>(i * C);
      correct += std::max_element(row, row + static_cast<std::ptrdiff_t>(C)) - row == dataset[b + i].label;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace oneshot
