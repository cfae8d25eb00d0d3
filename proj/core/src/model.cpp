#include "oneshot/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "archive.hpp"
#include "oneshot/nn/optim.hpp"
#include "oneshot/rng.hpp"

namespace oneshot {
namespace {

constexpr std::size_t kInferenceChunk = 256;

template <typename Fn>
nn::Tensor<float> chunked(const nn::Tensor<float>& batch, std::size_t out_cols, Fn&& fn) {
  const std::size_t n = batch.dim(0);
  nn::Tensor<float> out({n, out_cols});
  for (std::size_t b = 0; b < n; b += kInferenceChunk) {
    const std::size_t e = std::min(n, b + kInferenceChunk);
    const auto part = fn(batch.rows(b, e));
    std::copy(part.values().begin(), part.values().end(), out.data() + b * out_cols);
  }
  return out;
}

}  // namespace

std::string to_string(Arch arch) { return arch == Arch::kSmallConv ? "small_conv" : "resnet_small"; }

Arch parse_arch(const std::string& s) {
  if (s == "small_conv") return Arch::kSmallConv;
  if (s == "resnet_small") return Arch::kResnetSmall;
  throw InvalidArgument("unknown arch_id '" + s + "' (expected small_conv or resnet_small)");
}

void ModelSpec::validate() const {
  if (num_classes < 2) throw InvalidArgument("model needs at least 2 classes");
  if (resolution < 16 || !is_power_of_two(resolution)) {
    throw InvalidArgument("model resolution must be a power of two >= 16");
  }
  if (widths.empty() || std::find(widths.begin(), widths.end(), 0u) != widths.end()) {
    throw InvalidArgument("model widths must be non-empty and positive");
  }
  if (arch == Arch::kSmallConv && (resolution >> widths.size()) < 1) {
    throw InvalidArgument("small_conv has more pooling stages than the resolution allows");
  }
  if (arch == Arch::kResnetSmall && widths.size() != 3) {
    throw InvalidArgument("resnet_small expects exactly 3 widths");
  }
}

template <typename T>
std::vector<nn::Tensor<T>*> Classifier<T>::parameters() {
  auto p = extractor.parameters();
  auto q = head.parameters();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

template <typename T>
std::vector<const nn::Tensor<T>*> Classifier<T>::parameters() const {
  auto p = extractor.parameters();
  auto q = head.parameters();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

template <typename T>
nn::Gradients<T> Classifier<T>::zero_gradients() const {
  auto g = extractor.zero_gradients();
  auto h = head.zero_gradients();
  for (auto& t : h) g.push_back(std::move(t));
  return g;
}

template <typename T>
Classifier<T> build_classifier(const ModelSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.init_seed, "model-init"));
  Classifier<T> c;
  const nn::ops::ConvGeometry conv3{3, 1, 1};
  if (spec.arch == Arch::kSmallConv) {
    std::size_t in = 3;
    for (auto w : spec.widths) {
      c.extractor.template emplace<nn::Conv2d<T>>(in, w, conv3, rng);
      c.extractor.template emplace<nn::InstanceNorm<T>>(w);
      c.extractor.template emplace<nn::Relu<T>>();
      c.extractor.template emplace<nn::AvgPool2<T>>();
      in = w;
    }
  } else {
    const auto& w = spec.widths;
    c.extractor.template emplace<nn::Conv2d<T>>(3, w[0], conv3, rng);
    c.extractor.template emplace<nn::InstanceNorm<T>>(w[0]);
    c.extractor.template emplace<nn::Relu<T>>();
    c.extractor.template emplace<nn::ResidualBlock<T>>(w[0], w[0], 1, rng);
    c.extractor.template emplace<nn::ResidualBlock<T>>(w[0], w[1], 2, rng);
    c.extractor.template emplace<nn::ResidualBlock<T>>(w[1], w[2], 2, rng);
  }
  c.extractor.template emplace<nn::GlobalAvgPool<T>>();
  c.head.template emplace<nn::Linear<T>>(spec.feature_dim(), spec.num_classes, rng);
  return c;
}

template struct Classifier<float>;
template struct Classifier<double>;
template Classifier<float> build_classifier<float>(const ModelSpec&);
template Classifier<double> build_classifier<double>(const ModelSpec&);

LocalModel::LocalModel(ModelSpec spec) : spec_(std::move(spec)), net_(build_classifier<float>(spec_)) {}

std::size_t LocalModel::parameter_count() const {
  return net_.extractor.parameter_count() + net_.head.parameter_count();
}

void LocalModel::check_input(const nn::Tensor<float>& batch) const {
  if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != spec_.resolution ||
      batch.dim(3) != spec_.resolution) {
    if (batch.rank() == 4 && batch.dim(0) == 0) return;
    throw InvalidArgument("resolution mismatch: model expects Nx3x" + std::to_string(spec_.resolution) + "x" +
                          std::to_string(spec_.resolution) + ", got " + nn::shape_string(batch.shape()));
  }
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (!(learning_rate > 0)) throw InvalidArgument("learning_rate must be positive");
  if (momentum < 0 || momentum >= 1) throw InvalidArgument("momentum must be in [0, 1)");
  if (weight_decay < 0) throw InvalidArgument("weight_decay must be non-negative");
}

TrainedModel train_classifier(std::span<const LabeledImage> data, LocalModel init, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw InvalidArgument("cannot train on an empty dataset");
  TrainedModel out{std::move(init), {}};
  auto& net = out.model.net();
  std::vector<std::size_t> seen_classes;
  for (const auto& li : data) {
    if (li.label < 0 || static_cast<std::size_t>(li.label) >= out.model.num_classes()) {
      throw InvalidArgument("training label outside [0, C)");
    }
    seen_classes.push_back(static_cast<std::size_t>(li.label));
  }
  std::sort(seen_classes.begin(), seen_classes.end());
  out.report.single_class = std::unique(seen_classes.begin(), seen_classes.end()) - seen_classes.begin() == 1;

  nn::Sgd<float> opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  Rng rng(derive_seed(cfg.seed, "local-train"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  auto params = net.parameters();
  std::vector<const Image*> batch_imgs;
  std::vector<int> labels;
  nn::Trace<float> trace_h, trace_f;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      batch_imgs.clear();
      labels.clear();
      for (std::size_t i = b; i < e; ++i) {
        batch_imgs.push_back(&data[order[i]].image);
        labels.push_back(data[order[i]].label);
      }
      const auto x = to_batch(std::span<const Image* const>(batch_imgs));
      out.model.check_input(x);
      const auto feats = net.extractor.forward(x, trace_h);
      const auto logits = net.head.forward(feats, trace_f);
      const auto loss = nn::cross_entropy<float>(logits, labels);
      if (!std::isfinite(loss.value)) throw NumericError("local training produced a non-finite loss");
      auto grads = net.zero_gradients();
      nn::Gradients<float> gh(grads.begin(), grads.end() - static_cast<std::ptrdiff_t>(net.head.parameters().size()));
      nn::Gradients<float> gf(grads.end() - static_cast<std::ptrdiff_t>(net.head.parameters().size()), grads.end());
      const auto gfeat = net.head.backward(trace_f, loss.grad, &gf);
      net.extractor.backward(trace_h, gfeat, &gh, false);
      std::move(gf.begin(), gf.end(), std::back_inserter(gh));
      opt.step(params, gh);
      loss_sum += static_cast<double>(loss.value) * static_cast<double>(e - b);
    }
    out.report.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
  }
  out.report.train_accuracy = evaluate(out.model, data);
  return out;
}

TrainedModel train_local(const ClientShard& shard, const ModelSpec& spec, const TrainConfig& cfg) {
  if (shard.empty()) throw InvalidArgument("client " + std::to_string(shard.client_id) + " has an empty shard");
  return train_classifier(shard.images, LocalModel(spec), cfg);
}

nn::Tensor<float> extract_features(const LocalModel& model, const nn::Tensor<float>& batch) {
  model.check_input(batch);
  if (batch.dim(0) == 0) return nn::Tensor<float>({0, model.feature_dim()});
  return chunked(batch, model.feature_dim(), [&](const nn::Tensor<float>& x) { return model.net().extractor.forward(x); });
}

nn::Tensor<float> extract_features(const LocalModel& model, std::span<const Image> batch) {
  if (batch.empty()) return nn::Tensor<float>({0, model.feature_dim()});
  return extract_features(model, to_batch(batch));
}

nn::Tensor<float> predict_logits(const LocalModel& model, const nn::Tensor<float>& batch) {
  model.check_input(batch);
  if (batch.dim(0) == 0) return nn::Tensor<float>({0, model.num_classes()});
  return chunked(batch, model.num_classes(), [&](const nn::Tensor<float>& x) {
    return model.net().head.forward(model.net().extractor.forward(x));
  });
}

nn::Tensor<float> predict_proba(const LocalModel& model, const nn::Tensor<float>& batch) {
  const auto logits = predict_logits(model, batch);
  if (logits.dim(0) == 0) return logits;
  return nn::softmax(logits);
}

std::vector<SoftLabel> predict_soft(const LocalModel& model, std::span<const Image> batch) {
  if (batch.empty()) return {};
  const auto p = predict_proba(model, to_batch(batch));
  const std::size_t c = model.num_classes();
  std::vector<SoftLabel> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out[i].probs.assign(p.data() + i * c, p.data() + (i + 1) * c);
  return out;
}

double evaluate(const LocalModel& model, std::span<const LabeledImage> dataset) {
  if (dataset.empty()) throw InvalidArgument("evaluate: empty dataset");
  std::size_t correct = 0;
  const std::size_t c = model.num_classes();
  for (std::size_t b = 0; b < dataset.size(); b += kInferenceChunk) {
    const std::size_t e = std::min(dataset.size(), b + kInferenceChunk);
    std::vector<const Image*> imgs;
    for (std::size_t i = b; i < e; ++i) imgs.push_back(&dataset[i].image);
    const auto logits = predict_logits(model, to_batch(std::span<const Image* const>(imgs)));
    for (std::size_t i = b; i < e; ++i) {
      const float* row = logits.data() + (i - b) * c;
      const auto pred = std::max_element(row, row + c) - row;
      correct += pred == dataset[i].label;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

std::uint64_t checkpoint_payload_bytes(const LocalModel& model) {
  return static_cast<std::uint64_t>(model.parameter_count()) * 4;
}

std::uint64_t save_checkpoint(const LocalModel& model, const std::filesystem::path& path) {
  const auto& spec = model.spec();
  nlohmann::json params = nlohmann::json::array();
  std::vector<float> blob;
  auto names = model.net().extractor.parameter_names();
  for (auto& n : model.net().head.parameter_names()) names.push_back("head." + n);
  const auto tensors = model.net().parameters();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    params.push_back({{"name", names[i]}, {"shape", tensors[i]->shape()}, {"offset", blob.size()}});
    blob.insert(blob.end(), tensors[i]->values().begin(), tensors[i]->values().end());
  }
  nlohmann::json manifest = {{"format", "oneshot-model"},
                             {"version", 1},
                             {"arch_id", to_string(spec.arch)},
                             {"d", spec.feature_dim()},
                             {"C", spec.num_classes},
                             {"resolution", spec.resolution},
                             {"seed", spec.init_seed},
                             {"widths", spec.widths},
                             {"params", params}};
  return detail::write_archive(path, manifest, blob);
}

LocalModel load_checkpoint(const std::filesystem::path& path) {
  auto a = detail::read_archive(path);
  detail::expect_format(a.manifest, "oneshot-model");
  ModelSpec spec;
  spec.arch = parse_arch(a.manifest.at("arch_id").get<std::string>());
  spec.num_classes = a.manifest.at("C").get<std::size_t>();
  spec.resolution = a.manifest.at("resolution").get<std::size_t>();
  spec.init_seed = a.manifest.at("seed").get<std::uint64_t>();
  spec.widths = a.manifest.at("widths").get<std::vector<std::size_t>>();
  LocalModel model(spec);
  auto tensors = model.net().parameters();
  const auto& table = a.manifest.at("params");
  if (table.size() != tensors.size()) throw IoError("checkpoint parameter table does not match architecture");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto shape = table[i].at("shape").get<nn::Shape>();
    const auto offset = table[i].at("offset").get<std::size_t>();
    if (shape != tensors[i]->shape() || offset + tensors[i]->size() > a.payload.size()) {
      throw IoError("checkpoint parameter '" + table[i].at("name").get<std::string>() + "' is malformed");
    }
    std::copy_n(a.payload.begin() + static_cast<std::ptrdiff_t>(offset), tensors[i]->size(),
                tensors[i]->values().begin());
  }
  return model;
}

}  // namespace oneshot
