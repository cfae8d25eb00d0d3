#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oneshot/model.hpp"
#include "oneshot/nn/loss.hpp"

using namespace oneshot;

namespace {

ModelSpec tiny_spec(std::size_t classes = 2) {
  ModelSpec s;
  s.num_classes = classes;
  s.resolution = 16;
  s.widths = {8, 16};
  s.init_seed = 3;
  return s;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.learning_rate = 0.05;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_CASE("toy two-class shard is learned") {
  const auto shard = testing::shard_of(testing::two_class_toy(40, 1));
  const auto r = train_local(shard, tiny_spec(), quick(50));
  CHECK(r.report.train_accuracy >= 0.95);
  CHECK(r.report.epoch_loss.size() == 50);
  CHECK(r.report.epoch_loss.back() < r.report.epoch_loss.front());

  // Soft-label argmax agrees with the label on training images.
  std::vector<Image> imgs;
  for (const auto& li : shard.images) imgs.push_back(li.image);
  const auto soft = predict_soft(r.model, imgs);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < soft.size(); ++i) {
    const auto& p = soft[i].probs;
    agree += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) ==
             static_cast<std::size_t>(shard.images[i].label);
  }
  CHECK(double(agree) / double(soft.size()) >= 0.95);
  CHECK(evaluate(r.model, shard.images) == doctest::Approx(r.report.train_accuracy));

  // Held-out data from the same generator.
  CHECK(evaluate(r.model, testing::two_class_toy(20, 2)) >= 0.95);
}

TEST_CASE("zero epochs returns the initialization") {
  const auto shard = testing::shard_of(testing::two_class_toy(4, 1));
  const auto r = train_local(shard, tiny_spec(), quick(0));
  const LocalModel fresh(tiny_spec());
  const auto a = r.model.net().parameters();
  const auto b = fresh.net().parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
}

TEST_CASE("seeded retraining is reproducible") {
  const auto shard = testing::shard_of(testing::two_class_toy(20, 5));
  const auto a = train_local(shard, tiny_spec(), quick(5));
  const auto b = train_local(shard, tiny_spec(), quick(5));
  const auto held = testing::two_class_toy(10, 6);
  CHECK(std::abs(evaluate(a.model, held) - evaluate(b.model, held)) <= 1e-6);
  CHECK(a.report.epoch_loss == b.report.epoch_loss);
}

TEST_CASE("features, logits and soft labels compose") {
  const LocalModel m(tiny_spec(3));
  Rng rng(7);
  std::vector<Image> batch{testing::random_image(rng, 3, 16, 16)};
  batch.push_back(batch[0]);
  batch.push_back(testing::random_image(rng, 3, 16, 16));
  const auto f = extract_features(m, batch);
  CHECK(f.shape() == nn::Shape{3, 16});
  for (std::size_t k = 0; k < 16; ++k) CHECK(f[k] == f[16 + k]);
  for (float v : f.values()) CHECK(std::isfinite(v));

  const auto soft = predict_soft(m, batch);
  const auto direct = nn::softmax(m.net().head.forward(f));
  for (std::size_t j = 0; j < 3; ++j) {
    float s = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(soft[j].probs[c] == direct[j * 3 + c]);
      s += soft[j].probs[c];
    }
    CHECK(s == doctest::Approx(1.0f).epsilon(1e-6));
  }
  CHECK(extract_features(m, std::span<const Image>{}).shape() == nn::Shape{0, 16});
}

TEST_CASE("zero head gives uniform predictions") {
  LocalModel m(tiny_spec(4));
  for (auto* p : m.net().head.parameters()) p->fill(0.0f);
  Rng rng(8);
  const std::vector<Image> batch{testing::random_image(rng, 3, 16, 16), testing::random_image(rng, 3, 16, 16)};
  for (const auto& s : predict_soft(m, batch)) {
    for (float p : s.probs) CHECK(p == doctest::Approx(0.25f));
  }
}

TEST_CASE("random-weight accuracy is near chance") {
  ModelSpec spec = tiny_spec(4);
  spec.init_seed = 10;
  const LocalModel m(spec);
  Rng rng(11);
  std::vector<LabeledImage> data;
  for (int i = 0; i < 2000; ++i) data.push_back({testing::random_image(rng, 3, 16, 16), static_cast<int>(uniform_index(rng, 4))});
  CHECK(std::abs(evaluate(m, data) - 0.25) <= 0.05);
  CHECK_THROWS_AS(evaluate(m, std::vector<LabeledImage>{}), InvalidArgument);
}

TEST_CASE("checkpoint round-trip") {
  testing::TempDir dir("ckpt");
  for (auto arch : {Arch::kSmallConv, Arch::kResnetSmall}) {
    ModelSpec spec = tiny_spec(5);
    spec.arch = arch;
    spec.widths = {4, 8, 8};
    const LocalModel m(spec);
    const auto bytes = save_checkpoint(m, dir / "m.model");
    CHECK(bytes == 4 * m.parameter_count());
    CHECK(bytes == checkpoint_payload_bytes(m));
    const auto back = load_checkpoint(dir / "m.model");
    CHECK(back.spec().widths == spec.widths);
    CHECK(back.arch() == arch);
    const auto a = m.net().parameters();
    const auto b = back.net().parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.model"), IoError);
}

TEST_CASE("spec and input validation") {
  ModelSpec bad = tiny_spec();
  bad.resolution = 24;
  CHECK_THROWS_AS(LocalModel{bad}, InvalidArgument);
  bad = tiny_spec();
  bad.num_classes = 1;
  CHECK_THROWS_AS(LocalModel{bad}, InvalidArgument);
  bad = tiny_spec();
  bad.arch = Arch::kResnetSmall;
  CHECK_THROWS_AS(LocalModel{bad}, InvalidArgument);

  const LocalModel m(tiny_spec());
  CHECK_THROWS_AS(m.check_input(nn::Tensor<float>({1, 3, 32, 32})), InvalidArgument);
  CHECK_THROWS_AS(train_local(ClientShard{}, tiny_spec(), quick(1)), InvalidArgument);
  CHECK(parse_arch(to_string(Arch::kResnetSmall)) == Arch::kResnetSmall);
  CHECK_THROWS_AS(parse_arch("vgg"), InvalidArgument);
}

TEST_CASE("default-style training config is accepted") {
  TrainConfig c;
  c.momentum = 0.9;
  c.learning_rate = 0.01;
  c.weight_decay = 1e-4;
  c.batch_size = 128;
  CHECK_NOTHROW(c.validate());
  CHECK(c.epochs == 200);
}

TEST_CASE("single-class shard is allowed and flagged") {
  auto toy = testing::two_class_toy(5, 3);
  std::vector<LabeledImage> ones;
  for (auto& li : toy) {
    if (li.label == 1) ones.push_back(li);
  }
  const auto r = train_local(testing::shard_of(ones), tiny_spec(), quick(2));
  CHECK(r.report.single_class);
}
