#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oneshot/corpus.hpp"
#include "oneshot/distiller.hpp"

using namespace oneshot;

namespace {

ModelSpec feat_spec(std::size_t classes = 3, std::size_t res = 16) {
  ModelSpec s;
  s.num_classes = classes;
  s.resolution = res;
  s.widths = {8, 16};
  s.init_seed = 21;
  return s;
}

CoreSet coreset_of(std::vector<Image> images, std::size_t classes) {
  CoreSet cs;
  cs.client_id = 4;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Patch p;
    p.pixels = std::move(images[i]);
    p.label = static_cast<int>(i % classes);
    p.source_index = i;
    cs.patches.push_back(std::move(p));
    cs.covered_classes.insert(static_cast<int>(i % classes));
  }
  return cs;
}

std::vector<Image> shapes(std::size_t per_class, std::uint64_t seed, std::size_t side = 16) {
  const auto corpus = generate_shapes_corpus({per_class, side, seed});
  std::vector<Image> out;
  for (const auto& li : corpus.images) out.push_back(li.image);
  return out;
}

AutoencoderSpec ae_spec(AeKind kind, std::size_t res = 16) {
  AutoencoderSpec s;
  s.kind = kind;
  s.resolution = res;
  s.hidden_channels = 8;
  s.seed = 2;
  return s;
}

}  // namespace

TEST_CASE("identity passthrough decodes its own encoding") {
  const Autoencoder ae(ae_spec(AeKind::kIdentityPassthrough));
  CHECK(ae.latent_shape() == nn::Shape{3, 16, 16});
  CHECK(ae.parameter_count() == 0);
  Rng rng(1);
  const auto im = testing::random_image(rng, 3, 16, 16);
  CHECK(decode(ae, encode(ae, im)) == im);
}

TEST_CASE("conv autoencoder latent geometry") {
  const Autoencoder ae(ae_spec(AeKind::kRandomInit, 32));
  CHECK(ae.latent_shape() == nn::Shape{4, 8, 8});
  CHECK(ae.latent_size() < 3 * 32 * 32);
  Rng rng(2);
  const auto z = encode(ae, testing::random_image(rng));
  CHECK(z.size() == 256);
  const auto back = decode(ae, z);
  for (float v : back.pixels) CHECK((v >= 0.0f && v <= 1.0f));
  CHECK_THROWS_AS(encode(ae, nn::Tensor<float>({1, 3, 16, 16})), InvalidArgument);
  CHECK_THROWS_AS(decode(ae, nn::Tensor<float>({1, 3, 8, 8})), InvalidArgument);
}

TEST_CASE("trained autoencoder beats random weights on held-out images") {
  const auto train = shapes(20, 3);
  const auto held = shapes(5, 4);
  AeTrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 16;
  const auto trained = train_autoencoder(train, ae_spec(AeKind::kTrainedSmall), cfg);
  const auto random = train_autoencoder(train, ae_spec(AeKind::kRandomInit), cfg);
  CHECK(reconstruction_error(trained, held) < 0.5 * reconstruction_error(random, held));
  CHECK(trained.config_hash() != random.config_hash());
  CHECK(trained.config_hash().size() == 16);
  CHECK_THROWS_AS(train_autoencoder(std::vector<Image>{}, ae_spec(AeKind::kTrainedSmall), cfg), InvalidArgument);
}

TEST_CASE("autoencoder save and load") {
  testing::TempDir dir("ae");
  const Autoencoder ae(ae_spec(AeKind::kRandomInit));
  save_autoencoder(ae, dir / "a.ae");
  const auto back = load_autoencoder(dir / "a.ae");
  CHECK(back.config_hash() == ae.config_hash());
  CHECK(back.latent_shape() == ae.latent_shape());
}

TEST_CASE("zero iterations keep the encoded perturbed patches") {
  const auto imgs = shapes(1, 5);
  const auto cs = coreset_of(imgs, 10);
  Rng rng(6);
  std::vector<Image> perturbed;
  for (std::size_t i = 0; i < imgs.size(); ++i) perturbed.push_back(testing::random_image(rng, 3, 16, 16));
  const Autoencoder ae(ae_spec(AeKind::kRandomInit));
  const LocalModel model(feat_spec(10));
  SynthesisConfig cfg;
  cfg.T_syn = 0;
  const auto set = synthesize_distillates(cs, perturbed, ae, model, cfg);
  REQUIRE(set.size() == imgs.size());
  for (std::size_t j = 0; j < set.size(); ++j) {
    const auto z = encode(ae, perturbed[j]);
    REQUIRE(set.items[j].latent.size() == z.size());
    for (std::size_t k = 0; k < z.size(); ++k) CHECK(set.items[j].latent[k] == doctest::Approx(z[k]).epsilon(1e-5));
    CHECK(set.items[j].origin.label == cs.patches[j].label);
    CHECK(set.items[j].origin.coreset_index == j);
    float s = 0;
    for (float p : set.items[j].soft_label.probs) s += p;
    CHECK(s == doctest::Approx(1.0f).epsilon(1e-5));
  }
  CHECK(set.loss_trace.size() == 1);
  CHECK(set.loss_trace[0].size() == 1);
}

TEST_CASE("unperturbed identity inputs start aligned") {
  const auto imgs = shapes(1, 7);
  const auto cs = coreset_of(imgs, 10);
  const Autoencoder ae(ae_spec(AeKind::kIdentityPassthrough));
  const LocalModel model(feat_spec(10));
  SynthesisConfig cfg;
  cfg.T_syn = 2;
  cfg.batch_size = 4;
  const auto set = synthesize_distillates(cs, imgs, ae, model, cfg);
  CHECK(set.loss_trace.size() == 3);
  CHECK(set.initial_loss() <= 1e-8);
}

TEST_CASE("alignment loss gradient matches central differences") {
  Rng init(7);
  nn::Sequential<double> dec;
  dec.emplace<nn::Upsample2<double>>();
  dec.emplace<nn::Conv2d<double>>(2, 3, nn::ops::ConvGeometry{3, 1, 1}, init);
  dec.emplace<nn::Sigmoid<double>>();
  const auto h = build_classifier<double>(feat_spec(3)).extractor;

  Rng rng(8);
  nn::Tensor<double> z({3, 2, 8, 8});
  for (auto& v : z.values()) v = uniform01(rng) * 2 - 1;
  for (bool per_sample : {false, true}) {
    nn::Tensor<double> target(per_sample ? nn::Shape{3, 16} : nn::Shape{1, 16});
    for (auto& v : target.values()) v = uniform01(rng);
    const auto r = alignment_loss<double>(dec, h, z, target, per_sample);
    for (int s = 0; s < 25; ++s) {
      const std::size_t i = uniform_index(rng, z.size());
      auto zp = z, zm = z;
      zp[i] += 1e-6;
      zm[i] -= 1e-6;
      const double fd =
          (alignment_loss<double>(dec, h, zp, target, per_sample).value - alignment_loss<double>(dec, h, zm, target, per_sample).value) / 2e-6;
      if (std::abs(fd) < 1e-9 && std::abs(r.grad[i]) < 1e-9) continue;
      CHECK(std::abs(fd - r.grad[i]) / std::max({std::abs(fd), std::abs(r.grad[i]), 1e-6}) < 1e-3);
    }
  }
}

TEST_CASE("synthesis leaves the networks untouched and descends") {
  const auto imgs = shapes(1, 9);
  const auto cs = coreset_of(imgs, 10);
  std::vector<Image> perturbed;
  Rng rng(10);
  for (std::size_t i = 0; i < imgs.size(); ++i) perturbed.push_back(testing::random_image(rng, 3, 16, 16));
  const Autoencoder ae(ae_spec(AeKind::kRandomInit));
  const LocalModel model(feat_spec(10));
  const auto dec_before = ae.config_hash();
  const auto params_before = model.net().extractor.parameters();
  std::vector<nn::Tensor<float>> snapshot;
  for (const auto* p : params_before) snapshot.push_back(*p);

  SynthesisConfig cfg;
  cfg.T_syn = 10;
  cfg.batch_size = 5;
  cfg.step_halving = true;
  const auto set = synthesize_distillates(cs, perturbed, ae, model, cfg);
  CHECK(ae.config_hash() == dec_before);
  for (std::size_t i = 0; i < snapshot.size(); ++i) CHECK(*params_before[i] == snapshot[i]);
  REQUIRE(set.loss_trace.size() == 2);
  for (const auto& row : set.loss_trace) {
    CHECK(row.size() == 11);
    for (std::size_t t = 1; t < row.size(); ++t) CHECK(row[t] <= row[t - 1]);
  }
  CHECK(set.final_loss() < set.initial_loss());

  CHECK_THROWS_AS(synthesize_distillates(cs, std::span<const Image>(perturbed).first(3), ae, model, cfg), InvalidArgument);
}

TEST_CASE("distillate archive payload and round trip") {
  testing::TempDir dir("dist");
  DistillateSet s;
  s.client_id = 3;
  s.latent_shape = {4, 8, 8};
  s.num_classes = 10;
  s.ae_hash = "00000000deadbeef";
  Rng rng(11);
  for (std::size_t j = 0; j < 500; ++j) {
    Distillate d;
    d.latent.resize(256);
    for (auto& v : d.latent) v = static_cast<float>(uniform01(rng) * 4 - 2);
    d.soft_label.probs.assign(10, 0.1f);
    d.origin = {3, static_cast<int>(j % 10), j};
    s.items.push_back(std::move(d));
  }
  CHECK(s.payload_bytes() == 532'000);
  CHECK(serialize_distillates(s, dir / "c.dist") == 532'000);
  const auto back = load_distillates(dir / "c.dist");
  REQUIRE(back.size() == 500);
  CHECK(back.client_id == 3);
  CHECK(back.ae_hash == s.ae_hash);
  CHECK(back.latent_shape == s.latent_shape);
  for (std::size_t j = 0; j < 500; ++j) {
    CHECK(back.items[j].latent == s.items[j].latent);
    CHECK(back.items[j].soft_label.probs == s.items[j].soft_label.probs);
    CHECK(back.items[j].origin.coreset_index == j);
  }

  DistillateSet empty;
  empty.latent_shape = {4, 8, 8};
  empty.num_classes = 10;
  CHECK(empty.payload_bytes() == 0);
  CHECK(serialize_distillates(empty, dir / "e.dist") == 0);
  CHECK(load_distillates(dir / "e.dist").empty());

  s.items[0].latent.pop_back();
  CHECK_THROWS_AS(serialize_distillates(s, dir / "bad.dist"), InvalidArgument);
}

TEST_CASE("kind names and config checks") {
  for (auto k : {AeKind::kTrainedSmall, AeKind::kRandomInit, AeKind::kIdentityPassthrough}) {
    CHECK(parse_ae_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_ae_kind("vae"), InvalidArgument);
  SynthesisConfig bad;
  bad.eta_syn = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = {};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
