#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "metric_pairs.hpp"
#include "oneshot/privacy.hpp"

using namespace oneshot;

TEST_CASE("psnr and ssim match frozen reference values") {
  for (std::size_t k = 0; k < testing::kMetricReference.size(); ++k) {
    CAPTURE(k);
    const auto [a, b] = testing::metric_pair(k);
    CHECK(std::abs(psnr(a, b) - testing::kMetricReference[k].psnr) < 1e-6);
    CHECK(std::abs(ssim(a, b) - testing::kMetricReference[k].ssim) < 1e-4);
  }
}

TEST_CASE("identical-pair sentinels") {
  Rng rng(3);
  const auto a = testing::random_image(rng);
  CHECK(psnr(a, a) == kPsnrCap);
  CHECK(ssim(a, a) == 100.0);
}

TEST_CASE("psnr closed form") {
  Image a(3, 16, 16, 0.5f), b(3, 16, 16, 0.6f);  // MSE 0.01
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
}

TEST_CASE("ssim of two constants reduces to the luminance term") {
  for (auto [x, y] : {std::pair{0.2, 0.7}, std::pair{0.5, 0.5}, std::pair{0.0, 1.0}, std::pair{0.9, 0.85}}) {
    Image a(3, 16, 16, static_cast<float>(x)), b(3, 16, 16, static_cast<float>(y));
    const double fx = static_cast<float>(x), fy = static_cast<float>(y);
    const double c1 = 1e-4;
    CHECK(ssim(a, b) == doctest::Approx(100.0 * (2 * fx * fy + c1) / (fx * fx + fy * fy + c1)).epsilon(1e-9));
  }
}

TEST_CASE("ssim is symmetric and bounded") {
  Rng rng(4);
  for (int i = 0; i < 5; ++i) {
    const auto a = testing::random_image(rng), b = testing::random_image(rng);
    const double s = ssim(a, b);
    CHECK(std::abs(s - ssim(b, a)) < 1e-9);
    CHECK((s >= -100.0 && s <= 100.0));
  }
}

TEST_CASE("metric argument checks") {
  CHECK_THROWS_AS(psnr(Image(3, 16, 16), Image(3, 16, 8)), InvalidArgument);
  CHECK_THROWS_AS(ssim(Image(3, 8, 8), Image(3, 8, 8)), InvalidArgument);
}

TEST_CASE("privacy_report means are plain averages") {
  Rng rng(5);
  std::vector<Image> a, b;
  for (int i = 0; i < 6; ++i) {
    a.push_back(testing::random_image(rng, 3, 16, 16));
    b.push_back(testing::random_image(rng, 3, 16, 16));
  }
  const auto r = privacy_report(a, b, "x");
  double ps = 0, ss = 0;
  for (int i = 0; i < 6; ++i) {
    ps += r.psnr[i];
    ss += r.ssim[i];
  }
  CHECK(r.mean_psnr == doctest::Approx(ps / 6));
  CHECK(r.mean_ssim == doctest::Approx(ss / 6));
  const auto same = privacy_report(a, a);
  CHECK(same.mean_psnr == 100.0);
  CHECK(same.mean_ssim == 100.0);
  CHECK_THROWS_AS(privacy_report(a, std::span<const Image>(b).first(3)), InvalidArgument);
}

TEST_CASE("noise perturbation limits") {
  std::vector<float> z(4096);
  Rng rng(6);
  for (auto& v : z) v = static_cast<float>(uniform01(rng) * 2 - 1);

  NoiseConfig zero{1.0, 0.0, NoiseDist::kLaplace, 1};
  for (float v : noise_perturb(z, zero)) CHECK(v == 0.0f);

  NoiseConfig tiny{0.0, 1e-3, NoiseDist::kGaussian, 2};
  const auto out = noise_perturb(z, tiny);
  double worst = 0;
  for (std::size_t i = 0; i < z.size(); ++i) worst = std::max(worst, double(std::abs(out[i] - z[i])));
  CHECK(worst <= 5 * 1e-3);  // 4096 draws stay well inside 5 sigma

  CHECK_THROWS_AS(noise_perturb(z, NoiseConfig{1.5, 0.1, NoiseDist::kLaplace, 0}), InvalidArgument);
  CHECK_THROWS_AS(noise_perturb(z, NoiseConfig{0.1, -1.0, NoiseDist::kLaplace, 0}), InvalidArgument);
}

TEST_CASE("noise output variance matches the mixture formula") {
  const std::size_t n = 100000;
  std::vector<float> z(n);
  Rng rng(7);
  for (auto& v : z) v = static_cast<float>(uniform01(rng) * 2 - 1);
  auto variance = [](const std::vector<float>& v) {
    double m = 0, q = 0;
    for (float x : v) m += x;
    m /= double(v.size());
    for (float x : v) q += (x - m) * (x - m);
    return q / double(v.size());
  };
  const double vz = variance(z);
  for (auto [dist, unit_var] : {std::pair{NoiseDist::kLaplace, 2.0}, std::pair{NoiseDist::kGaussian, 1.0}}) {
    for (double p : {0.1, 0.2}) {
      NoiseConfig cfg{p, 0.2, dist, 9};
      const double expect = (1 - p) * (1 - p) * vz + 0.04 * unit_var;
      CHECK(variance(noise_perturb(z, cfg)) == doctest::Approx(expect).epsilon(0.1));
    }
  }
}

TEST_CASE("noise on a distillate set keeps labels and uses per-item streams") {
  DistillateSet s;
  s.latent_shape = {4, 2, 2};
  s.num_classes = 3;
  for (int j = 0; j < 3; ++j) {
    Distillate d;
    d.latent.assign(16, 0.5f);
    d.soft_label.probs = {0.2f, 0.3f, 0.5f};
    d.origin = {0, 2, static_cast<std::size_t>(j)};
    s.items.push_back(d);
  }
  const auto n = noise_perturb(s, {0.1, 0.2, NoiseDist::kLaplace, 4});
  REQUIRE(n.size() == 3);
  CHECK(n.items[0].latent != n.items[1].latent);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(n.items[j].soft_label.probs == s.items[j].soft_label.probs);
    CHECK(n.items[j].origin.coreset_index == j);
  }
  CHECK(noise_perturb(s, {0.1, 0.2, NoiseDist::kLaplace, 4}).items[2].latent == n.items[2].latent);
}

TEST_CASE("noise distribution names") {
  CHECK(parse_noise_dist("laplace") == NoiseDist::kLaplace);
  CHECK(parse_noise_dist(to_string(NoiseDist::kGaussian)) == NoiseDist::kGaussian);
  CHECK_THROWS_AS(parse_noise_dist("uniform"), InvalidArgument);
}

namespace {

CoreSet labelled_coreset(std::size_t n, Rng& rng) {
  CoreSet cs;
  for (std::size_t i = 0; i < n; ++i) {
    Patch p;
    p.pixels = testing::random_image(rng, 3, 16, 16);
    p.label = static_cast<int>(i % 4);
    p.source_index = i;
    cs.patches.push_back(std::move(p));
  }
  return cs;
}

}  // namespace

TEST_CASE("fedmix pairs, counts and convexity") {
  Rng rng(8);
  const auto cs = labelled_coreset(10, rng);
  const auto m = fedmix_synthesize(cs, 4, 1);
  CHECK(m.images.size() == 5);
  std::set<std::size_t> used;
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    const auto [a, b] = m.pairs[i];
    CHECK(used.insert(a).second);
    CHECK(used.insert(b).second);
    for (std::size_t k = 0; k < m.images[i].size(); ++k) {
      const float lo = std::min(cs.patches[a].pixels.pixels[k], cs.patches[b].pixels.pixels[k]);
      const float hi = std::max(cs.patches[a].pixels.pixels[k], cs.patches[b].pixels.pixels[k]);
      CHECK((m.images[i].pixels[k] >= lo && m.images[i].pixels[k] <= hi));
    }
    float total = 0;
    for (float p : m.labels[i].probs) total += p;
    CHECK(total == doctest::Approx(1.0f));
    CHECK(m.labels[i].probs[static_cast<std::size_t>(cs.patches[a].label)] >= 0.5f);
  }
  CHECK(fedmix_synthesize(labelled_coreset(7, rng), 4, 1).images.size() == 3);
  CHECK_THROWS_AS(fedmix_synthesize(labelled_coreset(1, rng), 4, 1), InvalidArgument);
}

TEST_CASE("fedmix of identical images returns that image") {
  Rng rng(9);
  auto cs = labelled_coreset(2, rng);
  cs.patches[1].pixels = cs.patches[0].pixels;
  const auto m = fedmix_synthesize(cs, 4, 3);
  REQUIRE(m.images.size() == 1);
  CHECK(m.images[0] == cs.patches[0].pixels);
}

TEST_CASE("communication cost arithmetic") {
  const std::vector<std::uint64_t> per_client(10, 500ull * (256 + 10) * 4);
  const auto r = comm_cost(per_client, 44'000'000);
  CHECK(r.total_payload_bytes == 5'320'000);
  CHECK(r.mean_payload_bytes == 532'000.0);
  CHECK(r.ratio == doctest::Approx(532'000.0 / 44'000'000.0));
  // Half a megabyte against a 44 MB checkpoint.
  CHECK(comm_cost(std::vector<std::uint64_t>{500'000}, 44'000'000).ratio == doctest::Approx(0.011).epsilon(0.05));
  const auto empty = comm_cost(std::vector<std::uint64_t>(3, 0), 100);
  CHECK(empty.total_payload_bytes == 0);
  CHECK(empty.ratio == 0.0);
  CHECK(comm_cost({}, 100).ratio == 0.0);
}
