#include <benchmark/benchmark.h>

#include "oneshot/distiller.hpp"
#include "oneshot/fourier.hpp"
#include "oneshot/privacy.hpp"

using namespace oneshot;

namespace {

Image noise_image(std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  Image im(3, side, side);
  for (auto& v : im.pixels) v = static_cast<float>(uniform01(rng));
  return im;
}

void BM_fft2(benchmark::State& state) {
  const auto im = noise_image(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(fft2(im));
}
BENCHMARK(BM_fft2)->Arg(16)->Arg(32)->Arg(64);

void BM_fourier_perturb_image(benchmark::State& state) {
  const auto a = noise_image(32, 2), b = noise_image(32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(fourier_perturb_image(a, b, 0.8));
}
BENCHMARK(BM_fourier_perturb_image);

void BM_ssim(benchmark::State& state) {
  const auto a = noise_image(32, 4), b = noise_image(32, 5);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_ssim);

void BM_conv_forward(benchmark::State& state) {
  Rng rng(6);
  const auto ch = static_cast<std::size_t>(state.range(0));
  nn::Sequential<float> net;
  net.emplace<nn::Conv2d<float>>(ch, ch, nn::ops::ConvGeometry{3, 1, 1}, rng);
  nn::Tensor<float> x({32, ch, 16, 16});
  for (auto& v : x.values()) v = static_cast<float>(uniform01(rng));
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_conv_forward)->Arg(16)->Arg(32)->Arg(64);

void BM_alignment_loss(benchmark::State& state) {
  AutoencoderSpec as;
  as.kind = AeKind::kRandomInit;
  const Autoencoder ae(as);
  ModelSpec ms;
  ms.widths = {16, 32, 128};
  const auto net = build_classifier<float>(ms);
  const auto b = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  nn::Tensor<float> z({b, 4, 8, 8});
  for (auto& v : z.values()) v = static_cast<float>(uniform01(rng));
  nn::Tensor<float> target({1, 128});
  for (auto _ : state) benchmark::DoNotOptimize(alignment_loss<float>(ae.decoder(), net.extractor, z, target, false));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b));
}
BENCHMARK(BM_alignment_loss)->Arg(4)->Arg(50);

}  // namespace

BENCHMARK_MAIN();
