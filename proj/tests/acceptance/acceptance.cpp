// One line per acceptance criterion: "criterion N: PASS|FAIL <detail>".
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "metric_pairs.hpp"
#include "oneshot/corpus.hpp"
#include "oneshot/harness.hpp"

using namespace oneshot;
namespace fs = std::filesystem;
using cd = std::complex<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  // A failing sub-check that is tolerated by --known-red.
  bool tolerable = false;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1: FFT against direct summation ------------------------------------

std::vector<cd> direct_dft(const std::vector<double>& x, std::size_t h, std::size_t w, int sign) {
  std::vector<cd> out(h * w);
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      cd acc = 0;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double a = sign * 2.0 * std::numbers::pi * (double(u * y) / double(h) + double(v * xx) / double(w));
          acc += x[y * w + xx] * cd(std::cos(a), std::sin(a));
        }
      }
      out[u * w + v] = acc;
    }
  }
  return out;
}

Outcome fft_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst_fwd = 0, worst_inv = 0;
  for (std::size_t n : {2u, 4u, 8u}) {
    for (int rep = 0; rep < 5; ++rep) {
      Image im(1, n, n);
      for (auto& v : im.pixels) v = static_cast<float>(uniform01(rng));
      const std::vector<double> x(im.pixels.begin(), im.pixels.end());
      const auto ref = direct_dft(x, n, n, -1);
      const auto s = fft2(im);
      for (std::size_t i = 0; i < n * n; ++i) {
        const cd got = std::polar(s.amplitude[i], -s.phase[i]);
        worst_fwd = std::max(worst_fwd, std::abs(got - ref[i]));
      }
      const auto inv = ifft2_unclipped(s);
      const auto back = [&] {
        std::vector<double> out(n * n);
        for (std::size_t y = 0; y < n; ++y) {
          for (std::size_t xx = 0; xx < n; ++xx) {
            cd acc = 0;
            for (std::size_t u = 0; u < n; ++u) {
              for (std::size_t v = 0; v < n; ++v) {
                const double a = 2.0 * std::numbers::pi * (double(u * y) / double(n) + double(v * xx) / double(n));
                acc += ref[u * n + v] * cd(std::cos(a), std::sin(a));
              }
            }
            out[y * n + xx] = acc.real() / double(n * n);
          }
        }
        return out;
      }();
      for (std::size_t i = 0; i < n * n; ++i) worst_inv = std::max(worst_inv, std::abs(inv.image.pixels[i] - back[i]));
    }
  }
  double worst_rt = 0;
  for (int i = 0; i < 100; ++i) {
    Image im(3, 32, 32);
    for (auto& v : im.pixels) v = static_cast<float>(uniform01(rng));
    const auto back = ifft2(fft2(im));
    for (std::size_t k = 0; k < im.size(); ++k) worst_rt = std::max(worst_rt, double(std::abs(back.pixels[k] - im.pixels[k])));
  }
  const double secs = seconds_since(t0);
  return {worst_fwd <= 1e-6 && worst_inv <= 1e-6 && worst_rt <= 1e-5 && secs < 10,
          fmt("max |fft2-dft| %.2e, max |ifft2-idft| %.2e, round-trip %.2e over 100 images, %.2fs", worst_fwd, worst_inv,
              worst_rt, secs)};
}

// ---- 2: perturbation endpoints and lambda trend -------------------------

Outcome perturbation_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = generate_shapes_corpus({12, 32, 202});
  CoreSet cs;
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    Patch p;
    p.pixels = corpus.images[i].image;
    p.label = corpus.images[i].label;
    p.source_index = i;
    cs.patches.push_back(std::move(p));
  }
  PerturbConfig cfg;
  cfg.seed = 5;
  cfg.lambda = 0.0;
  const auto r0 = fourier_perturb(cs, cfg);
  double worst0 = 0;
  for (std::size_t j = 0; j < cs.size(); ++j) {
    for (std::size_t k = 0; k < cs.patches[j].pixels.size(); ++k) {
      worst0 = std::max(worst0, double(std::abs(r0.images[j].pixels[k] - cs.patches[j].pixels.pixels[k])));
    }
  }
  bool exact1 = true;
  for (std::size_t j = 0; j + 1 < cs.size(); j += 7) {
    const auto a = fft2(cs.patches[j].pixels);
    const auto b = fft2(cs.patches[j + 1].pixels);
    const auto m = perturb_amplitude(a, b.amplitude, 1.0);
    exact1 = exact1 && m.amplitude == b.amplitude && m.phase == a.phase;
  }
  std::vector<double> means;
  for (double l : {0.1, 0.5, 0.8}) {
    cfg.lambda = l;
    means.push_back(privacy_report(cs, fourier_perturb(cs, cfg).images).mean_psnr);
  }
  const bool trend = means[0] > means[1] && means[1] > means[2];
  const double secs = seconds_since(t0);
  return {worst0 <= 1e-5 && exact1 && trend && secs < 60,
          fmt("lambda=0 max err %.2e, lambda=1 exact %s, PSNR %.2f > %.2f > %.2f on %zu patches, %.1fs", worst0,
              exact1 ? "yes" : "no", means[0], means[1], means[2], cs.size(), secs)};
}

// ---- 3: Core-Set selection against exhaustive enumeration ----------------

// Per class, the ipc-subset whose (score desc, source asc) ordering is
// lexicographically first among all subsets.
std::vector<std::size_t> enumerate_class(const std::vector<std::pair<double, std::size_t>>& members, std::size_t ipc) {
  auto key_less = [](const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  std::vector<std::pair<double, std::size_t>> best;
  std::vector<bool> mask(members.size(), false);
  std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(ipc), true);
  do {
    std::vector<std::pair<double, std::size_t>> pick;
    for (std::size_t m = 0; m < members.size(); ++m) {
      if (mask[m]) pick.push_back(members[m]);
    }
    std::sort(pick.begin(), pick.end(), key_less);
    if (best.empty() || std::lexicographical_compare(pick.begin(), pick.end(), best.begin(), best.end(), key_less)) {
      best = pick;
    }
  } while (std::prev_permutation(mask.begin(), mask.end()));
  std::vector<std::size_t> out;
  for (const auto& [s, i] : best) out.push_back(i);
  return out;
}

Outcome coreset_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng meta(303);
  std::size_t identical = 0, total_patches = 0;
  for (int inst = 0; inst < 5; ++inst) {
    const std::size_t classes = 3 + uniform_index(meta, 3);
    const std::size_t n = 40 + uniform_index(meta, 25);  // <= 64
    ModelSpec spec;
    spec.num_classes = classes;
    spec.resolution = 16;
    spec.widths = {8, 16};
    spec.init_seed = derive_seed(303, "instance", static_cast<std::uint64_t>(inst));
    const LocalModel model(spec);
    ClientShard shard;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t side = 16 + uniform_index(meta, 17);
      Image im(3, side, side);
      for (auto& v : im.pixels) v = static_cast<float>(uniform01(meta));
      shard.images.push_back({std::move(im), static_cast<int>(uniform_index(meta, classes))});
      shard.corpus_indices.push_back(i);
    }
    SelectionSpec sel;
    sel.ipc = 5;
    sel.patches_per_image = 3;
    sel.seed = static_cast<std::uint64_t>(inst);

    // Oracle: single-patch scoring, strict > keeps the first best crop.
    std::map<int, std::vector<std::pair<double, std::size_t>>> by_class;
    std::vector<Patch> winners(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto cands = extract_patches(shard.images[i], i, sel, 16);
      std::size_t best = 0;
      double best_score = score_patch(model, cands[0]);
      for (std::size_t k = 1; k < cands.size(); ++k) {
        const double s = score_patch(model, cands[k]);
        if (s > best_score) {
          best = k;
          best_score = s;
        }
      }
      winners[i] = cands[best];
      by_class[shard.images[i].label].push_back({best_score, i});
    }
    std::vector<std::pair<int, std::size_t>> expected;
    for (const auto& [label, members] : by_class) {
      if (members.size() < sel.ipc) continue;
      for (auto i : enumerate_class(members, sel.ipc)) expected.push_back({label, i});
    }

    const auto cs = select_coreset(shard, model, sel);
    bool same = cs.size() == expected.size();
    for (std::size_t j = 0; same && j < cs.size(); ++j) {
      const auto& p = cs.patches[j];
      same = p.label == expected[j].first && p.source_index == expected[j].second &&
             p.pixels == winners[p.source_index].pixels;
    }
    identical += same;
    total_patches += cs.size();
  }
  const double secs = seconds_since(t0);
  return {identical == 5 && secs < 60,
          fmt("%zu/5 instances identical to enumeration (%zu selected patches), %.1fs", identical, total_patches, secs)};
}

// ---- 4: synthesis gradient and descent -----------------------------------

double toy_gradient_error() {
  Rng init(404);
  nn::Sequential<double> dec;
  dec.emplace<nn::Upsample2<double>>();
  dec.emplace<nn::Conv2d<double>>(2, 3, nn::ops::ConvGeometry{3, 1, 1}, init);
  dec.emplace<nn::Sigmoid<double>>();
  ModelSpec spec;
  spec.num_classes = 3;
  spec.resolution = 16;
  spec.widths = {6, 12};
  spec.init_seed = 405;
  const auto h = build_classifier<double>(spec).extractor;
  Rng rng(406);
  nn::Tensor<double> z({4, 2, 8, 8});
  for (auto& v : z.values()) v = uniform01(rng) * 2 - 1;
  nn::Tensor<double> target({1, 12});
  for (auto& v : target.values()) v = uniform01(rng);
  const auto r = alignment_loss<double>(dec, h, z, target, false);
  double worst = 0;
  for (int s = 0; s < 40; ++s) {
    const std::size_t i = uniform_index(rng, z.size());
    auto zp = z, zm = z;
    zp[i] += 1e-6;
    zm[i] -= 1e-6;
    const double fd = (alignment_loss<double>(dec, h, zp, target, false).value -
                       alignment_loss<double>(dec, h, zm, target, false).value) / 2e-6;
    if (std::abs(fd) < 1e-9 && std::abs(r.grad[i]) < 1e-9) continue;
    worst = std::max(worst, std::abs(fd - r.grad[i]) / std::max({std::abs(fd), std::abs(r.grad[i]), 1e-6}));
  }
  return worst;
}

Outcome synthesis_descent(const ExperimentConfig& cfg, const fs::path& run) {
  const auto t0 = std::chrono::steady_clock::now();
  const double grad_err = toy_gradient_error();
  const auto ae = load_autoencoder(run / "models" / "autoencoder.ae");
  for (int id = 0; id < static_cast<int>(cfg.partition.n_clients); ++id) {
    const auto stem = run / "coresets" / ("client_" + std::to_string(id));
    if (!fs::exists(stem.string() + ".coreset")) continue;
    auto cs = load_coreset(stem.string() + ".coreset");
    if (cs.size() < 64) continue;
    auto perturbed = load_images(stem.string() + ".perturbed");
    cs.patches.resize(64);
    perturbed.resize(64);
    const auto model = load_checkpoint(run / "models" / ("client_" + std::to_string(id) + ".model"));
    SynthesisConfig sc = cfg.synthesis;
    sc.T_syn = 50;
    sc.eta_syn = 0.1;
    const auto set = synthesize_distillates(cs, perturbed, ae, model, sc);
    const double ratio = set.final_loss() / set.initial_loss();
    const double secs = seconds_since(t0);
    return {grad_err <= 1e-3 && ratio <= 0.5 && ae.kind() == AeKind::kTrainedSmall && secs < 300,
            fmt("toy grad rel err %.2e; client %d, 64 patches, %s AE: L_syn %.4g -> %.4g (ratio %.3f), %.1fs", grad_err, id,
                to_string(ae.kind()).c_str(), set.initial_loss(), set.final_loss(), ratio, secs)};
  }
  return {false, fmt("toy grad rel err %.2e; no client holds a 64-patch Core-Set", grad_err)};
}

// ---- 5, 6, 8, 9: desk runs ------------------------------------------------

Outcome end_to_end(const ExperimentReport& rep, double run_seconds) {
  const double fedavg = 100 * rep.accuracy("fedavg");
  const double main = 100 * rep.accuracy("fedsd2c");
  const double random = 100 * rep.accuracy("random_selection");
  const bool a = fedavg <= 20.0, b = main >= fedavg + 15.0, c = main >= random;
  return {a && b && c && run_seconds < 4 * 3600,
          fmt("FedAvg %.2f%% (<=20: %s), FedSD2C %.2f%% (>= FedAvg+15: %s), random selection %.2f%% (FedSD2C >=: %s), "
              "run %.0fs",
              fedavg, a ? "yes" : "no", main, b ? "yes" : "no", random, c ? "yes" : "no", run_seconds)};
}

// Payload recomputed from each archive's own manifest and byte length.
Outcome comm_accounting(const ExperimentReport& rep, const fs::path& run) {
  std::uint64_t derived = 0, from_size = 0;
  std::size_t clients = 0;
  bool per_client = true;
  for (const auto& c : rep.clients) {
    const auto path = run / "distillates" / "fedsd2c" / ("client_" + std::to_string(c.client_id) + ".dist");
    if (!fs::exists(path)) continue;
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::getline(in, line);
    const auto m = nlohmann::json::parse(line);
    std::uint64_t latent = 1;
    for (auto d : m.at("latent_shape")) latent *= d.get<std::uint64_t>();
    const std::uint64_t bytes = m.at("count").get<std::uint64_t>() * (latent + m.at("C").get<std::uint64_t>()) * 4;
    const std::uint64_t on_disk = fs::file_size(path) - line.size() - 1;
    per_client = per_client && bytes == c.payload_bytes && bytes == on_disk;
    derived += bytes;
    from_size += on_disk;
    ++clients;
  }
  const bool exact = clients > 0 && per_client && derived == rep.cost.total_payload_bytes && from_size == derived;
  const bool ratio_ok = rep.cost.ratio < 0.1;
  Outcome o{exact && ratio_ok,
            fmt("payload %llu B over %zu clients, manifest arithmetic %s; mean payload %.0f B / checkpoint %llu B = %.3f "
                "(< 0.1: %s)",
                static_cast<unsigned long long>(rep.cost.total_payload_bytes), clients, exact ? "exact" : "MISMATCH",
                rep.cost.mean_payload_bytes, static_cast<unsigned long long>(rep.cost.model_bytes), rep.cost.ratio,
                ratio_ok ? "yes" : "no")};
  o.tolerable = exact && !ratio_ok;
  return o;
}

Outcome metric_oracles() {
  double worst_p = 0, worst_s = 0;
  for (std::size_t k = 0; k < testing::kMetricReference.size(); ++k) {
    const auto [a, b] = testing::metric_pair(k);
    worst_p = std::max(worst_p, std::abs(psnr(a, b) - testing::kMetricReference[k].psnr));
    worst_s = std::max(worst_s, std::abs(ssim(a, b) - testing::kMetricReference[k].ssim));
  }
  const auto [a, b] = testing::metric_pair(0);
  const bool sentinels = psnr(a, a) == 100.0 && ssim(b, b) == 100.0;
  return {worst_p <= 1e-6 && worst_s <= 1e-4 && sentinels,
          fmt("%zu pairs: max PSNR err %.2e dB, max SSIM err %.2e; identical-pair sentinels %s",
              testing::kMetricReference.size(), worst_p, worst_s, sentinels ? "exact" : "WRONG")};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const ExperimentReport& r1, const ExperimentReport& r2, const fs::path& run1, const fs::path& run2) {
  double worst = 0;
  bool all_methods = r1.methods.size() == r2.methods.size() && !r1.methods.empty();
  for (const auto& m : r1.methods) {
    const double other = r2.accuracy(m.method);
    if (std::isnan(other)) all_methods = false;
    else worst = std::max(worst, 100 * std::abs(m.accuracy - other));
  }
  std::size_t files = 0, differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(run1 / "distillates")) {
    if (e.path().extension() != ".dist") continue;
    ++files;
    const auto twin = run2 / fs::relative(e.path(), run1);
    if (!fs::exists(twin) || slurp(e.path()) != slurp(twin)) ++differing;
  }
  return {all_methods && worst <= 0.5 && files > 0 && differing == 0,
          fmt("max accuracy gap %.2f points over %zu methods; %zu/%zu distillate archives bit-identical", worst,
              r1.methods.size(), files - differing, files)};
}

Outcome noise_tradeoff(const ExperimentReport& rep, const ExperimentConfig& cfg) {
  const auto dist = to_string(cfg.noise_cfg.distribution);
  const double a1 = 100 * rep.accuracy(dist + "_p0.1"), a2 = 100 * rep.accuracy(dist + "_p0.2");
  const auto* p1 = rep.privacy_row(dist, 0.1);
  const auto* p2 = rep.privacy_row(dist, 0.2);
  if (!p1 || !p2 || std::isnan(a1) || std::isnan(a2)) return {false, "noise rows for p=0.1 and p=0.2 are missing"};
  const bool acc = a2 < a1, psnr_down = p2->mean_psnr < p1->mean_psnr;
  return {acc && psnr_down, fmt("%s s=%.2f: accuracy p=0.1 %.2f%% vs p=0.2 %.2f%% (lower: %s); PSNR %.2f vs %.2f dB (lower: %s)",
                                dist.c_str(), cfg.noise_cfg.s, a1, a2, acc ? "yes" : "no", p1->mean_psnr, p2->mean_psnr,
                                psnr_down ? "yes" : "no")};
}

// Runs the pipeline into `dir` unless a finished run is already there and reuse is allowed.
double desk_run(const ExperimentConfig& cfg, const fs::path& dir, bool reuse) {
  if (reuse && fs::exists(dir / "reports" / "report.json")) return 0.0;
  fs::remove_all(dir);
  ExperimentConfig c = cfg;
  c.out_dir = dir;
  c.deterministic = true;
  const auto t0 = std::chrono::steady_clock::now();
  run_pipeline(c);
  return seconds_since(t0);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string config_path, work = "acceptance-work";
  std::vector<int> known_red, only;
  bool reuse = false;
  app.add_option("--config", config_path, "Desk config")->required();
  app.add_option("--work", work, "Scratch directory for the two desk runs");
  app.add_option("--known-red", known_red, "Criteria whose threshold failure is documented and tolerated");
  app.add_option("--only", only, "Run only these criteria");
  app.add_flag("--reuse", reuse, "Reuse finished desk runs found in --work");
  CLI11_PARSE(app, argc, argv);

  auto cfg = load_config(config_path);
  cfg.resolve();
  const fs::path run1 = fs::path(work) / "run1", run2 = fs::path(work) / "run2";
  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };

  int hard_failures = 0;
  auto emit = [&](int n, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const bool tolerated =
        !o.pass && o.tolerable && std::find(known_red.begin(), known_red.end(), n) != known_red.end();
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " " << o.detail
              << (tolerated ? " [known red]" : "") << std::endl;
    if (!o.pass && !tolerated) ++hard_failures;
  };

  emit(1, fft_oracle);
  emit(2, perturbation_trend);
  emit(3, coreset_oracle);

  const bool need_run1 = wanted(4) || wanted(5) || wanted(6) || wanted(8) || wanted(9);
  double secs1 = 0;
  std::optional<ExperimentReport> rep1, rep2;
  if (need_run1) {
    try {
      std::cout << "desk run 1 -> " << run1.string() << std::endl;
      secs1 = desk_run(cfg, run1, reuse);
      if (secs1 == 0.0) {
        // Reused: the stage timings stand in for the wall clock.
        for (const auto& [stage, s] : collect_report(run1).stage_seconds) secs1 += s;
      }
      rep1 = collect_report(run1);
    } catch (const std::exception& e) {
      std::cout << "desk run 1 failed: " << e.what() << std::endl;
    }
  }
  auto with_run1 = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!rep1) return {false, "desk run 1 unavailable"};
      return fn();
    };
  };
  emit(4, with_run1([&] { return synthesis_descent(cfg, run1); }));
  emit(5, with_run1([&] { return end_to_end(*rep1, secs1); }));
  emit(6, with_run1([&] { return comm_accounting(*rep1, run1); }));
  emit(7, metric_oracles);
  if (wanted(8) && rep1) {
    try {
      std::cout << "desk run 2 -> " << run2.string() << std::endl;
      desk_run(cfg, run2, reuse);
      rep2 = collect_report(run2);
    } catch (const std::exception& e) {
      std::cout << "desk run 2 failed: " << e.what() << std::endl;
    }
  }
  emit(8, [&]() -> Outcome {
    if (!rep1 || !rep2) return {false, "desk runs unavailable"};
    return determinism(*rep1, *rep2, run1, run2);
  });
  emit(9, with_run1([&] { return noise_tradeoff(*rep1, cfg); }));

  std::cout << (hard_failures == 0 ? "acceptance: OK" : "acceptance: " + std::to_string(hard_failures) + " failing")
            << std::endl;
  return hard_failures == 0 ? 0 : 1;
}
