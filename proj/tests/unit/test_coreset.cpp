#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "oneshot/coreset.hpp"

using namespace oneshot;

namespace {

ModelSpec observer_spec(std::size_t classes) {
  ModelSpec s;
  s.num_classes = classes;
  s.resolution = 16;
  s.widths = {8, 16};
  s.init_seed = 12;
  return s;
}

ClientShard random_shard(std::size_t n, std::size_t classes, std::uint64_t seed, std::size_t side = 20) {
  Rng rng(seed);
  std::vector<LabeledImage> imgs;
  for (std::size_t i = 0; i < n; ++i) imgs.push_back({testing::random_image(rng, 3, side, side), static_cast<int>(i % classes)});
  return testing::shard_of(std::move(imgs), 2);
}

// Exhaustive reference: per image, the first highest-scoring crop; per class,
// the ipc-subset of survivors with maximum total score.
struct OracleResult {
  std::set<std::size_t> sources;
  double total = 0.0;
};

OracleResult brute_force(const ClientShard& shard, const LocalModel& model, const SelectionSpec& spec,
                         std::size_t classes) {
  std::vector<std::vector<std::pair<double, std::size_t>>> by_class(classes);
  for (std::size_t i = 0; i < shard.images.size(); ++i) {
    const auto cands = extract_patches(shard.images[i], i, spec, model.spec().resolution);
    double best = -1e300;
    for (const auto& c : cands) best = std::max(best, score_patch(model, c));
    by_class[static_cast<std::size_t>(shard.images[i].label)].push_back({best, i});
  }
  OracleResult out;
  for (const auto& members : by_class) {
    if (members.size() < spec.ipc) continue;
    std::vector<bool> mask(members.size(), false);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(spec.ipc), true);
    double best = -1e300;
    std::set<std::size_t> chosen;
    do {
      double s = 0;
      std::set<std::size_t> pick;
      for (std::size_t m = 0; m < members.size(); ++m) {
        if (mask[m]) {
          s += members[m].first;
          pick.insert(members[m].second);
        }
      }
      if (s > best) {
        best = s;
        chosen = pick;
      }
    } while (std::prev_permutation(mask.begin(), mask.end()));
    out.total += best;
    out.sources.insert(chosen.begin(), chosen.end());
  }
  return out;
}

}  // namespace

TEST_CASE("selection matches exhaustive search") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    CAPTURE(seed);
    const auto shard = random_shard(30, 3, seed);
    const LocalModel model(observer_spec(3));
    SelectionSpec spec;
    spec.ipc = 5;
    spec.patches_per_image = 3;
    spec.seed = seed;
    const auto cs = select_coreset(shard, model, spec);
    const auto ref = brute_force(shard, model, spec, 3);
    REQUIRE(cs.size() == 15);
    std::set<std::size_t> got;
    double total = 0;
    for (const auto& p : cs.patches) {
      got.insert(p.source_index);
      total += p.score;
    }
    CHECK(total == doctest::Approx(ref.total).epsilon(1e-5));
    CHECK(got == ref.sources);
    CHECK(cs.covered_classes == std::set<int>{0, 1, 2});
  }
}

TEST_CASE("two-level structure holds") {
  const auto shard = random_shard(40, 4, 9);
  const LocalModel model(observer_spec(4));
  SelectionSpec spec;
  spec.ipc = 6;
  spec.patches_per_image = 4;
  spec.seed = 5;
  const auto cs = select_coreset(shard, model, spec);

  // At most one patch per source image, and each is that image's best crop.
  std::set<std::size_t> seen;
  for (const auto& p : cs.patches) {
    CHECK(seen.insert(p.source_index).second);
    double best = -1e300;
    for (const auto& c : extract_patches(shard.images[p.source_index], p.source_index, spec, 16)) {
      best = std::max(best, score_patch(model, c));
    }
    CHECK(p.score == doctest::Approx(best).epsilon(1e-5));
  }
  // No left-out image of a class beats the weakest selected one.
  for (int k = 0; k < 4; ++k) {
    double weakest = 1e300;
    for (const auto& p : cs.patches) {
      if (p.label == k) weakest = std::min(weakest, p.score);
    }
    for (std::size_t i = 0; i < shard.images.size(); ++i) {
      if (shard.images[i].label != k || seen.count(i)) continue;
      for (const auto& c : extract_patches(shard.images[i], i, spec, 16)) CHECK(score_patch(model, c) <= weakest + 1e-5);
    }
  }
  // Ordering: ascending class, then descending score.
  for (std::size_t j = 1; j < cs.size(); ++j) {
    const auto& a = cs.patches[j - 1];
    const auto& b = cs.patches[j];
    CHECK(a.label <= b.label);
    if (a.label == b.label) CHECK(a.score >= b.score);
  }
}

TEST_CASE("full-image crops with a single candidate") {
  const auto shard = random_shard(12, 3, 4, 16);
  const LocalModel model(observer_spec(3));
  SelectionSpec spec;
  spec.ipc = 4;
  spec.patches_per_image = 1;
  spec.scale_range = {1.0, 1.0};
  spec.aspect_range = {1.0, 1.0};
  const auto cs = select_coreset(shard, model, spec);
  REQUIRE(cs.size() == 12);
  for (const auto& p : cs.patches) {
    for (std::size_t k = 0; k < p.pixels.size(); ++k) {
      CHECK(p.pixels.pixels[k] == doctest::Approx(shard.images[p.source_index].image.pixels[k]).epsilon(1e-5));
    }
  }
}

TEST_CASE("underfull classes") {
  auto shard = random_shard(14, 3, 6);  // class sizes 5, 5, 4
  const LocalModel model(observer_spec(3));
  SelectionSpec spec;
  spec.ipc = 5;
  spec.patches_per_image = 2;
  const auto dropped = select_coreset(shard, model, spec);
  CHECK(dropped.covered_classes == std::set<int>{0, 1});
  CHECK(dropped.size() == 10);
  spec.keep_underfull = true;
  const auto kept = select_coreset(shard, model, spec);
  CHECK(kept.covered_classes == std::set<int>{0, 1, 2});
  CHECK(kept.size() == 14);
}

TEST_CASE("selection is deterministic") {
  const auto shard = random_shard(20, 2, 7);
  const LocalModel model(observer_spec(2));
  SelectionSpec spec;
  spec.ipc = 3;
  spec.patches_per_image = 3;
  spec.seed = 44;
  const auto a = select_coreset(shard, model, spec);
  const auto b = select_coreset(shard, model, spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    CHECK(a.patches[j].pixels == b.patches[j].pixels);
    CHECK(a.patches[j].source_index == b.patches[j].source_index);
  }
  const auto r1 = select_coreset_random(shard, spec, 16);
  const auto r2 = select_coreset_random(shard, spec, 16);
  REQUIRE(r1.size() == 6);
  for (std::size_t j = 0; j < r1.size(); ++j) CHECK(r1.patches[j].source_index == r2.patches[j].source_index);
}

TEST_CASE("level-2 depends only on score order") {
  Rng rng(8);
  std::vector<Patch> survivors;
  for (std::size_t i = 0; i < 20; ++i) {
    Patch p;
    p.label = static_cast<int>(i % 2);
    p.source_index = i;
    p.score = -3.0 * uniform01(rng);
    survivors.push_back(p);
  }
  auto transformed = survivors;
  for (auto& p : transformed) p.score = std::exp(5.0 * p.score) - 7.0;
  const auto a = select_top_per_class(survivors, 4, false);
  const auto b = select_top_per_class(transformed, 4, false);
  REQUIRE(a.size() == b.size());
  for (std::size_t j = 0; j < a.size(); ++j) CHECK(a.patches[j].source_index == b.patches[j].source_index);

  // Equal scores fall back to source order.
  for (auto& p : survivors) p.score = -1.0;
  const auto tied = select_top_per_class(survivors, 2, false);
  CHECK(tied.patches[0].source_index == 0);
  CHECK(tied.patches[1].source_index == 2);
  CHECK(tied.patches[2].source_index == 1);
}

TEST_CASE("score endpoints") {
  LocalModel model(observer_spec(5));
  for (auto* p : model.net().head.parameters()) p->fill(0.0f);
  Rng rng(10);
  Patch p;
  p.pixels = testing::random_image(rng, 3, 16, 16);
  p.label = 3;
  CHECK(score_patch(model, p) == doctest::Approx(-std::log(5.0)).epsilon(1e-6));

  (*model.net().head.parameters()[1])[3] = 60.0f;  // bias
  CHECK(std::abs(score_patch(model, p)) < 1e-6);
  p.label = 5;
  CHECK_THROWS_AS(score_patch(model, p), InvalidArgument);
}

TEST_CASE("crop sampler stays inside the image") {
  Rng rng(11);
  SelectionSpec spec;
  for (int i = 0; i < 500; ++i) {
    const auto b = sample_crop(37, 29, spec, rng);
    CHECK(b.height > 0);
    CHECK(b.width > 0);
    CHECK(b.top + b.height <= 37);
    CHECK(b.left + b.width <= 29);
  }
}

TEST_CASE("core-set archive round trip") {
  testing::TempDir dir("coreset");
  const auto shard = random_shard(12, 2, 12);
  const LocalModel model(observer_spec(2));
  SelectionSpec spec;
  spec.ipc = 3;
  spec.patches_per_image = 2;
  const auto cs = select_coreset(shard, model, spec);
  save_coreset(cs, spec, dir / "c.coreset");
  const auto back = load_coreset(dir / "c.coreset");
  REQUIRE(back.size() == cs.size());
  CHECK(back.client_id == cs.client_id);
  CHECK(back.covered_classes == cs.covered_classes);
  for (std::size_t j = 0; j < cs.size(); ++j) {
    CHECK(back.patches[j].pixels == cs.patches[j].pixels);
    CHECK(back.patches[j].label == cs.patches[j].label);
  }
  CHECK_THROWS_AS(select_coreset(ClientShard{}, model, spec), InvalidArgument);
}
