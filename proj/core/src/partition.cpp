#include "oneshot/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oneshot {
namespace {

double standard_normal(Rng& rng) {
  const double u1 = std::max(uniform01(rng), 1e-300), u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// log of a Gamma(shape, 1) draw (Marsaglia-Tsang; boosted for shape < 1).
// Working in logs keeps tiny-alpha draws from underflowing to zero.
double log_gamma_draw(double shape, Rng& rng) {
  double boost = 0.0;
  if (shape < 1.0) {
    boost = std::log(std::max(uniform01(rng), 1e-300)) / shape;
    shape += 1.0;
  }
  const double d = shape - 1.0 / 3.0, c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x || std::log(std::max(u, 1e-300)) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
      return std::log(d * v) + boost;
    }
  }
}

}  // namespace

void PartitionSpec::validate() const {
  if (n_clients < 1) throw InvalidArgument("n_clients must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("alpha must be > 0");
}

std::size_t ClientShard::classes_present() const {
  return static_cast<std::size_t>(std::count_if(class_histogram.begin(), class_histogram.end(),
                                                [](std::size_t c) { return c > 0; }));
}

std::vector<double> sample_dirichlet(std::size_t n, double alpha, Rng& rng) {
  std::vector<double> logs(n);
  for (auto& l : logs) l = log_gamma_draw(alpha, rng);
  const double m = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (auto& l : logs) {
    l = std::exp(l - m);
    sum += l;
  }
  for (auto& l : logs) l /= sum;
  return logs;
}

std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size(), 0);
  if (weights.empty() || total == 0) return counts;
  std::vector<double> rem(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = wsum > 0 ? weights[i] / wsum * static_cast<double>(total) : 0.0;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) counts[order[i % order.size()]] += 1;
  return counts;
}

std::vector<ClientShard> dirichlet_partition(std::span<const LabeledImage> corpus, const PartitionSpec& spec) {
  spec.validate();
  if (corpus.empty()) throw InvalidArgument("dirichlet_partition: empty corpus");
  int max_label = 0;
  for (const auto& li : corpus) {
    if (li.label < 0) throw InvalidArgument("dirichlet_partition: negative label");
    max_label = std::max(max_label, li.label);
  }
  const auto num_classes = static_cast<std::size_t>(max_label) + 1;

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < corpus.size(); ++i) by_class[static_cast<std::size_t>(corpus[i].label)].push_back(i);

  std::vector<std::vector<std::size_t>> assigned(spec.n_clients);
  for (std::size_t k = 0; k < num_classes; ++k) {
    Rng rng(derive_seed(spec.seed, "dirichlet", k));
    const auto p = sample_dirichlet(spec.n_clients, spec.alpha, rng);
    auto& members = by_class[k];
    shuffle(members.begin(), members.end(), rng);
    const auto counts = largest_remainder(p, members.size());
    std::size_t pos = 0;
    for (std::size_t c = 0; c < spec.n_clients; ++c) {
      assigned[c].insert(assigned[c].end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                         members.begin() + static_cast<std::ptrdiff_t>(pos + counts[c]));
      pos += counts[c];
    }
  }

  std::vector<ClientShard> shards(spec.n_clients);
  for (std::size_t c = 0; c < spec.n_clients; ++c) {
    auto& shard = shards[c];
    shard.client_id = static_cast<int>(c);
    shard.class_histogram.assign(num_classes, 0);
    std::sort(assigned[c].begin(), assigned[c].end());
    shard.corpus_indices = assigned[c];
    shard.images.reserve(assigned[c].size());
    for (auto idx : assigned[c]) {
      shard.images.push_back(corpus[idx]);
      shard.class_histogram[static_cast<std::size_t>(corpus[idx].label)] += 1;
    }
  }
  return shards;
}

HeterogeneityReport partition_stats(std::span<const ClientShard> shards) {
  if (shards.empty()) throw InvalidArgument("partition_stats: empty shard list");
  std::size_t num_classes = 0;
  for (const auto& s : shards) num_classes = std::max(num_classes, s.class_histogram.size());

  HeterogeneityReport r;
  r.class_shares.assign(num_classes, std::vector<double>(shards.size(), 0.0));
  for (const auto& s : shards) r.client_sizes.push_back(s.images.size());
  std::size_t present = 0;
  double sum_max = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::size_t total = 0;
    for (const auto& s : shards) total += k < s.class_histogram.size() ? s.class_histogram[k] : 0;
    if (total == 0) {
      r.max_share.push_back(0.0);
      continue;
    }
    double mx = 0.0;
    for (std::size_t i = 0; i < shards.size(); ++i) {
      const auto& h = shards[i].class_histogram;
      const double share = static_cast<double>(k < h.size() ? h[k] : 0) / static_cast<double>(total);
      r.class_shares[k][i] = share;
      mx = std::max(mx, share);
    }
    r.max_share.push_back(mx);
    sum_max += mx;
    ++present;
  }
  r.mean_max_share = present ? sum_max / static_cast<double>(present) : 0.0;
  return r;
}

std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> stratified_holdout(
    std::span<const LabeledImage> corpus, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw InvalidArgument("holdout fraction must be in [0, 1]");
  int max_label = 0;
  for (const auto& li : corpus) max_label = std::max(max_label, li.label);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < corpus.size(); ++i) by_class[static_cast<std::size_t>(corpus[i].label)].push_back(i);

  std::vector<bool> held(corpus.size(), false);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    Rng rng(derive_seed(seed, "holdout", k));
    auto& m = by_class[k];
    shuffle(m.begin(), m.end(), rng);
    const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m.size())));
    for (std::size_t j = 0; j < n; ++j) held[m[j]] = true;
  }
  std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) (held[i] ? out.second : out.first).push_back(corpus[i]);
  return out;
}

}  // namespace oneshot
