#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "oneshot/image.hpp"
#include "oneshot/rng.hpp"

namespace oneshot {

struct PartitionSpec {
  std::size_t n_clients = 5;
  double alpha = 0.1;  // Dirichlet concentration; smaller is more heterogeneous
  std::uint64_t seed = 0;

  void validate() const;
};

/// One client's private slice of the corpus.
struct ClientShard {
  int client_id = 0;
  std::vector<LabeledImage> images;
  /// Index of each image in the partitioned corpus.
  std::vector<std::size_t> corpus_indices;
  /// Per-class counts; sums to images.size().
  std::vector<std::size_t> class_histogram;

  bool empty() const noexcept { return images.empty(); }
  std::size_t classes_present() const;
};

/// Split `corpus` across clients. For each class k a proportion vector
/// p_k ~ Dir(alpha) over clients is drawn; the class's samples are shuffled
/// with the seeded generator and sliced contiguously by p_k, with counts
/// rounded by largest remainder so they sum exactly. A client can receive zero
/// samples of a class. Identical (corpus, spec) gives identical shards.
/// Class count is 1 + the largest label present.
std::vector<ClientShard> dirichlet_partition(std::span<const LabeledImage> corpus, const PartitionSpec& spec);

/// Draw one Dirichlet(alpha, ..., alpha) vector of length n.
std::vector<double> sample_dirichlet(std::size_t n, double alpha, Rng& rng);

/// Split `total` items in proportion to `weights` using largest remainder
/// (ties go to the lower index). Counts sum to `total`.
std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total);

struct HeterogeneityReport {
  std::vector<std::size_t> client_sizes;
  /// class_shares[k][i]: fraction of class k held by client i (0 for absent classes).
  std::vector<std::vector<double>> class_shares;
  /// Per class, the largest single-client share (classes with no samples skipped).
  std::vector<double> max_share;
  /// Mean of max_share over present classes.
  double mean_max_share = 0.0;
};

HeterogeneityReport partition_stats(std::span<const ClientShard> shards);

/// Seeded per-class holdout: returns (kept, held_out) where held_out receives
/// round(fraction * class size) samples of every class.
std::pair<std::vector<LabeledImage>, std::vector<LabeledImage>> stratified_holdout(
    std::span<const LabeledImage> corpus, double fraction, std::uint64_t seed);

}  // namespace oneshot
