#pragma once

// Lexical neighborhoods: minhash signatures, a banded LSH index, exact
// Jaccard verification and BFS mining of training edit pairs.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "corpus.hpp"
#include "random.hpp"

namespace protoedit::neighbors {

// Neighborhood membership is strict: d_J < kMaxDistance.
inline constexpr double kMaxDistance = 0.5;

// Jaccard distance over the sets of distinct ids. Throws on an empty input.
double jaccard_distance(std::span<const TokenId> a, std::span<const TokenId> b);

struct MinHashParams {
  std::size_t n_hash = 128;
  std::size_t bands = 32;
  std::size_t rows = 4;
  std::uint64_t seed = 0x5eedULL;

  // Throws unless n_hash == bands * rows and all are positive.
  void validate() const;
};

struct MinHashSignature {
  std::vector<std::uint64_t> mins;
  friend bool operator==(const MinHashSignature&, const MinHashSignature&) = default;
};

// mins[i] = min over distinct ids of hash_i(id), hash_i keyed by (seed, i).
MinHashSignature signature(std::span<const TokenId> tokens, const MinHashParams& params);

// Fraction of agreeing rows, an unbiased estimate of Jaccard similarity.
double estimated_similarity(const MinHashSignature& a, const MinHashSignature& b);

class LshIndex {
 public:
  static LshIndex build(const corpus::Corpus& corpus, const MinHashParams& params,
                        std::size_t threads = 1);

  const MinHashParams& params() const { return params_; }
  std::size_t size() const { return signatures_.size(); }
  const MinHashSignature& signature_of(std::size_t id) const { return signatures_.at(id); }

  // Sorted, deduplicated ids sharing at least one band bucket with `sig`.
  std::vector<std::size_t> candidates(const MinHashSignature& sig) const;
  // Number of buckets across all bands that hold `id` (always `bands`).
  std::size_t bucket_memberships(std::size_t id) const;

 private:
  std::uint64_t band_key(const MinHashSignature& sig, std::size_t band) const;

  MinHashParams params_;
  std::vector<MinHashSignature> signatures_;
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::uint32_t>>> tables_;
};

struct QueryOptions {
  // Corpus index of the query itself, never returned.
  std::optional<std::size_t> self_id;
  // Keep exact-duplicate matches (d_J = 0) at other indices.
  bool include_identity = true;
};

struct Neighbor {
  std::size_t id = 0;
  double distance = 0.0;
};

// LSH candidates verified by exact Jaccard distance < 0.5, sorted by id.
std::vector<Neighbor> query_neighborhood(std::span<const TokenId> x, const LshIndex& index,
                                         const corpus::Corpus& corpus,
                                         const QueryOptions& options = {});

struct NeighborEdge {
  std::size_t proto_id = 0;  // canonical: proto_id < target_id
  std::size_t target_id = 0;
  double distance = 0.0;
  friend bool operator==(const NeighborEdge&, const NeighborEdge&) = default;
};

struct MiningOptions {
  bool include_identity = true;
  std::size_t threads = 1;
};

struct MiningResult {
  std::vector<NeighborEdge> edges;  // sorted by (proto_id, target_id)
  std::size_t visited_nodes = 0;
  std::size_t encountered_edges = 0;
};

// BFS over the verified neighbor graph from `n_seeds` random start nodes,
// then a uniform sample of `budget` distinct encountered edges.
MiningResult mine_pairs_bfs(const LshIndex& index, const corpus::Corpus& corpus,
                            std::size_t n_seeds, std::size_t budget, Rng& rng,
                            const MiningOptions& options = {});

// Same, with explicit seed nodes.
MiningResult mine_pairs_bfs_from(const LshIndex& index, const corpus::Corpus& corpus,
                                 std::span<const std::size_t> seeds, std::size_t budget, Rng& rng,
                                 const MiningOptions& options = {});

struct TrainingPair {
  std::size_t proto_id = 0;
  std::size_t target_id = 0;
  friend auto operator<=>(const TrainingPair&, const TrainingPair&) = default;
};

// Each undirected edge yields (a -> b) and (b -> a), sorted.
std::vector<TrainingPair> both_orderings(std::span<const NeighborEdge> edges);

// TSV with header `proto_id\ttarget_id\tjaccard_distance`.
void write_pairs(std::ostream& out, std::span<const NeighborEdge> edges);
void save_pairs(const std::string& path, std::span<const NeighborEdge> edges);
std::vector<NeighborEdge> load_pairs(const std::string& path);
std::vector<NeighborEdge> read_pairs(std::istream& in);

}  // namespace protoedit::neighbors
