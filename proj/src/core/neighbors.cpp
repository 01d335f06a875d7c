#include "neighbors.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "error.hpp"
#include "parallel.hpp"

namespace protoedit::neighbors {

namespace {

std::vector<TokenId> distinct(std::span<const TokenId> ids) {
  std::vector<TokenId> out(ids.begin(), ids.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::uint64_t hash_key(std::uint64_t seed, std::size_t i) {
  return splitmix64(seed ^ splitmix64(0x6a09e667f3bcc909ULL + i));
}

}  // namespace

double jaccard_distance(std::span<const TokenId> a, std::span<const TokenId> b) {
  require(!a.empty() && !b.empty(), "jaccard_distance requires nonempty token sets");
  const auto sa = distinct(a);
  const auto sb = distinct(b);
  std::size_t common = 0;
  std::size_t i = 0, j = 0;
  while (i < sa.size() && j < sb.size()) {
    if (sa[i] == sb[j]) {
      ++common;
      ++i;
      ++j;
    } else if (sa[i] < sb[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = sa.size() + sb.size() - common;
  return 1.0 - double(common) / double(uni);
}

void MinHashParams::validate() const {
  require(n_hash > 0 && bands > 0 && rows > 0, "minhash parameters must be positive");
  require(n_hash == bands * rows, "minhash requires n_hash == bands * rows (got " +
                                      std::to_string(n_hash) + " vs " + std::to_string(bands) +
                                      "*" + std::to_string(rows) + ")");
}

MinHashSignature signature(std::span<const TokenId> tokens, const MinHashParams& params) {
  require(!tokens.empty(), "cannot sign an empty sentence");
  const auto ids = distinct(tokens);
  MinHashSignature sig;
  sig.mins.assign(params.n_hash, std::numeric_limits<std::uint64_t>::max());
  for (std::size_t i = 0; i < params.n_hash; ++i) {
    const std::uint64_t key = hash_key(params.seed, i);
    std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
    for (TokenId t : ids) best = std::min(best, splitmix64(key ^ static_cast<std::uint64_t>(t)));
    sig.mins[i] = best;
  }
  return sig;
}

double estimated_similarity(const MinHashSignature& a, const MinHashSignature& b) {
  require(a.mins.size() == b.mins.size() && !a.mins.empty(), "signature length mismatch");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.mins.size(); ++i) same += a.mins[i] == b.mins[i];
  return double(same) / double(a.mins.size());
}

std::uint64_t LshIndex::band_key(const MinHashSignature& sig, std::size_t band) const {
  std::uint64_t h = splitmix64(band + 1);
  for (std::size_t r = 0; r < params_.rows; ++r) h = splitmix64(h ^ sig.mins[band * params_.rows + r]);
  return h;
}

LshIndex LshIndex::build(const corpus::Corpus& corpus, const MinHashParams& params,
                         std::size_t threads) {
  params.validate();
  LshIndex index;
  index.params_ = params;
  index.signatures_.resize(corpus.size());
  parallel_for(corpus.size(), threads,
               [&](std::size_t i) { index.signatures_[i] = signature(corpus[i].ids, params); });
  index.tables_.resize(params.bands);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (std::size_t b = 0; b < params.bands; ++b) {
      index.tables_[b][index.band_key(index.signatures_[i], b)].push_back(
          static_cast<std::uint32_t>(i));
    }
  }
  return index;
}

std::vector<std::size_t> LshIndex::candidates(const MinHashSignature& sig) const {
  require(sig.mins.size() == params_.n_hash, "signature length does not match index");
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < params_.bands; ++b) {
    auto it = tables_[b].find(band_key(sig, b));
    if (it == tables_[b].end()) continue;
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t LshIndex::bucket_memberships(std::size_t id) const {
  std::size_t count = 0;
  for (const auto& table : tables_) {
    for (const auto& [key, ids] : table) count += std::count(ids.begin(), ids.end(), id);
  }
  return count;
}

std::vector<Neighbor> query_neighborhood(std::span<const TokenId> x, const LshIndex& index,
                                         const corpus::Corpus& corpus,
                                         const QueryOptions& options) {
  require(index.size() == corpus.size(), "LSH index was built over a different corpus");
  const auto sig = options.self_id ? index.signature_of(*options.self_id)
                                   : signature(x, index.params());
  std::vector<Neighbor> out;
  for (std::size_t id : index.candidates(sig)) {
    if (options.self_id && id == *options.self_id) continue;
    const double d = jaccard_distance(x, corpus[id].ids);
    if (d >= kMaxDistance) continue;
    if (d == 0.0 && !options.include_identity) continue;
    out.push_back({id, d});
  }
  return out;
}

MiningResult mine_pairs_bfs_from(const LshIndex& index, const corpus::Corpus& corpus,
                                 std::span<const std::size_t> seeds, std::size_t budget, Rng& rng,
                                 const MiningOptions& options) {
  std::vector<char> visited(corpus.size(), 0);
  std::deque<std::size_t> queue;
  for (std::size_t s : seeds) {
    require(s < corpus.size(), "BFS seed outside corpus");
    if (!visited[s]) {
      visited[s] = 1;
      queue.push_back(s);
    }
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<NeighborEdge> all;
  std::size_t n_visited = queue.size();
  QueryOptions query;
  query.include_identity = options.include_identity;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    query.self_id = u;
    for (const auto& nb : query_neighborhood(corpus[u].ids, index, corpus, query)) {
      const auto key = std::minmax(u, nb.id);
      if (seen.insert(key).second) all.push_back({key.first, key.second, nb.distance});
      if (!visited[nb.id]) {
        visited[nb.id] = 1;
        ++n_visited;
        queue.push_back(nb.id);
      }
    }
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return std::tie(a.proto_id, a.target_id) < std::tie(b.proto_id, b.target_id);
  });
  MiningResult result;
  result.visited_nodes = n_visited;
  result.encountered_edges = all.size();
  if (all.size() > budget) {
    // Partial Fisher-Yates: the first `budget` slots become a uniform sample.
    for (std::size_t i = 0; i < budget; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    all.resize(budget);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return std::tie(a.proto_id, a.target_id) < std::tie(b.proto_id, b.target_id);
    });
  }
  result.edges = std::move(all);
  return result;
}

MiningResult mine_pairs_bfs(const LshIndex& index, const corpus::Corpus& corpus,
                            std::size_t n_seeds, std::size_t budget, Rng& rng,
                            const MiningOptions& options) {
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t k = std::min(n_seeds, order.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(k);
  return mine_pairs_bfs_from(index, corpus, order, budget, rng, options);
}

std::vector<TrainingPair> both_orderings(std::span<const NeighborEdge> edges) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(edges.size() * 2);
  for (const auto& e : edges) {
    pairs.push_back({e.proto_id, e.target_id});
    pairs.push_back({e.target_id, e.proto_id});
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

void write_pairs(std::ostream& out, std::span<const NeighborEdge> edges) {
  out << "proto_id\ttarget_id\tjaccard_distance\n";
  char buf[64];
  for (const auto& e : edges) {
    std::snprintf(buf, sizeof buf, "%.6f", e.distance);
    out << e.proto_id << '\t' << e.target_id << '\t' << buf << '\n';
  }
}

void save_pairs(const std::string& path, std::span<const NeighborEdge> edges) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write pairs file '" + path + "'");
  write_pairs(out, edges);
  if (!out) fail(ErrorCode::kIo, "failed writing pairs file '" + path + "'");
}

std::vector<NeighborEdge> read_pairs(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kFormat, "pairs file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "proto_id\ttarget_id\tjaccard_distance") {
    fail(ErrorCode::kFormat, "pairs file header must be 'proto_id<TAB>target_id<TAB>jaccard_distance'");
  }
  std::vector<NeighborEdge> edges;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    NeighborEdge e;
    if (!(fields >> e.proto_id >> e.target_id >> e.distance)) {
      fail(ErrorCode::kFormat, "malformed pairs row at line " + std::to_string(lineno));
    }
    edges.push_back(e);
  }
  return edges;
}

std::vector<NeighborEdge> load_pairs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open pairs file '" + path + "'");
  return read_pairs(in);
}

}  // namespace protoedit::neighbors
