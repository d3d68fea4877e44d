#pragma once

// Query formulation, BM25 scoring over categorical fields, top-K retrieval
// (ranked, random, filtered) and the offline retrieval cache.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "rim/common.hpp"
#include "rim/dataset.hpp"
#include "rim/index.hpp"

namespace rim {

// Every document has exactly F fields, so |x_D| / avgdl is identically 1 and
// the length normalization 1 - b + b * ratio collapses to 1: `b` is kept for
// provenance but cannot change a score.
struct RankingParams {
  double k1 = 1.2;
  double b = 0.75;

  void validate() const {
    if (!(k1 > 0.0) || !std::isfinite(k1)) throw ConfigError("k1 must be > 0");
    if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("b must be in [0,1]");
  }
  bool operator==(const RankingParams&) const = default;
};

struct Query {
  SampleId target_id = 0;
  std::optional<SampleId> exclude;  // never returned
  std::vector<FeatureSlot> slots;   // one per field; multi-value slots stay whole
};

inline Query make_query(const Sample& target) {
  return Query{target.sample_id, target.sample_id, target.slots};
}

struct Neighbor {
  SampleId sample_id = 0;
  double score = 0.0;
  std::vector<FeatureSlot> slots;
  double label = 0.0;
  std::int32_t label_class = -1;

  bool operator==(const Neighbor&) const = default;
};

// Ordered by (score desc, sample id asc).
struct RetrievedSet {
  std::vector<Neighbor> neighbors;

  std::size_t size() const { return neighbors.size(); }
  bool empty() const { return neighbors.empty(); }
  bool operator==(const RetrievedSet&) const = default;
};

struct RetrievalStats {
  std::size_t candidates = 0;  // documents scored
};

// Jaccard similarity of two sorted id sets; 0/1 match for single values.
inline double term_frequency(std::span<const FeatureId> query_slot, std::span<const FeatureId> doc_slot) {
  std::size_t common = 0;
  auto a = query_slot.begin();
  auto b = doc_slot.begin();
  while (a != query_slot.end() && b != doc_slot.end()) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      ++common;
      ++a;
      ++b;
    }
  }
  const std::size_t uni = query_slot.size() + doc_slot.size() - common;
  if (uni == 0) return 0.0;
  return static_cast<double>(common) / static_cast<double>(uni);
}

// For a multi-value slot the document frequency is the mean over its values.
inline double idf(const InvertedIndex& index, std::span<const FeatureId> query_slot) {
  const auto n = static_cast<double>(index.num_docs());
  double df = 0.0;
  if (!query_slot.empty()) {
    double sum = 0.0;
    for (auto v : query_slot) sum += static_cast<double>(index.doc_freq(v));
    df = sum / static_cast<double>(query_slot.size());
  }
  return std::log((n - df + 0.5) / (df + 0.5));
}

namespace detail {

inline double bm25_term(double idf_value, double tf, const RankingParams& params) {
  return idf_value * (tf * (params.k1 + 1.0) / (tf + params.k1));
}

// Per-field IDF of a query; NaN marks fields that do not contribute.
inline std::vector<double> query_idfs(const InvertedIndex& index, const Query& query) {
  std::vector<double> out(query.slots.size(), std::nan(""));
  for (std::size_t f = 0; f < query.slots.size(); ++f) {
    if (!index.is_stopped(f) && !query.slots[f].empty()) out[f] = idf(index, query.slots[f]);
  }
  return out;
}

inline double score_with(const std::vector<double>& idfs, const Query& query, const Sample& doc,
                         const RankingParams& params) {
  double s = 0.0;
  for (std::size_t f = 0; f < idfs.size(); ++f) {
    if (std::isnan(idfs[f])) continue;
    double tf = term_frequency(query.slots[f], doc.slots[f]);
    if (tf > 0.0) s += bm25_term(idfs[f], tf, params);
  }
  return s;
}

inline void check_query(const InvertedIndex& index, const Table& pool, const Query& query) {
  if (query.slots.size() != index.num_fields()) {
    throw ConfigError("query has " + std::to_string(query.slots.size()) + " slots, index has " +
                      std::to_string(index.num_fields()) + " fields");
  }
  if (pool.size() != index.num_docs()) {
    throw DataError("pool has " + std::to_string(pool.size()) + " rows but index covers " +
                    std::to_string(index.num_docs()));
  }
}

inline Neighbor make_neighbor(const Sample& s, double score) {
  return Neighbor{s.sample_id, score, s.slots, s.label, s.label_class};
}

struct Scored {
  double score;
  SampleId id;
  DocId doc;
};

inline RetrievedSet take_best(const Table& pool, std::vector<Scored>& scored, std::size_t K) {
  auto better = [](const Scored& a, const Scored& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  };
  const std::size_t keep = std::min(K, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), better);
  RetrievedSet out;
  out.neighbors.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    out.neighbors.push_back(make_neighbor(pool.samples[scored[i].doc], scored[i].score));
  }
  return out;
}

// Walks the postings of every effective query term, counting per document
// and field how many query values it shares; the union of touched documents
// is the candidate set. Scores are then summed in field order exactly as
// score_with would, so results match per-document scoring bit for bit.
// `allowed` (optional, indexed by doc) restricts the candidates.
inline RetrievedSet score_postings(const InvertedIndex& index, const Table& pool, const Query& query,
                                   std::size_t K, const RankingParams& params,
                                   const std::vector<char>* allowed, RetrievalStats* stats) {
  const std::size_t F = query.slots.size();
  const auto idfs = query_idfs(index, query);
  // Work is linear in the postings walked: each field's terms are finalized
  // for the docs it touched before moving to the next field.
  thread_local std::vector<std::int32_t> slot_of;
  thread_local std::vector<DocId> touched;
  thread_local std::vector<double> acc;
  thread_local std::vector<std::uint32_t> common;
  thread_local std::vector<std::uint32_t> in_field;
  if (slot_of.size() < pool.size()) slot_of.assign(pool.size(), -1);
  touched.clear();
  acc.clear();
  common.clear();
  for (std::size_t f = 0; f < F; ++f) {
    if (index.is_stopped(f)) continue;
    in_field.clear();
    for (auto v : query.slots[f]) {
      for (auto doc : index.posting(v)) {
        if (allowed && !(*allowed)[doc]) continue;
        auto& slot = slot_of[doc];
        if (slot < 0) {
          slot = static_cast<std::int32_t>(touched.size());
          touched.push_back(doc);
          acc.push_back(0.0);
          common.push_back(0);
        }
        const auto c = static_cast<std::uint32_t>(slot);
        if (common[c]++ == 0) in_field.push_back(c);
      }
    }
    // categorical and binned numeric slots hold exactly one id
    const bool multi = pool.schema.feature(f).kind == FieldKind::multi_categorical;
    for (auto c : in_field) {
      if (!std::isnan(idfs[f])) {
        const double both = common[c];
        const std::size_t doc_len = multi ? pool.samples[touched[c]].slots[f].size() : 1;
        const double uni = static_cast<double>(query.slots[f].size() + doc_len) - both;
        acc[c] += bm25_term(idfs[f], both / uni, params);
      }
      common[c] = 0;
    }
  }
  std::vector<Scored> scored;
  scored.reserve(touched.size());
  for (std::size_t c = 0; c < touched.size(); ++c) {
    const DocId doc = touched[c];
    slot_of[doc] = -1;
    const auto& s = pool.samples[doc];
    if (query.exclude && s.sample_id == *query.exclude) continue;
    scored.push_back({acc[c], s.sample_id, doc});
  }
  if (stats) stats->candidates = scored.size();
  return take_best(pool, scored, K);
}

}  // namespace detail

inline double bm25_score(const Query& query, const Sample& doc, const InvertedIndex& index,
                         const RankingParams& params = {}) {
  return detail::score_with(detail::query_idfs(index, query), query, doc, params);
}

// OR-query over all non-stopped fields; candidates are the posting union.
inline RetrievedSet retrieve_topk(const InvertedIndex& index, const Table& pool, const Query& query,
                                  std::size_t K, const RankingParams& params = {},
                                  RetrievalStats* stats = nullptr) {
  if (K == 0) throw ConfigError("retrieval size K must be >= 1");
  if (index.num_docs() == 0) return {};
  detail::check_query(index, pool, query);
  return detail::score_postings(index, pool, query, K, params, nullptr, stats);
}

// Like retrieve_topk, restricted to documents sharing the target's value(s)
// in `filter_field` (e.g. rows of the same user).
inline RetrievedSet retrieve_filtered(const InvertedIndex& index, const Table& pool, const Query& query,
                                      std::size_t K, std::size_t filter_field,
                                      const RankingParams& params = {}, RetrievalStats* stats = nullptr) {
  if (K == 0) throw ConfigError("retrieval size K must be >= 1");
  if (index.num_docs() == 0) return {};
  detail::check_query(index, pool, query);
  if (filter_field >= query.slots.size()) throw ConfigError("filter field out of range");
  const auto& want = query.slots[filter_field];

  std::vector<char> allowed(pool.size(), 0);
  if (!index.is_stopped(filter_field)) {
    for (auto v : want) {
      for (auto d : index.posting(v)) allowed[d] = 1;
    }
  } else {
    for (std::size_t d = 0; d < pool.size(); ++d) {
      if (term_frequency(want, pool.samples[d].slots[filter_field]) > 0.0) allowed[d] = 1;
    }
  }
  return detail::score_postings(index, pool, query, K, params, &allowed, stats);
}

// Seeded uniform sample without replacement; all scores are 0 so entries are
// ordered by sample id.
inline RetrievedSet retrieve_random(const Table& pool, std::optional<SampleId> exclude, std::size_t K,
                                    std::uint64_t seed) {
  if (K == 0) throw ConfigError("retrieval size K must be >= 1");
  std::vector<std::size_t> eligible;
  eligible.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!exclude || pool.samples[i].sample_id != *exclude) eligible.push_back(i);
  }
  std::vector<std::size_t> picked;
  std::mt19937_64 rng(seed);
  if (K >= eligible.size()) {
    picked = std::move(eligible);
  } else {
    picked.reserve(K);
    std::sample(eligible.begin(), eligible.end(), std::back_inserter(picked), K, rng);
  }
  RetrievedSet out;
  out.neighbors.reserve(picked.size());
  for (auto p : picked) out.neighbors.push_back(detail::make_neighbor(pool.samples[p], 0.0));
  std::sort(out.neighbors.begin(), out.neighbors.end(),
            [](const Neighbor& a, const Neighbor& b) { return a.sample_id < b.sample_id; });
  return out;
}

enum class RetrievalMode : std::uint8_t { bm25 = 0, random = 1, filtered = 2, none = 3 };

inline std::string_view to_string(RetrievalMode m) {
  switch (m) {
    case RetrievalMode::bm25: return "bm25";
    case RetrievalMode::random: return "random";
    case RetrievalMode::filtered: return "filtered";
    case RetrievalMode::none: return "none";
  }
  return "?";
}

inline RetrievalMode parse_retrieval_mode(std::string_view s) {
  if (s == "bm25") return RetrievalMode::bm25;
  if (s == "random") return RetrievalMode::random;
  if (s == "filtered") return RetrievalMode::filtered;
  if (s == "none") return RetrievalMode::none;
  throw ConfigError("unknown retrieval mode '" + std::string(s) + "'");
}

// What a cache was computed from. `mode_param` is the filter field for
// filtered retrieval and the seed for random retrieval, 0 otherwise.
struct CacheProvenance {
  std::uint64_t index_fingerprint = 0;
  std::uint32_t K = 0;
  RetrievalMode mode = RetrievalMode::bm25;
  std::uint64_t mode_param = 0;
  RankingParams params;

  bool operator==(const CacheProvenance&) const = default;
};

class RetrievalCache {
 public:
  static constexpr std::string_view kMagic = "RIMCCH";
  static constexpr std::uint8_t kVersion = 1;

  RetrievalCache() = default;
  RetrievalCache(CacheProvenance provenance, std::size_t num_fields)
      : provenance_(provenance), num_fields_(num_fields) {}

  const CacheProvenance& provenance() const { return provenance_; }
  std::size_t size() const { return entries_.size(); }

  void insert(SampleId target, RetrievedSet set) { entries_[target] = std::move(set); }

  // nullopt signals "not cached"; a provenance mismatch means the cache is stale.
  std::optional<RetrievedSet> lookup(SampleId target, const CacheProvenance& expected) const {
    if (!(expected == provenance_)) {
      throw StaleCacheError("retrieval cache provenance does not match the current index/config");
    }
    auto it = entries_.find(target);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  // Layout (little-endian):
  //   "RIMCCH" u8:version
  //   u64:index_fingerprint u32:K u8:mode u64:mode_param f64:k1 f64:b u32:F u64:count
  //   count x { i64:target u32:n n x { i64:id f64:score f64:label i32:class
  //                                    F x { u32:len u32[len]:feature ids } } }
  // Records ascend by target id.
  void write(std::ostream& os) const {
    io::write_header(os, kMagic, kVersion);
    io::write<std::uint64_t>(os, provenance_.index_fingerprint);
    io::write<std::uint32_t>(os, provenance_.K);
    io::write<std::uint8_t>(os, static_cast<std::uint8_t>(provenance_.mode));
    io::write<std::uint64_t>(os, provenance_.mode_param);
    io::write<double>(os, provenance_.params.k1);
    io::write<double>(os, provenance_.params.b);
    io::write<std::uint32_t>(os, static_cast<std::uint32_t>(num_fields_));
    io::write<std::uint64_t>(os, entries_.size());
    for (const auto& [target, set] : entries_) {
      io::write<std::int64_t>(os, target);
      io::write<std::uint32_t>(os, static_cast<std::uint32_t>(set.size()));
      for (const auto& n : set.neighbors) {
        io::write<std::int64_t>(os, n.sample_id);
        io::write<double>(os, n.score);
        io::write<double>(os, n.label);
        io::write<std::int32_t>(os, n.label_class);
        if (n.slots.size() != num_fields_) throw DataError("cache entry has wrong slot count");
        for (const auto& slot : n.slots) {
          io::write<std::uint32_t>(os, static_cast<std::uint32_t>(slot.size()));
          for (auto v : slot) io::write<std::uint32_t>(os, v);
        }
      }
    }
  }

  static RetrievalCache read(std::istream& is) {
    io::expect_header(is, kMagic, kVersion);
    CacheProvenance p;
    p.index_fingerprint = io::read<std::uint64_t>(is, "fingerprint");
    p.K = io::read<std::uint32_t>(is, "K");
    auto mode = io::read<std::uint8_t>(is, "mode");
    if (mode > static_cast<std::uint8_t>(RetrievalMode::none)) throw FormatError("cache: unknown mode tag");
    p.mode = static_cast<RetrievalMode>(mode);
    p.mode_param = io::read<std::uint64_t>(is, "mode param");
    p.params.k1 = io::read<double>(is, "k1");
    p.params.b = io::read<double>(is, "b");
    RetrievalCache cache(p, io::read<std::uint32_t>(is, "field count"));
    auto count = io::read<std::uint64_t>(is, "entry count");
    for (std::uint64_t e = 0; e < count; ++e) {
      auto target = io::read<std::int64_t>(is, "target id");
      auto n = io::read<std::uint32_t>(is, "neighbor count");
      RetrievedSet set;
      set.neighbors.reserve(n);
      for (std::uint32_t k = 0; k < n; ++k) {
        Neighbor nb;
        nb.sample_id = io::read<std::int64_t>(is, "neighbor id");
        nb.score = io::read<double>(is, "score");
        nb.label = io::read<double>(is, "label");
        nb.label_class = io::read<std::int32_t>(is, "label class");
        nb.slots.resize(cache.num_fields_);
        for (auto& slot : nb.slots) {
          auto len = io::read<std::uint32_t>(is, "slot length");
          slot.reserve(len);
          for (std::uint32_t i = 0; i < len; ++i) slot.push_back(io::read<std::uint32_t>(is, "feature id"));
        }
        set.neighbors.push_back(std::move(nb));
      }
      cache.entries_.emplace(target, std::move(set));
    }
    io::expect_eof(is, "cache");
    return cache;
  }

  bool operator==(const RetrievalCache& o) const {
    return provenance_ == o.provenance_ && num_fields_ == o.num_fields_ && entries_ == o.entries_;
  }

 private:
  CacheProvenance provenance_;
  std::size_t num_fields_ = 0;
  std::map<SampleId, RetrievedSet> entries_;
};

using Retriever = std::function<RetrievedSet(const Sample&)>;

// Runs `retrieve` once per target and stores the results.
inline RetrievalCache precompute_cache(const Table& targets, const CacheProvenance& provenance,
                                       const Retriever& retrieve) {
  RetrievalCache cache(provenance, targets.num_features());
  for (const auto& t : targets.samples) cache.insert(t.sample_id, retrieve(t));
  return cache;
}

inline RetrievalCache precompute_cache(const InvertedIndex& index, const Table& pool, const Table& targets,
                                       std::size_t K, const RankingParams& params = {}) {
  CacheProvenance prov{index.fingerprint(), static_cast<std::uint32_t>(K), RetrievalMode::bm25, 0, params};
  return precompute_cache(targets, prov, [&](const Sample& t) {
    return retrieve_topk(index, pool, make_query(t), K, params);
  });
}

inline void save_cache(const RetrievalCache& cache, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  cache.write(out);
}

inline RetrievalCache load_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return RetrievalCache::read(in);
}

}  // namespace rim
