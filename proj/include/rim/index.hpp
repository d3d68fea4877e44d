#pragma once

// Feature-based inverted index over a retrieval pool. Documents are pool
// rows addressed by their position in the pool table; terms are feature ids.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rim/common.hpp"
#include "rim/dataset.hpp"

namespace rim {

using DocId = std::uint32_t;
using StopFields = std::set<std::size_t>;

inline constexpr double kDefaultStopFieldRatio = 0.3;

// A field is stopped when its most frequent value occurs in more than
// `max_df_ratio` of the pool documents.
inline StopFields detect_stop_fields(const Table& pool, double max_df_ratio) {
  if (!(max_df_ratio > 0.0 && max_df_ratio <= 1.0)) {
    throw ConfigError("stop-field ratio must be in (0,1]");
  }
  StopFields out;
  if (pool.empty()) return out;
  const double n = static_cast<double>(pool.size());
  for (std::size_t f = 0; f < pool.num_features(); ++f) {
    std::unordered_map<FeatureId, std::size_t> df;
    std::size_t top = 0;
    for (const auto& s : pool.samples) {
      for (auto v : s.slots[f]) top = std::max(top, ++df[v]);
    }
    if (static_cast<double>(top) / n > max_df_ratio) out.insert(f);
  }
  return out;
}

class InvertedIndex {
 public:
  static constexpr std::string_view kMagic = "RIMIDX";
  static constexpr std::uint8_t kVersion = 1;

  InvertedIndex() = default;

  std::size_t num_docs() const { return num_docs_; }
  std::size_t num_fields() const { return stopped_.size(); }
  bool is_stopped(std::size_t field) const { return stopped_.at(field); }
  StopFields stop_fields() const {
    StopFields out;
    for (std::size_t f = 0; f < stopped_.size(); ++f) {
      if (stopped_[f]) out.insert(f);
    }
    return out;
  }

  // Empty for unseen features and for features of stopped fields.
  std::span<const DocId> posting(FeatureId feature) const {
    if (feature >= postings_.size()) return {};
    return postings_[feature];
  }
  std::size_t doc_freq(FeatureId feature) const { return posting(feature).size(); }

  // Number of features with a non-empty posting list.
  std::size_t num_terms() const {
    return static_cast<std::size_t>(std::count_if(postings_.begin(), postings_.end(),
                                                  [](const auto& p) { return !p.empty(); }));
  }
  std::size_t total_postings() const {
    std::size_t n = 0;
    for (const auto& p : postings_) n += p.size();
    return n;
  }

  // Layout (little-endian):
  //   "RIMIDX" u8:version
  //   u64:N_pool u32:F u64:term_count u8[ceil(F/8)]:stop bitmap (bit f%8 of byte f/8)
  //   term_count x { u32:feature_id u64:df u32[df]:delta-encoded doc ids }
  // Terms ascend by feature id; the first delta of each posting is absolute.
  void write(std::ostream& os) const {
    io::write_header(os, kMagic, kVersion);
    io::write<std::uint64_t>(os, num_docs_);
    io::write<std::uint32_t>(os, static_cast<std::uint32_t>(stopped_.size()));
    io::write<std::uint64_t>(os, num_terms());
    std::vector<std::uint8_t> bitmap((stopped_.size() + 7) / 8, 0);
    for (std::size_t f = 0; f < stopped_.size(); ++f) {
      if (stopped_[f]) bitmap[f / 8] |= static_cast<std::uint8_t>(1u << (f % 8));
    }
    for (auto b : bitmap) io::write<std::uint8_t>(os, b);
    for (std::size_t id = 0; id < postings_.size(); ++id) {
      const auto& p = postings_[id];
      if (p.empty()) continue;
      io::write<std::uint32_t>(os, static_cast<std::uint32_t>(id));
      io::write<std::uint64_t>(os, p.size());
      DocId prev = 0;
      for (auto d : p) {
        io::write<std::uint32_t>(os, d - prev);
        prev = d;
      }
    }
  }

  static InvertedIndex read(std::istream& is) {
    io::expect_header(is, kMagic, kVersion);
    InvertedIndex idx;
    idx.num_docs_ = io::read<std::uint64_t>(is, "N_pool");
    auto F = io::read<std::uint32_t>(is, "field count");
    auto terms = io::read<std::uint64_t>(is, "term count");
    idx.stopped_.assign(F, false);
    for (std::size_t byte = 0; byte < (F + 7u) / 8u; ++byte) {
      auto b = io::read<std::uint8_t>(is, "stop bitmap");
      for (std::size_t bit = 0; bit < 8 && byte * 8 + bit < F; ++bit) {
        idx.stopped_[byte * 8 + bit] = (b >> bit) & 1u;
      }
    }
    std::int64_t last_id = -1;
    for (std::uint64_t t = 0; t < terms; ++t) {
      auto id = io::read<std::uint32_t>(is, "feature id");
      if (static_cast<std::int64_t>(id) <= last_id) {
        throw CorruptionError("index: feature ids not strictly increasing");
      }
      last_id = id;
      auto df = io::read<std::uint64_t>(is, "document frequency");
      if (df == 0 || df > idx.num_docs_) throw CorruptionError("index: bad document frequency");
      if (idx.postings_.size() <= id) idx.postings_.resize(std::size_t{id} + 1);
      auto& p = idx.postings_[id];
      p.reserve(df);
      std::uint64_t cur = 0;
      for (std::uint64_t i = 0; i < df; ++i) {
        auto delta = io::read<std::uint32_t>(is, "posting");
        if (i > 0 && delta == 0) throw CorruptionError("index: posting not strictly increasing");
        cur += delta;
        if (cur >= idx.num_docs_) throw CorruptionError("index: doc id out of range");
        p.push_back(static_cast<DocId>(cur));
      }
    }
    io::expect_eof(is, "index");
    return idx;
  }

  std::string bytes() const {
    std::ostringstream os(std::ios::binary);
    write(os);
    return std::move(os).str();
  }

  // 64-bit FNV-1a of the canonical serialization.
  std::uint64_t fingerprint() const { return fnv1a(bytes()); }

  // Counts of posting lengths bucketed by floor(log2(len)).
  std::vector<std::size_t> posting_length_histogram() const {
    std::vector<std::size_t> hist;
    for (const auto& p : postings_) {
      if (p.empty()) continue;
      auto bucket = static_cast<std::size_t>(std::bit_width(p.size()) - 1);
      if (hist.size() <= bucket) hist.resize(bucket + 1, 0);
      ++hist[bucket];
    }
    return hist;
  }

  bool operator==(const InvertedIndex& o) const {
    if (num_docs_ != o.num_docs_ || stopped_ != o.stopped_) return false;
    auto n = std::max(postings_.size(), o.postings_.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::ranges::equal(posting(static_cast<FeatureId>(i)), o.posting(static_cast<FeatureId>(i)))) {
        return false;
      }
    }
    return true;
  }

  friend InvertedIndex build_index(const Table& pool, const StopFields& stop_fields);

 private:
  std::size_t num_docs_ = 0;
  std::vector<bool> stopped_;
  std::vector<std::vector<DocId>> postings_;  // by feature id
};

// Appends every pool document to the posting list of each feature value it
// carries, skipping stopped fields. O(F * |pool|).
inline InvertedIndex build_index(const Table& pool, const StopFields& stop_fields = {}) {
  const std::size_t F = pool.num_features();
  for (std::size_t f = 0; f < F; ++f) {
    if (pool.schema.feature(f).kind == FieldKind::numeric && !pool.binning.at(f)) {
      throw DataError("cannot index un-discretized numeric field '" + pool.schema.feature(f).name + "'");
    }
  }
  for (auto f : stop_fields) {
    if (f >= F) throw ConfigError("stop field " + std::to_string(f) + " out of range");
  }
  if (pool.size() > std::numeric_limits<DocId>::max()) {
    throw DataError("pool too large for 32-bit document ids");
  }
  InvertedIndex idx;
  idx.num_docs_ = pool.size();
  idx.stopped_.assign(F, false);
  for (auto f : stop_fields) idx.stopped_[f] = true;
  idx.postings_.resize(pool.vocab_size());
  for (std::size_t doc = 0; doc < pool.size(); ++doc) {
    const auto& s = pool.samples[doc];
    for (std::size_t f = 0; f < F; ++f) {
      if (idx.stopped_[f]) continue;
      for (auto v : s.slots[f]) {
        if (v >= idx.postings_.size()) idx.postings_.resize(std::size_t{v} + 1);
        idx.postings_[v].push_back(static_cast<DocId>(doc));
      }
    }
  }
  return idx;
}

inline void save_index(const InvertedIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  index.write(out);
  if (!out) throw DataError("write failed for " + path);
}

inline InvertedIndex load_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return InvertedIndex::read(in);
}

}  // namespace rim
