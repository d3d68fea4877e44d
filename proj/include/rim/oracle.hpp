#pragma once

// Exhaustive reference scorer. It never touches posting lists: document
// frequencies come from a scan of the pool and every document is visited.
// Used by `rim retrieve --oracle` and the test suites.

#include <algorithm>
#include <cmath>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rim/dataset.hpp"
#include "rim/index.hpp"
#include "rim/retrieval.hpp"

namespace rim::oracle {

class ExhaustiveScorer {
 public:
  ExhaustiveScorer(const Table& pool, StopFields stop_fields, RankingParams params)
      : pool_(pool), stop_(std::move(stop_fields)), params_(params) {
    for (const auto& s : pool_.samples) {
      for (std::size_t f = 0; f < s.slots.size(); ++f) {
        if (stop_.count(f)) continue;
        for (auto v : s.slots[f]) ++df_[v];
      }
    }
  }

  double score(const Query& q, const Sample& doc) const {
    const double n = static_cast<double>(pool_.size());
    double total = 0.0;
    for (std::size_t f = 0; f < q.slots.size(); ++f) {
      if (stop_.count(f) || q.slots[f].empty()) continue;
      std::vector<FeatureId> inter, uni;
      std::set_intersection(q.slots[f].begin(), q.slots[f].end(), doc.slots[f].begin(), doc.slots[f].end(),
                            std::back_inserter(inter));
      std::set_union(q.slots[f].begin(), q.slots[f].end(), doc.slots[f].begin(), doc.slots[f].end(),
                     std::back_inserter(uni));
      if (inter.empty()) continue;
      double tf = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
      double sum = 0.0;
      for (auto v : q.slots[f]) {
        auto it = df_.find(v);
        sum += it == df_.end() ? 0.0 : static_cast<double>(it->second);
      }
      double nc = sum / static_cast<double>(q.slots[f].size());
      double w = std::log((n - nc + 0.5) / (nc + 0.5));
      total += w * (tf * (params_.k1 + 1.0) / (tf + params_.k1));
    }
    return total;
  }

  // A document matches the OR query if it shares any non-stopped value.
  bool matches(const Query& q, const Sample& doc) const {
    for (std::size_t f = 0; f < q.slots.size(); ++f) {
      if (stop_.count(f)) continue;
      for (auto v : q.slots[f]) {
        if (std::binary_search(doc.slots[f].begin(), doc.slots[f].end(), v)) return true;
      }
    }
    return false;
  }

  RetrievedSet topk(const Query& q, std::size_t K, std::optional<std::size_t> filter_field = std::nullopt) const {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t d = 0; d < pool_.size(); ++d) {
      const auto& doc = pool_.samples[d];
      if (q.exclude && doc.sample_id == *q.exclude) continue;
      if (!matches(q, doc)) continue;
      if (filter_field) {
        const auto& a = q.slots[*filter_field];
        const auto& b = doc.slots[*filter_field];
        std::vector<FeatureId> inter;
        std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
        if (inter.empty()) continue;
      }
      all.emplace_back(score(q, doc), d);
    }
    std::sort(all.begin(), all.end(), [&](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return pool_.samples[x.second].sample_id < pool_.samples[y.second].sample_id;
    });
    RetrievedSet out;
    for (std::size_t i = 0; i < all.size() && i < K; ++i) {
      const auto& s = pool_.samples[all[i].second];
      out.neighbors.push_back(Neighbor{s.sample_id, all[i].first, s.slots, s.label, s.label_class});
    }
    return out;
  }

 private:
  const Table& pool_;
  StopFields stop_;
  RankingParams params_;
  std::map<FeatureId, std::size_t> df_;
};

// Same ids in the same order, scores within `rel_tol` relative. Returns a
// description of the first difference, or nullopt when they agree.
inline std::optional<std::string> compare(const RetrievedSet& got, const RetrievedSet& want,
                                          double rel_tol = 1e-9) {
  if (got.size() != want.size()) {
    return "size " + std::to_string(got.size()) + " vs " + std::to_string(want.size());
  }
  for (std::size_t i = 0; i < got.size(); ++i) {
    const auto& a = got.neighbors[i];
    const auto& b = want.neighbors[i];
    if (a.sample_id != b.sample_id) {
      return "rank " + std::to_string(i) + ": id " + std::to_string(a.sample_id) + " vs " +
             std::to_string(b.sample_id);
    }
    double scale = std::max({std::abs(a.score), std::abs(b.score), 1e-300});
    if (std::abs(a.score - b.score) / scale > rel_tol) {
      return "rank " + std::to_string(i) + ": score " + std::to_string(a.score) + " vs " +
             std::to_string(b.score);
    }
  }
  return std::nullopt;
}

}  // namespace rim::oracle
