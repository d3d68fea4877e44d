#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "rim/common.hpp"

namespace rim::metrics {

struct PredictionRecord {
  double score = 0.0;
  double label = 0.0;
};

// Probability that a random positive outscores a random negative, ties
// counting one half. Computed from mid-ranks.
inline double auc(std::span<const PredictionRecord> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return records[a].score < records[b].score; });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && records[order[j]].score == records[order[i]].score) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (records[order[k]].label > 0.5) {
        pos += 1.0;
        rank_sum += mid;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) throw ValueError("AUC is undefined without both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

inline double log_loss(std::span<const PredictionRecord> records, double eps = 1e-12) {
  if (records.empty()) throw ValueError("log loss of an empty set");
  double s = 0.0;
  for (const auto& r : records) {
    const double p = std::clamp(r.score, eps, 1.0 - eps);
    s -= r.label * std::log(p) + (1.0 - r.label) * std::log(1.0 - p);
  }
  return s / static_cast<double>(records.size());
}

inline double rmse(std::span<const PredictionRecord> records) {
  if (records.empty()) throw ValueError("RMSE of an empty set");
  double s = 0.0;
  for (const auto& r : records) s += (r.score - r.label) * (r.score - r.label);
  return std::sqrt(s / static_cast<double>(records.size()));
}

// Candidate scores with exactly one relevant entry.
struct RankedList {
  std::vector<double> scores;
  std::vector<int> relevant;
};

// 1-based rank of the positive; it loses every tie.
inline std::size_t positive_rank(const RankedList& list) {
  if (list.scores.size() != list.relevant.size()) throw ValueError("ranked list: size mismatch");
  std::size_t pos = list.scores.size(), count = 0;
  for (std::size_t i = 0; i < list.relevant.size(); ++i) {
    if (list.relevant[i]) {
      pos = i;
      ++count;
    }
  }
  if (count != 1) throw ValueError("ranked list must have exactly one positive, has " + std::to_string(count));
  std::size_t rank = 1;
  for (std::size_t i = 0; i < list.scores.size(); ++i) {
    if (i != pos && list.scores[i] >= list.scores[pos]) ++rank;
  }
  return rank;
}

inline double hr_at_k(const RankedList& list, std::size_t k) { return positive_rank(list) <= k ? 1.0 : 0.0; }

inline double ndcg_at_k(const RankedList& list, std::size_t k) {
  const auto rank = positive_rank(list);
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

inline double mrr(const RankedList& list) { return 1.0 / static_cast<double>(positive_rank(list)); }

}  // namespace rim::metrics
