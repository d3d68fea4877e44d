#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rim/metrics.hpp"

using namespace rim;
using namespace rim::metrics;

namespace {

std::vector<PredictionRecord> recs(std::vector<double> scores, std::vector<double> labels) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({scores[i], labels[i]});
  return out;
}

// Pairwise enumeration.
double brute_auc(const std::vector<PredictionRecord>& r) {
  double num = 0.0, pairs = 0.0;
  for (const auto& p : r) {
    if (p.label < 0.5) continue;
    for (const auto& n : r) {
      if (n.label > 0.5) continue;
      pairs += 1.0;
      num += p.score > n.score ? 1.0 : p.score == n.score ? 0.5 : 0.0;
    }
  }
  return num / pairs;
}

RankedList list_with_rank(std::size_t size, std::size_t rank) {
  RankedList l;
  for (std::size_t i = 0; i < size; ++i) {
    l.scores.push_back(static_cast<double>(size - i));
    l.relevant.push_back(i + 1 == rank);
  }
  return l;
}

}  // namespace

TEST(Auc, Examples) {
  EXPECT_EQ(auc(recs({0.9, 0.1}, {1, 0})), 1.0);
  EXPECT_NEAR(auc(recs({0.8, 0.7, 0.3}, {1, 0, 1})), 0.5, 1e-15);
  EXPECT_EQ(auc(recs({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0})), 0.5);
}

TEST(Auc, SingleClassIsError) {
  EXPECT_THROW(auc(recs({0.1, 0.2}, {1, 1})), ValueError);
  EXPECT_THROW(auc(recs({}, {})), ValueError);
}

TEST(Auc, InvariantUnderMonotoneTransformAndFlip) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PredictionRecord> r;
    for (int i = 0; i < 30; ++i) r.push_back({u(rng), static_cast<double>(i % 3 == 0)});
    auto t = r;
    for (auto& x : t) x.score = std::exp(3 * x.score) - 7;
    EXPECT_NEAR(auc(r), auc(t), 1e-12);
    auto f = r;
    for (auto& x : f) x.label = 1 - x.label;
    EXPECT_NEAR(auc(f), 1 - auc(r), 1e-12);
  }
}

TEST(Auc, MatchesPairEnumeration) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    std::size_t n = 2 + rng() % 49;
    std::vector<PredictionRecord> r;
    for (std::size_t i = 0; i < n; ++i) r.push_back({static_cast<double>(rng() % 7) / 7.0, static_cast<double>(rng() % 2)});
    r[0].label = 1;
    r[1].label = 0;
    EXPECT_NEAR(auc(r), brute_auc(r), 1e-12);
  }
}

TEST(LogLoss, Examples) {
  EXPECT_LE(log_loss(recs({1.0, 0.0}, {1, 0})), 1e-11);
  EXPECT_NEAR(log_loss(recs({0.5, 0.5, 0.5}, {1, 0, 1})), std::log(2.0), 1e-15);
  EXPECT_NEAR(log_loss(recs({0.25}, {1})), -std::log(0.25), 1e-15);
  EXPECT_NEAR(log_loss(recs({0.25}, {1})), 1.3863, 1e-4);
  EXPECT_THROW(log_loss(recs({}, {})), ValueError);
}

TEST(Rmse, Examples) {
  EXPECT_EQ(rmse(recs({1, 2, 3}, {1, 2, 3})), 0.0);
  EXPECT_EQ(rmse(recs({1, -1}, {0, 0})), 1.0);
  EXPECT_EQ(rmse(recs({3}, {0})), 3.0);
  EXPECT_THROW(rmse(recs({}, {})), ValueError);
}

TEST(Ranking, TopRank) {
  auto l = list_with_rank(20, 1);
  EXPECT_EQ(hr_at_k(l, 5), 1.0);
  EXPECT_EQ(ndcg_at_k(l, 5), 1.0);
  EXPECT_EQ(mrr(l), 1.0);
}

TEST(Ranking, SecondRank) {
  auto l = list_with_rank(20, 2);
  EXPECT_NEAR(ndcg_at_k(l, 5), 1.0 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(ndcg_at_k(l, 5), 0.6309, 1e-4);
  EXPECT_EQ(mrr(l), 0.5);
}

TEST(Ranking, RankElevenOutsideTen) {
  auto l = list_with_rank(30, 11);
  EXPECT_EQ(hr_at_k(l, 10), 0.0);
  EXPECT_EQ(ndcg_at_k(l, 10), 0.0);
  EXPECT_NEAR(mrr(l), 1.0 / 11.0, 1e-15);
}

TEST(Ranking, PositiveLosesTies) {
  RankedList l{{0.5, 0.5, 0.5, 0.1}, {0, 1, 0, 0}};
  EXPECT_EQ(positive_rank(l), 3u);
}

TEST(Ranking, PositiveCountValidated) {
  RankedList none{{0.1, 0.2}, {0, 0}};
  RankedList two{{0.1, 0.2}, {1, 1}};
  EXPECT_THROW(positive_rank(none), ValueError);
  EXPECT_THROW(positive_rank(two), ValueError);
  RankedList ragged{{0.1}, {1, 0}};
  EXPECT_THROW(positive_rank(ragged), ValueError);
}

TEST(Ranking, Monotonicity) {
  for (std::size_t rank = 1; rank < 30; ++rank) {
    EXPECT_GE(ndcg_at_k(list_with_rank(40, rank), 10), ndcg_at_k(list_with_rank(40, rank + 1), 10));
    for (std::size_t k = 1; k < 30; ++k) {
      EXPECT_LE(hr_at_k(list_with_rank(40, rank), k), hr_at_k(list_with_rank(40, rank), k + 1));
    }
  }
}
