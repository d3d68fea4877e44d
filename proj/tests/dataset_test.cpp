#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "helpers.hpp"
#include "rim/dataset.hpp"
#include "rim/synthetic.hpp"

using namespace rim;
using rim::test::parse_csv;

TEST(Schema, ParsesHeaderKindsAndBins) {
  auto s = Schema::from_header("id:id,user:cat,tags:mcat,price:num:4,ts:ts,y:label");
  EXPECT_EQ(s.num_features(), 3u);
  EXPECT_EQ(s.feature(2).bins, 4u);
  EXPECT_EQ(s.feature(0).kind, FieldKind::categorical);
  EXPECT_EQ(s.feature(1).kind, FieldKind::multi_categorical);
  EXPECT_EQ(*s.id_column(), 0u);
  EXPECT_EQ(*s.timestamp_column(), 4u);
  EXPECT_EQ(s.label_column(), 5u);
  EXPECT_EQ(Schema::from_header(s.header()), s);
}

TEST(Schema, DefaultNumericBins) {
  auto s = Schema::from_header("x:num,y:label");
  EXPECT_EQ(s.feature(0).bins, kDefaultNumericBins);
}

TEST(Schema, RejectsBadSchemas) {
  EXPECT_THROW(Schema::from_header("a:cat,b:weird,y:label"), SchemaError);
  EXPECT_THROW(Schema::from_header("a:cat"), SchemaError);                    // no label
  EXPECT_THROW(Schema::from_header("a:cat,y:label,z:label"), SchemaError);    // two labels
  EXPECT_THROW(Schema::from_header("t:ts,u:ts,a:cat,y:label"), SchemaError);  // two timestamps
  EXPECT_THROW(Schema::from_header("i:id,j:id,a:cat,y:label"), SchemaError);  // two ids
  EXPECT_THROW(Schema::from_header("i:id,y:label"), SchemaError);             // F = 0
}

TEST(Schema, FromJsonSidecar) {
  auto j = nlohmann::json::parse(R"({"fields":[{"name":"u","kind":"cat"},{"name":"p","kind":"num","bins":3},
                                             {"name":"y","kind":"label"}]})");
  auto s = Schema::from_json(j);
  EXPECT_EQ(s, Schema::from_header("u:cat,p:num:3,y:label"));
}

TEST(LoadTable, ThreeRowsTwoFeatures) {
  auto t = parse_csv("user:cat,tags:mcat,y:label\nu1,a|b,1\nu2,b,0\nu1,c,1\n");
  EXPECT_EQ(t.size(), 3u);
  EXPECT_EQ(t.num_features(), 2u);
  EXPECT_EQ(t.samples[0].slots[0], t.samples[2].slots[0]);
  // no id column: row index
  EXPECT_EQ(t.samples[2].sample_id, 2);
  EXPECT_EQ(t.vocab_size(), 5u);  // u1 u2 a b c
}

TEST(LoadTable, HeaderOnlyIsEmpty) {
  auto t = parse_csv("user:cat,tags:mcat,y:label\n");
  EXPECT_EQ(t.size(), 0u);
  EXPECT_EQ(t.vocab_size(), 0u);
}

TEST(LoadTable, MultiValueCellUsesSetSemantics) {
  auto t = parse_csv("tags:mcat,y:label\nshopping|mall|shopping,1\n");
  const auto& slot = t.samples[0].slots[0];
  // oracle: distinct tokens of the cell
  std::set<std::string> distinct{"shopping", "mall", "shopping"};
  ASSERT_EQ(slot.size(), distinct.size());
  EXPECT_TRUE(std::is_sorted(slot.begin(), slot.end()));
  std::set<std::string> got;
  for (auto id : slot) got.insert(t.vocab->token(id));
  EXPECT_EQ(got, distinct);
}

TEST(LoadTable, WrongColumnCountReportsLine) {
  try {
    parse_csv("a:cat,y:label\nx,1\ny,0,extra\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.exit_code(), 3);
  }
}

TEST(LoadTable, NonNumericTokenIsValueError) {
  EXPECT_THROW(parse_csv("p:num,y:label\n1.5,1\nabc,0\n"), ValueError);
}

TEST(LoadTable, DuplicateSampleIdRejected) {
  EXPECT_THROW(parse_csv("i:id,a:cat,y:label\n1,x,1\n1,y,0\n"), DataError);
}

TEST(LoadTable, MissingCategoricalMapsToSentinel) {
  auto t = parse_csv("a:cat,b:cat,y:label\n,x,1\nz,,0\n");
  EXPECT_EQ(t.vocab->token(t.samples[0].slots[0][0]), std::string(kMissingToken));
  EXPECT_EQ(t.vocab->token(t.samples[1].slots[1][0]), std::string(kMissingToken));
  // per-field sentinels are distinct ids
  EXPECT_NE(t.samples[0].slots[0][0], t.samples[1].slots[1][0]);
}

TEST(LoadTable, ExplicitSchemaMustMatchHeader) {
  auto schema = Schema::from_header("a:cat,y:label");
  EXPECT_NO_THROW(parse_csv("a,y\nx,1\n", schema));
  EXPECT_THROW(parse_csv("b,y\nx,1\n", schema), ParseError);
}

TEST(LoadTable, SaveLoadRoundTrip) {
  synthetic::NeighborSignalSpec spec;
  spec.groups = 20;
  auto t = parse_csv(synthetic::neighbor_signal_csv(spec));
  std::ostringstream out;
  write_table(out, t);
  auto again = parse_csv(out.str());
  EXPECT_EQ(again, t);
  std::ostringstream out2;
  write_table(out2, again);
  EXPECT_EQ(out2.str(), out.str());
}

TEST(Vocab, BijectionAndDisjointFieldRanges) {
  synthetic::NeighborSignalSpec spec;
  spec.groups = 30;
  auto t = parse_csv(synthetic::neighbor_signal_csv(spec));
  const auto& v = *t.vocab;
  for (FeatureId id = 0; id < v.size(); ++id) {
    auto back = v.find(v.field_of(id), v.token(id));
    ASSERT_TRUE(back.has_value());
    EXPECT_EQ(*back, id);
  }
  std::set<FeatureId> seen;
  for (std::size_t f = 0; f < t.num_features(); ++f) {
    for (auto id : v.ids_of_field(f)) EXPECT_TRUE(seen.insert(id).second);
  }
  EXPECT_EQ(seen.size(), v.size());
}

namespace {
Table numeric_table(const std::vector<double>& values, std::uint32_t bins) {
  std::string csv = "x:num:" + std::to_string(bins) + ",y:label\n";
  for (double v : values) csv += detail::format_double(v) + ",0\n";
  return parse_csv(csv);
}
std::vector<std::size_t> bins_of(const Table& t, const NumericBinning& b) {
  std::vector<std::size_t> out;
  for (const auto& s : t.samples) {
    auto it = std::find(b.bin_ids.begin(), b.bin_ids.end(), s.slots[0][0]);
    out.push_back(static_cast<std::size_t>(it - b.bin_ids.begin()));
  }
  return out;
}
}  // namespace

TEST(Discretize, EqualFrequencyTwoBins) {
  auto t = numeric_table({1, 2, 3, 4}, 2);
  auto b = discretize_numeric(t, 0);
  EXPECT_EQ(bins_of(t, b), (std::vector<std::size_t>{0, 0, 1, 1}));
}

TEST(Discretize, ConstantColumnSingleBinWithWarning) {
  auto t = numeric_table({5, 5, 5}, 4);
  ScopedWarningCapture cap;
  auto b = discretize_numeric(t, 0);
  EXPECT_EQ(bins_of(t, b), (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_EQ(cap.messages().size(), 1u);
}

TEST(Discretize, BinsReducedToDistinctCount) {
  auto t = numeric_table({1, 1, 2, 2, 3, 3}, 10);
  auto b = discretize_numeric(t, 0);
  EXPECT_EQ(b.bin_ids.size(), 3u);
  EXPECT_EQ(bins_of(t, b), (std::vector<std::size_t>{0, 0, 1, 1, 2, 2}));
}

TEST(Discretize, OutOfRangeTestValuesClampToEdgeBins) {
  auto train = numeric_table({10, 20, 30, 40}, 2);
  auto b = discretize_numeric(train, 0);
  auto test = train.empty_like();
  Sample lo = train.samples[0], hi = train.samples[0];
  lo.numeric[0] = -100.0;
  hi.numeric[0] = 1e9;
  test.samples = {lo, hi};
  apply_binning(test, 0, b);
  EXPECT_EQ(bins_of(test, b), (std::vector<std::size_t>{0, 1}));
}

TEST(Discretize, MissingValueGetsSentinel) {
  auto t = parse_csv("x:num:2,y:label\n1,0\n,0\n3,0\n");
  auto b = discretize_numeric(t, 0);
  EXPECT_EQ(t.samples[1].slots[0][0], b.missing_id);
}

TEST(Discretize, NoValuesIsError) {
  auto t = parse_csv("x:num:2,y:label\n,0\n");
  EXPECT_THROW(discretize_numeric(t, 0), ValueError);
}

TEST(Discretize, OccupancyWithinTiesOfTarget) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint32_t B = 2 + static_cast<std::uint32_t>(rng() % 8);
    const std::size_t n = 20 + rng() % 200;
    std::vector<double> vals;
    for (std::size_t i = 0; i < n; ++i) vals.push_back(static_cast<double>(rng() % 40));
    auto t = numeric_table(vals, B);
    auto b = discretize_numeric(t, 0);
    std::map<double, std::size_t> mult;
    for (double v : vals) ++mult[v];
    std::size_t max_tie = 0;
    for (auto& [v, c] : mult) max_tie = std::max(max_tie, c);
    const double target = static_cast<double>(n) / static_cast<double>(b.bin_ids.size());
    std::vector<std::size_t> occ(b.bin_ids.size(), 0);
    for (auto k : bins_of(t, b)) ++occ[k];
    for (auto o : occ) {
      EXPECT_LE(std::abs(static_cast<double>(o) - target), static_cast<double>(max_tie) + 1.0);
    }
  }
}

TEST(DiscretizeLabels, OneClassPerIntegerRating) {
  auto t = parse_csv("a:cat,y:label\nx,1\nx,2\nx,3\nx,4\nx,5\n");
  discretize_labels(t, 5);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(t.samples[i].label_class, static_cast<int>(i));
  EXPECT_DOUBLE_EQ(t.samples[4].label, 5.0);  // raw label retained
}

TEST(DiscretizeLabels, BinaryIdentity) {
  auto t = parse_csv("a:cat,y:label\nx,0\nx,1\nx,1\n");
  discretize_labels(t, 2);
  EXPECT_EQ(t.samples[0].label_class, 0);
  EXPECT_EQ(t.samples[1].label_class, 1);
}

TEST(DiscretizeLabels, EqualWidthBoundary) {
  auto t = parse_csv("a:cat,y:label\nx,1\nx,5\nx,2.9\nx,3.1\n");
  auto b = discretize_labels(t, 2);
  // boundary lo + (hi - lo) / 2 = 3.0
  const double boundary = b.lo + (b.hi - b.lo) / 2.0;
  EXPECT_DOUBLE_EQ(boundary, 3.0);
  EXPECT_EQ(t.samples[2].label_class, 0);
  EXPECT_EQ(t.samples[3].label_class, 1);
}

TEST(DiscretizeLabels, SingleClassIsConfigError) {
  auto t = parse_csv("a:cat,y:label\nx,1\n");
  EXPECT_THROW(discretize_labels(t, 1), ConfigError);
}

TEST(BinaryLabels, RejectsNonBinary) {
  auto t = parse_csv("a:cat,y:label\nx,0.5\n");
  EXPECT_THROW(assign_binary_labels(t), ValueError);
}

TEST(TimeSplit, DirectRule) {
  auto t = parse_csv("a:cat,ts:ts,y:label\nx,10,0\nx,20,1\nx,30,0\n");
  auto s = split_by_time(t, 15, 25);
  ASSERT_EQ(s.pool.size(), 1u);
  ASSERT_EQ(s.train.size(), 1u);
  ASSERT_EQ(s.test.size(), 1u);
  EXPECT_EQ(*s.pool.samples[0].timestamp, 10);
  EXPECT_EQ(*s.train.samples[0].timestamp, 20);
  EXPECT_EQ(*s.test.samples[0].timestamp, 30);
}

TEST(TimeSplit, EmptyPartitionsWarn) {
  auto t = parse_csv("a:cat,ts:ts,y:label\nx,1,0\nx,2,1\n");
  ScopedWarningCapture cap;
  auto s = split_by_time(t, 100, 200);
  EXPECT_EQ(s.pool.size(), 2u);
  EXPECT_TRUE(s.train.empty());
  EXPECT_TRUE(s.test.empty());
  EXPECT_EQ(cap.messages().size(), 2u);
}

TEST(TimeSplit, BoundaryGoesToLaterPartition) {
  auto t = parse_csv("a:cat,ts:ts,y:label\nx,15,0\nx,25,1\n");
  auto s = split_by_time(t, 15, 25);
  EXPECT_TRUE(s.pool.empty());
  EXPECT_EQ(s.train.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(TimeSplit, Errors) {
  auto no_ts = parse_csv("a:cat,y:label\nx,0\n");
  EXPECT_THROW(split_by_time(no_ts, 1, 2), ConfigError);
  auto t = parse_csv("a:cat,ts:ts,y:label\nx,,0\n");
  EXPECT_THROW(split_by_time(t, 1, 2), DataError);
  EXPECT_THROW(split_by_time(t, 2, 2), ConfigError);
}

TEST(TimeSplit, PartitionProperty) {
  synthetic::NeighborSignalSpec spec;
  spec.groups = 40;
  auto t = parse_csv(synthetic::neighbor_signal_csv(spec));
  auto s = split_by_time(t, 500, 1500);
  std::multiset<SampleId> ids;
  for (auto* part : {&s.pool, &s.train, &s.test}) {
    for (const auto& x : part->samples) ids.insert(x.sample_id);
  }
  ASSERT_EQ(ids.size(), t.size());
  for (const auto& x : t.samples) EXPECT_EQ(ids.count(x.sample_id), 1u);
}

namespace {
Table rows(std::size_t n) {
  std::string csv = "a:cat,y:label\n";
  for (std::size_t i = 0; i < n; ++i) csv += "v" + std::to_string(i % 3) + ",0\n";
  return parse_csv(csv);
}
}  // namespace

TEST(KFold, FiveFoldsOfTwo) {
  auto t = rows(10);
  auto f = split_kfold(t, 5, 1);
  EXPECT_EQ(f.sizes(), (std::vector<std::size_t>(5, 2)));
  EXPECT_EQ(fold_pool(t, f, 0).size(), 8u);
}

TEST(KFold, BalancedRemainder) {
  for (std::size_t n : {10u, 11u, 17u, 100u}) {
    for (std::uint32_t k : {2u, 3u, 4u, 7u}) {
      auto f = split_kfold(rows(n), k, 9);
      auto sizes = f.sizes();
      std::sort(sizes.rbegin(), sizes.rend());
      std::vector<std::size_t> want;
      for (std::uint32_t i = 0; i < k; ++i) want.push_back(n / k + (i < n % k ? 1 : 0));
      EXPECT_EQ(sizes, want) << "n=" << n << " k=" << k;
    }
  }
  auto sizes = split_kfold(rows(10), 3, 5).sizes();
  std::sort(sizes.rbegin(), sizes.rend());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 3, 3}));
}

TEST(KFold, DeterministicAndPartitioning) {
  auto t = rows(37);
  auto a = split_kfold(t, 4, 123);
  auto b = split_kfold(t, 4, 123);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, split_kfold(t, 4, 124));
  std::vector<int> count(t.size(), 0);
  for (std::uint32_t k = 0; k < 4; ++k) {
    for (auto p : a.members(k)) ++count[p];
    auto pool = a.complement(k);
    for (auto p : pool) EXPECT_NE(a.fold_of[p], k);
  }
  for (auto c : count) EXPECT_EQ(c, 1);
}

TEST(KFold, Errors) {
  EXPECT_THROW(split_kfold(rows(3), 4, 0), ConfigError);
  EXPECT_THROW(split_kfold(rows(3), 1, 0), ConfigError);
}

TEST(Holdout, DisjointAndSeeded) {
  auto t = rows(50);
  auto a = split_holdout(t, 0.2, 4);
  auto b = split_holdout(t, 0.2, 4);
  EXPECT_EQ(a.test.size(), 10u);
  EXPECT_EQ(a.train.size(), 40u);
  EXPECT_EQ(a.test, b.test);
  std::set<SampleId> ids;
  for (auto& s : a.train.samples) ids.insert(s.sample_id);
  for (auto& s : a.test.samples) EXPECT_TRUE(ids.insert(s.sample_id).second);
}

TEST(Subsample, KeepsOrderAndSize) {
  auto t = rows(100);
  auto s = subsample(t, 30, 1);
  EXPECT_EQ(s.size(), 30u);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s.samples[i - 1].sample_id, s.samples[i].sample_id);
  EXPECT_EQ(subsample(t, 200, 1).size(), 100u);
}
