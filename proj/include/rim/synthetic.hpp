#pragma once

// Seeded synthetic tables for tests, benchmarks and the demo configs.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rim/dataset.hpp"

namespace rim::synthetic {

struct FieldShape {
  std::size_t vocab = 10;
  bool multi = false;
  std::size_t max_values = 3;  // multi-value slots hold 1..max_values values
};

// Uniformly random categorical table with binary labels; no numeric fields.
inline Table random_table(const std::vector<FieldShape>& fields, std::size_t rows, std::uint64_t seed) {
  std::vector<FieldSpec> cols;
  for (std::size_t f = 0; f < fields.size(); ++f) {
    cols.push_back({"f" + std::to_string(f), fields[f].multi ? FieldKind::multi_categorical : FieldKind::categorical});
  }
  cols.push_back({"y", FieldKind::label});
  Table t;
  t.schema = Schema(std::move(cols));
  t.vocab = std::make_shared<FeatureVocab>(fields.size());
  t.binning.assign(fields.size(), std::nullopt);
  std::mt19937_64 rng(seed);
  for (std::size_t r = 0; r < rows; ++r) {
    Sample s;
    s.sample_id = static_cast<SampleId>(r);
    s.slots.resize(fields.size());
    s.numeric.resize(fields.size());
    for (std::size_t f = 0; f < fields.size(); ++f) {
      std::uniform_int_distribution<std::size_t> value(0, fields[f].vocab - 1);
      std::size_t count = 1;
      if (fields[f].multi) count = std::uniform_int_distribution<std::size_t>(1, fields[f].max_values)(rng);
      auto& slot = s.slots[f];
      for (std::size_t i = 0; i < count; ++i) {
        slot.push_back(t.vocab->intern(f, "v" + std::to_string(value(rng))));
      }
      std::sort(slot.begin(), slot.end());
      slot.erase(std::unique(slot.begin(), slot.end()), slot.end());
    }
    s.label = static_cast<double>(rng() & 1u);
    s.label_class = static_cast<std::int32_t>(s.label);
    t.samples.push_back(std::move(s));
  }
  t.label_binning = LabelBinning{0.0, 1.0, 2};
  return t;
}

struct NeighborSignalSpec {
  std::size_t groups = 1000;
  std::size_t pool_rows_per_group = 12;
  std::size_t target_rows_per_group = 8;
  double train_group_fraction = 0.7;
  double high_rate = 0.95;  // click rate of "high" groups; low groups use 1 - high_rate
  std::size_t cities = 200;
  std::size_t items = 100;
  std::size_t tags = 30;
  std::uint64_t seed = 7;

  // Global-time split points: pool < t1 <= train < t2 <= test.
  static constexpr std::int64_t t1 = 1000;
  static constexpr std::int64_t t2 = 2000;
};

// Rows belong to groups (users) whose click rate is either high or low.
// Every group has rows in the retrieval pool; its remaining rows are either
// all training rows or all test rows, so a test user's own id never appears
// in training. The label is therefore only predictable from the labels of
// the same user's pool rows, which a retrieval over the user/city fields
// brings back.
//
// Columns: id:id, user:cat, city:cat, item:cat, tags:mcat, price:num:10, ts:ts, click:label
inline std::string neighbor_signal_csv(const NeighborSignalSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> city(0, spec.cities - 1), item(0, spec.items - 1),
      tag(0, spec.tags - 1), ntags(1, 3);
  std::uniform_int_distribution<std::int64_t> pool_ts(0, NeighborSignalSpec::t1 - 1),
      train_ts(NeighborSignalSpec::t1, NeighborSignalSpec::t2 - 1),
      test_ts(NeighborSignalSpec::t2, NeighborSignalSpec::t2 + 999);

  std::string out = "id:id,user:cat,city:cat,item:cat,tags:mcat,price:num:10,ts:ts,click:label\n";
  std::int64_t id = 0;
  for (std::size_t g = 0; g < spec.groups; ++g) {
    const double rate = unit(rng) < 0.5 ? spec.high_rate : 1.0 - spec.high_rate;
    const bool train_group = unit(rng) < spec.train_group_fraction;
    const std::size_t c = city(rng);
    const std::size_t rows = spec.pool_rows_per_group + spec.target_rows_per_group;
    for (std::size_t r = 0; r < rows; ++r) {
      std::int64_t ts = r < spec.pool_rows_per_group ? pool_ts(rng) : train_group ? train_ts(rng) : test_ts(rng);
      std::string tags;
      for (std::size_t k = 0, n = ntags(rng); k < n; ++k) {
        if (k) tags += '|';
        tags += "t" + std::to_string(tag(rng));
      }
      const int label = unit(rng) < rate ? 1 : 0;
      out += std::to_string(id++) + ",u" + std::to_string(g) + ",c" + std::to_string(c) + ",i" +
             std::to_string(item(rng)) + "," + tags + "," + std::to_string(unit(rng) * 100.0) + "," +
             std::to_string(ts) + "," + std::to_string(label) + "\n";
    }
  }
  return out;
}

}  // namespace rim::synthetic
