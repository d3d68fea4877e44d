#pragma once

// Tabular ingestion: schema, feature vocabulary, discretization and the
// pool/train/test splitting protocols.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rim/common.hpp"

namespace rim {

enum class FieldKind { categorical, multi_categorical, numeric, label, timestamp, sample_id };

inline std::string_view to_string(FieldKind k) {
  switch (k) {
    case FieldKind::categorical: return "cat";
    case FieldKind::multi_categorical: return "mcat";
    case FieldKind::numeric: return "num";
    case FieldKind::label: return "label";
    case FieldKind::timestamp: return "ts";
    case FieldKind::sample_id: return "id";
  }
  return "?";
}

inline FieldKind parse_field_kind(std::string_view s) {
  if (s == "cat") return FieldKind::categorical;
  if (s == "mcat") return FieldKind::multi_categorical;
  if (s == "num") return FieldKind::numeric;
  if (s == "label") return FieldKind::label;
  if (s == "ts") return FieldKind::timestamp;
  if (s == "id") return FieldKind::sample_id;
  throw SchemaError("unknown field kind '" + std::string(s) + "'");
}

inline bool is_feature_kind(FieldKind k) {
  return k == FieldKind::categorical || k == FieldKind::multi_categorical ||
         k == FieldKind::numeric;
}

inline constexpr std::uint32_t kDefaultNumericBins = 10;
inline constexpr char kMultiValueSeparator = '|';
inline constexpr std::string_view kMissingToken = "<missing>";

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::categorical;
  std::uint32_t bins = kDefaultNumericBins;  // numeric only

  bool operator==(const FieldSpec&) const = default;
};

// Column layout of a table. Feature fields get dense slot indices
// [0, F) in column order; label, timestamp and id columns are not slots.
class Schema {
 public:
  Schema() = default;

  explicit Schema(std::vector<FieldSpec> columns) : columns_(std::move(columns)) {
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      const auto& spec = columns_[c];
      switch (spec.kind) {
        case FieldKind::label:
          if (label_column_) throw SchemaError("more than one label field");
          label_column_ = c;
          break;
        case FieldKind::timestamp:
          if (timestamp_column_) throw SchemaError("more than one timestamp field");
          timestamp_column_ = c;
          break;
        case FieldKind::sample_id:
          if (id_column_) throw SchemaError("more than one sample-id field");
          id_column_ = c;
          break;
        case FieldKind::numeric:
          if (spec.bins < 1) throw SchemaError("numeric field '" + spec.name + "' needs bins >= 1");
          [[fallthrough]];
        default:
          feature_columns_.push_back(c);
      }
    }
    if (!label_column_) throw SchemaError("schema has no label field");
    if (feature_columns_.empty()) throw SchemaError("schema has no feature fields");
  }

  // Parses a header line of `name:kind[:bins]` tokens.
  static Schema from_header(std::string_view header) {
    std::vector<FieldSpec> cols;
    for (const auto& token : split(header, ',')) {
      auto parts = split(token, ':');
      if (parts.size() < 2 || parts.size() > 3 || parts[0].empty()) {
        throw SchemaError("malformed header column '" + std::string(token) + "'");
      }
      FieldSpec spec{std::string(parts[0]), parse_field_kind(parts[1]), kDefaultNumericBins};
      if (parts.size() == 3) {
        if (spec.kind != FieldKind::numeric) {
          throw SchemaError("bin count given for non-numeric field '" + spec.name + "'");
        }
        spec.bins = parse_bins(parts[2], spec.name);
      }
      cols.push_back(std::move(spec));
    }
    return Schema(std::move(cols));
  }

  // JSON sidecar: {"fields": [{"name": ..., "kind": "cat", "bins": 10}, ...]}
  static Schema from_json(const nlohmann::json& j) {
    if (!j.contains("fields") || !j["fields"].is_array()) {
      throw SchemaError("schema JSON needs a 'fields' array");
    }
    std::vector<FieldSpec> cols;
    for (const auto& f : j["fields"]) {
      FieldSpec spec{f.at("name").get<std::string>(),
                     parse_field_kind(f.at("kind").get<std::string>()), kDefaultNumericBins};
      if (f.contains("bins")) spec.bins = f["bins"].get<std::uint32_t>();
      cols.push_back(std::move(spec));
    }
    return Schema(std::move(cols));
  }

  std::string header() const {
    std::string out;
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      if (c) out += ',';
      out += columns_[c].name;
      out += ':';
      out += to_string(columns_[c].kind);
      if (columns_[c].kind == FieldKind::numeric) out += ':' + std::to_string(columns_[c].bins);
    }
    return out;
  }

  const std::vector<FieldSpec>& columns() const { return columns_; }
  std::size_t num_features() const { return feature_columns_.size(); }
  const FieldSpec& feature(std::size_t slot) const { return columns_.at(feature_columns_.at(slot)); }
  std::size_t feature_column(std::size_t slot) const { return feature_columns_.at(slot); }
  std::size_t label_column() const { return *label_column_; }
  std::optional<std::size_t> timestamp_column() const { return timestamp_column_; }
  std::optional<std::size_t> id_column() const { return id_column_; }

  std::optional<std::size_t> feature_slot(std::string_view name) const {
    for (std::size_t s = 0; s < feature_columns_.size(); ++s) {
      if (columns_[feature_columns_[s]].name == name) return s;
    }
    return std::nullopt;
  }

  bool operator==(const Schema& o) const { return columns_ == o.columns_; }

  static std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
      auto pos = s.find(sep, start);
      if (pos == std::string_view::npos) {
        out.push_back(s.substr(start));
        return out;
      }
      out.push_back(s.substr(start, pos - start));
      start = pos + 1;
    }
  }

 private:
  static std::uint32_t parse_bins(std::string_view s, const std::string& name) {
    std::uint32_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || v < 1) {
      throw SchemaError("bad bin count '" + std::string(s) + "' for field '" + name + "'");
    }
    return v;
  }

  std::vector<FieldSpec> columns_;
  std::vector<std::size_t> feature_columns_;
  std::optional<std::size_t> label_column_;
  std::optional<std::size_t> timestamp_column_;
  std::optional<std::size_t> id_column_;
};

// Bijection (feature slot, raw token) <-> dense feature id in [0, V).
class FeatureVocab {
 public:
  explicit FeatureVocab(std::size_t num_fields = 0) : by_token_(num_fields) {}

  FeatureId intern(std::size_t field, std::string_view token) {
    auto& map = by_token_.at(field);
    auto it = map.find(std::string(token));
    if (it != map.end()) return it->second;
    auto id = static_cast<FeatureId>(entries_.size());
    map.emplace(std::string(token), id);
    entries_.emplace_back(static_cast<std::uint32_t>(field), std::string(token));
    return id;
  }

  std::optional<FeatureId> find(std::size_t field, std::string_view token) const {
    const auto& map = by_token_.at(field);
    auto it = map.find(std::string(token));
    if (it == map.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t num_fields() const { return by_token_.size(); }
  std::size_t field_of(FeatureId id) const { return entries_.at(id).first; }
  const std::string& token(FeatureId id) const { return entries_.at(id).second; }

  // Ids registered for one field, ascending.
  std::vector<FeatureId> ids_of_field(std::size_t field) const {
    std::vector<FeatureId> out;
    for (const auto& [tok, id] : by_token_.at(field)) out.push_back(id);
    std::sort(out.begin(), out.end());
    return out;
  }

  bool operator==(const FeatureVocab& o) const { return entries_ == o.entries_; }

 private:
  std::vector<std::unordered_map<std::string, FeatureId>> by_token_;
  std::vector<std::pair<std::uint32_t, std::string>> entries_;
};

// One slot holds one id (single-valued) or a sorted set of ids (multi-valued).
using FeatureSlot = std::vector<FeatureId>;

struct Sample {
  SampleId sample_id = 0;
  std::vector<FeatureSlot> slots;               // F slots
  std::vector<std::optional<double>> numeric;   // raw values, numeric slots only
  double label = 0.0;                           // raw label
  std::int32_t label_class = -1;                // set by label discretization
  std::optional<std::int64_t> timestamp;

  bool operator==(const Sample&) const = default;
};

struct NumericBinning {
  std::vector<double> edges;       // bin(v) = #edges <= v
  std::vector<FeatureId> bin_ids;  // edges.size() + 1 entries
  FeatureId missing_id = 0;

  std::size_t bin_of(double v) const {
    return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) -
                                    edges.begin());
  }
  bool operator==(const NumericBinning&) const = default;
};

struct LabelBinning {
  double lo = 0.0;
  double hi = 0.0;
  std::uint32_t classes = 2;

  std::int32_t class_of(double y) const {
    if (!(hi > lo)) return 0;
    double pos = std::floor((y - lo) * classes / (hi - lo));
    pos = std::clamp(pos, 0.0, static_cast<double>(classes - 1));
    return static_cast<std::int32_t>(pos);
  }
  bool operator==(const LabelBinning&) const = default;
};

struct Table {
  Schema schema;
  std::shared_ptr<FeatureVocab> vocab;
  std::vector<Sample> samples;
  std::vector<std::optional<NumericBinning>> binning;  // per feature slot
  std::optional<LabelBinning> label_binning;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t num_features() const { return schema.num_features(); }
  std::size_t vocab_size() const { return vocab ? vocab->size() : 0; }

  // Table with the same schema, vocabulary and binning but no rows.
  Table empty_like() const {
    Table t;
    t.schema = schema;
    t.vocab = vocab;
    t.binning = binning;
    t.label_binning = label_binning;
    return t;
  }

  Table subset(std::span<const std::size_t> positions) const {
    Table t = empty_like();
    t.samples.reserve(positions.size());
    for (auto p : positions) t.samples.push_back(samples.at(p));
    return t;
  }

  // Position of each sample id; ids are unique within a table.
  std::unordered_map<SampleId, std::size_t> position_index() const {
    std::unordered_map<SampleId, std::size_t> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) out.emplace(samples[i].sample_id, i);
    return out;
  }

  bool operator==(const Table& o) const {
    return schema == o.schema && samples == o.samples && binning == o.binning &&
           label_binning == o.label_binning &&
           ((vocab && o.vocab) ? *vocab == *o.vocab : vocab == o.vocab);
  }
};

namespace detail {

inline std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

}  // namespace detail

// Reads a comma-separated table. If `schema` is empty it is parsed from the
// header; otherwise header names must match it column by column.
inline Table read_table(std::istream& in, std::optional<Schema> schema = std::nullopt) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header row");
  auto header = detail::trim_cr(line);
  if (!schema) {
    schema = Schema::from_header(header);
  } else {
    auto names = Schema::split(header, ',');
    if (names.size() != schema->columns().size()) {
      throw ParseError(1, "header has " + std::to_string(names.size()) + " columns, schema has " +
                              std::to_string(schema->columns().size()));
    }
    for (std::size_t c = 0; c < names.size(); ++c) {
      auto name = Schema::split(names[c], ':')[0];
      if (name != schema->columns()[c].name) {
        throw ParseError(1, "header column '" + std::string(name) + "' does not match schema field '" +
                                schema->columns()[c].name + "'");
      }
    }
  }

  Table table;
  table.schema = std::move(*schema);
  const auto& sch = table.schema;
  const std::size_t F = sch.num_features();
  const std::size_t ncols = sch.columns().size();
  table.vocab = std::make_shared<FeatureVocab>(F);
  table.binning.assign(F, std::nullopt);

  // column -> feature slot
  std::vector<std::optional<std::size_t>> slot_of(ncols);
  for (std::size_t s = 0; s < F; ++s) slot_of[sch.feature_column(s)] = s;

  std::unordered_set<SampleId> seen_ids;
  std::size_t line_no = 1;
  SampleId row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = detail::trim_cr(line);
    if (text.empty()) continue;
    auto cells = Schema::split(text, ',');
    if (cells.size() != ncols) {
      throw ParseError(line_no, "expected " + std::to_string(ncols) + " columns, got " +
                                    std::to_string(cells.size()));
    }
    Sample s;
    s.sample_id = row;
    s.slots.resize(F);
    s.numeric.resize(F);
    for (std::size_t c = 0; c < ncols; ++c) {
      const auto& spec = sch.columns()[c];
      auto cell = cells[c];
      switch (spec.kind) {
        case FieldKind::categorical:
          s.slots[*slot_of[c]] = {table.vocab->intern(*slot_of[c], cell.empty() ? kMissingToken : cell)};
          break;
        case FieldKind::multi_categorical: {
          auto& slot = s.slots[*slot_of[c]];
          if (!cell.empty()) {
            for (auto tok : Schema::split(cell, kMultiValueSeparator)) {
              if (!tok.empty()) slot.push_back(table.vocab->intern(*slot_of[c], tok));
            }
          }
          std::sort(slot.begin(), slot.end());
          slot.erase(std::unique(slot.begin(), slot.end()), slot.end());
          break;
        }
        case FieldKind::numeric:
          if (!cell.empty()) {
            auto v = detail::parse_number<double>(cell);
            if (!v || !std::isfinite(*v)) {
              throw ValueError("line " + std::to_string(line_no) + ": non-numeric token '" +
                               std::string(cell) + "' in numeric field '" + spec.name + "'");
            }
            s.numeric[*slot_of[c]] = *v;
          }
          break;
        case FieldKind::label: {
          auto v = detail::parse_number<double>(cell);
          if (!v || !std::isfinite(*v)) {
            throw ValueError("line " + std::to_string(line_no) + ": bad label '" +
                             std::string(cell) + "'");
          }
          s.label = *v;
          break;
        }
        case FieldKind::timestamp:
          if (!cell.empty()) {
            auto v = detail::parse_number<std::int64_t>(cell);
            if (!v) {
              throw ValueError("line " + std::to_string(line_no) + ": bad timestamp '" +
                               std::string(cell) + "'");
            }
            s.timestamp = *v;
          }
          break;
        case FieldKind::sample_id: {
          auto v = detail::parse_number<SampleId>(cell);
          if (!v) {
            throw ValueError("line " + std::to_string(line_no) + ": bad sample id '" +
                             std::string(cell) + "'");
          }
          s.sample_id = *v;
          break;
        }
      }
    }
    if (!seen_ids.insert(s.sample_id).second) {
      throw DataError("line " + std::to_string(line_no) + ": duplicate sample id " +
                      std::to_string(s.sample_id));
    }
    table.samples.push_back(std::move(s));
    ++row;
  }
  return table;
}

inline Schema load_schema_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path);
  try {
    return Schema::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema file " + path + ": " + e.what());
  }
}

inline Table load_table(const std::string& path, std::optional<Schema> schema = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_table(in, std::move(schema));
}

// Writes raw values (numeric fields keep their undiscretized values), so
// read_table(write_table(t)) reproduces a freshly loaded table.
inline void write_table(std::ostream& out, const Table& table) {
  const auto& sch = table.schema;
  out << sch.header() << '\n';
  std::vector<std::optional<std::size_t>> slot_of(sch.columns().size());
  for (std::size_t s = 0; s < sch.num_features(); ++s) slot_of[sch.feature_column(s)] = s;
  for (const auto& smp : table.samples) {
    for (std::size_t c = 0; c < sch.columns().size(); ++c) {
      if (c) out << ',';
      switch (sch.columns()[c].kind) {
        case FieldKind::categorical: {
          const auto& tok = table.vocab->token(smp.slots[*slot_of[c]].at(0));
          if (tok != kMissingToken) out << tok;
          break;
        }
        case FieldKind::multi_categorical: {
          bool first = true;
          for (auto id : smp.slots[*slot_of[c]]) {
            if (!first) out << kMultiValueSeparator;
            out << table.vocab->token(id);
            first = false;
          }
          break;
        }
        case FieldKind::numeric:
          if (auto v = smp.numeric[*slot_of[c]]) out << detail::format_double(*v);
          break;
        case FieldKind::label: out << detail::format_double(smp.label); break;
        case FieldKind::timestamp:
          if (smp.timestamp) out << *smp.timestamp;
          break;
        case FieldKind::sample_id: out << smp.sample_id; break;
      }
    }
    out << '\n';
  }
}

inline void save_table(const Table& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  write_table(out, table);
}

// Assigns bin feature ids to one numeric slot using a fixed binning.
// Values outside the fitted range fall into the edge bins.
inline void apply_binning(Table& table, std::size_t field, const NumericBinning& binning) {
  for (auto& s : table.samples) {
    const auto& v = s.numeric.at(field);
    s.slots[field] = {v ? binning.bin_ids[binning.bin_of(*v)] : binning.missing_id};
  }
  table.binning.at(field) = binning;
}

// Equal-frequency discretization of a numeric slot; returns the fitted
// binning so it can be applied to other partitions.
inline NumericBinning discretize_numeric(Table& table, std::size_t field) {
  const auto& spec = table.schema.feature(field);
  if (spec.kind != FieldKind::numeric) {
    throw ConfigError("field '" + spec.name + "' is not numeric");
  }
  std::vector<double> values;
  values.reserve(table.size());
  for (const auto& s : table.samples) {
    if (const auto& v = s.numeric.at(field)) values.push_back(*v);
  }
  if (values.empty()) {
    throw ValueError("numeric field '" + spec.name + "' has no values to discretize");
  }
  std::sort(values.begin(), values.end());
  std::size_t distinct = 1;
  for (std::size_t i = 1; i < values.size(); ++i) distinct += values[i] != values[i - 1];

  std::size_t bins = std::min<std::size_t>(spec.bins, distinct);
  if (distinct == 1) {
    warn("numeric field '" + spec.name + "' is constant; using a single bin");
  }
  NumericBinning binning;
  const std::size_t n = values.size();
  for (std::size_t j = 1; j < bins; ++j) {
    double e = values[j * n / bins];
    if (e > values.front() && (binning.edges.empty() || e > binning.edges.back())) {
      binning.edges.push_back(e);
    }
  }
  for (std::size_t b = 0; b <= binning.edges.size(); ++b) {
    binning.bin_ids.push_back(table.vocab->intern(field, "#bin" + std::to_string(b)));
  }
  binning.missing_id = table.vocab->intern(field, kMissingToken);
  apply_binning(table, field, binning);
  return binning;
}

inline void discretize_all_numeric(Table& fit, std::span<Table*> others = {}) {
  for (std::size_t f = 0; f < fit.num_features(); ++f) {
    if (fit.schema.feature(f).kind != FieldKind::numeric) continue;
    auto binning = discretize_numeric(fit, f);
    for (auto* t : others) apply_binning(*t, f, binning);
  }
}

inline void apply_label_binning(Table& table, const LabelBinning& binning) {
  for (auto& s : table.samples) s.label_class = binning.class_of(s.label);
  table.label_binning = binning;
}

// Equal-width label classes over the observed label range.
inline LabelBinning discretize_labels(Table& table, std::uint32_t classes) {
  if (classes < 2) throw ConfigError("label discretization needs at least 2 classes");
  LabelBinning binning{0.0, 0.0, classes};
  if (!table.empty()) {
    auto [lo, hi] = std::minmax_element(
        table.samples.begin(), table.samples.end(),
        [](const Sample& a, const Sample& b) { return a.label < b.label; });
    binning.lo = lo->label;
    binning.hi = hi->label;
  }
  apply_label_binning(table, binning);
  return binning;
}

// Binary tasks: labels must already be 0/1 and are used directly as classes.
inline void assign_binary_labels(Table& table) {
  for (auto& s : table.samples) {
    if (s.label != 0.0 && s.label != 1.0) {
      throw ValueError("binary task requires labels in {0,1}, got " +
                       detail::format_double(s.label));
    }
    s.label_class = static_cast<std::int32_t>(s.label);
  }
  table.label_binning = LabelBinning{0.0, 1.0, 2};
}

struct TimeSplit {
  Table pool;
  Table train;
  Table test;
};

// pool: ts < t1, train: t1 <= ts < t2, test: ts >= t2.
inline TimeSplit split_by_time(const Table& table, std::int64_t t1, std::int64_t t2) {
  if (!(t1 < t2)) throw ConfigError("time split needs t1 < t2");
  if (!table.schema.timestamp_column()) throw ConfigError("time split needs a timestamp field");
  TimeSplit out{table.empty_like(), table.empty_like(), table.empty_like()};
  for (const auto& s : table.samples) {
    if (!s.timestamp) {
      throw DataError("sample " + std::to_string(s.sample_id) + " has no timestamp");
    }
    auto ts = *s.timestamp;
    (ts < t1 ? out.pool : ts < t2 ? out.train : out.test).samples.push_back(s);
  }
  if (out.pool.empty()) warn("time split: pool partition is empty");
  if (out.train.empty()) warn("time split: train partition is empty");
  if (out.test.empty()) warn("time split: test partition is empty");
  return out;
}

struct FoldAssignment {
  std::uint32_t k = 0;
  std::vector<std::uint32_t> fold_of;  // by sample position

  std::vector<std::size_t> members(std::uint32_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] == fold) out.push_back(i);
    }
    return out;
  }
  std::vector<std::size_t> complement(std::uint32_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] != fold) out.push_back(i);
    }
    return out;
  }
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out(k, 0);
    for (auto f : fold_of) ++out[f];
    return out;
  }
  bool operator==(const FoldAssignment&) const = default;
};

// Seeded near-equal partition: shuffle positions, deal round-robin.
inline FoldAssignment split_kfold(const Table& train, std::uint32_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold split needs k >= 2");
  if (k > train.size()) {
    throw ConfigError("k-fold split: k=" + std::to_string(k) + " exceeds sample count " +
                      std::to_string(train.size()));
  }
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldAssignment out{k, std::vector<std::uint32_t>(train.size())};
  for (std::size_t r = 0; r < order.size(); ++r) {
    out.fold_of[order[r]] = static_cast<std::uint32_t>(r % k);
  }
  return out;
}

// Retrieval pool for targets in `fold`: every other fold.
inline Table fold_pool(const Table& train, const FoldAssignment& folds, std::uint32_t fold) {
  auto pos = folds.complement(fold);
  return train.subset(pos);
}

struct HoldoutSplit {
  Table train;
  Table test;
};

// Seeded random holdout used when no timestamp split applies.
inline HoldoutSplit split_holdout(const Table& table, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must be in (0,1)");
  }
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(order.size())));
  std::vector<std::size_t> test_pos(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train_pos(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test_pos.begin(), test_pos.end());
  std::sort(train_pos.begin(), train_pos.end());
  return {table.subset(train_pos), table.subset(test_pos)};
}

// Seeded uniform subsample (row order preserved); returns the table unchanged
// if it already has at most `max_rows` rows.
inline Table subsample(const Table& table, std::size_t max_rows, std::uint64_t seed) {
  if (table.size() <= max_rows) return table;
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(max_rows);
  std::sort(order.begin(), order.end());
  return table.subset(order);
}

}  // namespace rim
