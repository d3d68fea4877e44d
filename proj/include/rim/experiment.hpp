#pragma once

// Experiment orchestration behind the `rim` CLI: config parsing, the data
// preparation pipeline (load, split, discretize, index), retrieval for every
// target, training, evaluation and the ablation matrix.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rim/common.hpp"
#include "rim/dataset.hpp"
#include "rim/index.hpp"
#include "rim/metrics.hpp"
#include "rim/model.hpp"
#include "rim/oracle.hpp"
#include "rim/retrieval.hpp"

namespace rim {

using nlohmann::json;
namespace fs = std::filesystem;

enum class SplitMode { time, kfold };

struct RankingEvalConfig {
  std::string item_field;
  std::size_t negatives = 100;
  std::vector<std::size_t> cutoffs = {1, 5, 10};
};

struct AblationConfig {
  std::vector<RetrievalMode> modes = {RetrievalMode::bm25, RetrievalMode::random, RetrievalMode::filtered,
                                      RetrievalMode::none};
  std::vector<bool> labels = {true, false};
  std::vector<InteractionKind> interactions = {InteractionKind::inner};
  std::vector<std::size_t> K = {10};
};

struct ExperimentConfig {
  json raw;  // effective document (after --set overrides)
  fs::path base_dir;

  std::string data_path;
  std::optional<std::string> schema_path;
  TaskKind task = TaskKind::binary;
  std::uint32_t label_classes = 2;

  SplitMode split = SplitMode::time;
  std::int64_t t1 = 0, t2 = 0;
  std::uint32_t k = 5;
  double test_fraction = 0.2;
  std::uint64_t seed = 42;

  double stop_field_ratio = kDefaultStopFieldRatio;
  std::size_t pool_sample = 0;  // 0 keeps the whole pool
  RankingParams ranking;

  RetrievalMode mode = RetrievalMode::bm25;
  bool use_cache = false;
  std::string cache_path;
  std::size_t K = 10;
  std::optional<std::string> filter_field;

  std::size_t embedding_dim = 8;
  InteractionKind interaction = InteractionKind::inner;
  std::vector<std::size_t> hidden = {200, 80};
  std::vector<std::size_t> micro_hidden = {40, 5};
  bool use_labels = true;
  TrainConfig train;

  std::optional<RankingEvalConfig> ranking_eval;
  AblationConfig ablate;
  std::string output_dir = "runs";

  std::string hash() const { return hex64(fnv1a(raw.dump())); }
  fs::path run_dir() const { return base_dir / output_dir / hash(); }
  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
};

namespace detail {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j[key].is_null()) return fallback;
  return j[key].get<T>();
}

inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

}  // namespace detail

// Applies `key=value` overrides; dotted keys address nested objects and the
// value is parsed as JSON when possible, otherwise taken as a string.
inline void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + o + "'");
    auto key = o.substr(0, eq);
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
      auto dot = key.find('.', start);
      auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (dot == std::string::npos) {
        (*node)[part] = detail::parse_override_value(o.substr(eq + 1));
        break;
      }
      node = &(*node)[part];
      if (!node->is_object()) *node = json::object();
      start = dot + 1;
    }
  }
}

inline ExperimentConfig parse_config(const json& doc, const fs::path& base_dir) {
  ExperimentConfig c;
  c.raw = doc;
  c.base_dir = base_dir;
  try {
    const auto& data = doc.at("data");
    c.data_path = data.at("path").get<std::string>();
    if (data.contains("schema")) c.schema_path = data["schema"].get<std::string>();

    c.task = parse_task(detail::get_or<std::string>(doc, "task", "binary"));
    c.label_classes = detail::get_or<std::uint32_t>(doc, "label_classes", 2);
    c.seed = detail::get_or<std::uint64_t>(doc, "seed", 42);

    const json split = doc.value("split", json::object());
    auto mode = detail::get_or<std::string>(split, "mode", "kfold");
    if (mode == "time") {
      c.split = SplitMode::time;
      c.t1 = split.at("t1").get<std::int64_t>();
      c.t2 = split.at("t2").get<std::int64_t>();
    } else if (mode == "kfold") {
      c.split = SplitMode::kfold;
      c.k = detail::get_or<std::uint32_t>(split, "k", 5);
      c.test_fraction = detail::get_or<double>(split, "test_fraction", 0.2);
    } else {
      throw ConfigError("split.mode must be 'time' or 'kfold'");
    }

    const json index = doc.value("index", json::object());
    c.stop_field_ratio = detail::get_or<double>(index, "stop_field_ratio", kDefaultStopFieldRatio);
    c.pool_sample = detail::get_or<std::size_t>(index, "pool_sample", 0);
    c.ranking.k1 = detail::get_or<double>(index, "k1", 1.2);
    c.ranking.b = detail::get_or<double>(index, "b", 0.75);
    c.ranking.validate();

    const json retrieval = doc.value("retrieval", json::object());
    auto rmode = detail::get_or<std::string>(retrieval, "mode", "bm25");
    if (rmode == "cached") {
      c.use_cache = true;
      c.cache_path = retrieval.at("cache_path").get<std::string>();
      c.mode = parse_retrieval_mode(detail::get_or<std::string>(retrieval, "cached_mode", "bm25"));
    } else {
      c.mode = parse_retrieval_mode(rmode);
    }
    c.K = detail::get_or<std::size_t>(retrieval, "K", 10);
    if (c.K == 0) throw ConfigError("retrieval.K must be >= 1");
    if (retrieval.contains("filter_field")) c.filter_field = retrieval["filter_field"].get<std::string>();
    if (c.mode == RetrievalMode::filtered && !c.filter_field) {
      throw ConfigError("filtered retrieval needs retrieval.filter_field");
    }

    const json model = doc.value("model", json::object());
    c.embedding_dim = detail::get_or<std::size_t>(model, "embedding_dim", 8);
    c.interaction = parse_interaction(detail::get_or<std::string>(model, "interaction", "inner"));
    c.hidden = detail::get_or<std::vector<std::size_t>>(model, "hidden", {200, 80});
    c.micro_hidden = detail::get_or<std::vector<std::size_t>>(model, "micro_hidden", {40, 5});
    c.use_labels = detail::get_or<bool>(model, "use_labels", true);

    const json train = doc.value("train", json::object());
    c.train.adam.lr = detail::get_or<double>(train, "lr", 1e-3);
    c.train.adam.beta1 = detail::get_or<double>(train, "beta1", 0.9);
    c.train.adam.beta2 = detail::get_or<double>(train, "beta2", 0.999);
    c.train.adam.eps = detail::get_or<double>(train, "eps", 1e-8);
    c.train.l2 = detail::get_or<double>(train, "l2", 1e-4);
    c.train.batch_size = detail::get_or<std::size_t>(train, "batch_size", 100);
    c.train.epochs = detail::get_or<std::size_t>(train, "epochs", 5);
    c.train.seed = c.seed;
    c.train.validate();

    if (doc.contains("eval") && doc["eval"].contains("ranking")) {
      const auto& r = doc["eval"]["ranking"];
      RankingEvalConfig rc;
      rc.item_field = r.at("item_field").get<std::string>();
      rc.negatives = detail::get_or<std::size_t>(r, "negatives", 100);
      rc.cutoffs = detail::get_or<std::vector<std::size_t>>(r, "cutoffs", {1, 5, 10});
      c.ranking_eval = rc;
    }

    if (doc.contains("ablate")) {
      const auto& a = doc["ablate"];
      if (a.contains("modes")) {
        c.ablate.modes.clear();
        for (const auto& m : a["modes"]) c.ablate.modes.push_back(parse_retrieval_mode(m.get<std::string>()));
      }
      if (a.contains("labels")) c.ablate.labels = a["labels"].get<std::vector<bool>>();
      if (a.contains("interactions")) {
        c.ablate.interactions.clear();
        for (const auto& m : a["interactions"]) c.ablate.interactions.push_back(parse_interaction(m.get<std::string>()));
      }
      if (a.contains("K")) c.ablate.K = a["K"].get<std::vector<std::size_t>>();
    }
    c.output_dir = detail::get_or<std::string>(doc, "output_dir", "runs");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  apply_overrides(doc, overrides);
  return parse_config(doc, fs::absolute(path).parent_path());
}

using Clock = std::chrono::steady_clock;
inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Everything derived from the data file: partitions, retrieval pools and
// their indexes. For time splits there is one pool (rows before t1) serving
// train and test targets. For k-fold, pools[i] serves training targets of
// fold i and the last pool (the whole train set) serves test targets.
struct PreparedData {
  Table train, test;
  std::vector<Table> pools;
  std::vector<InvertedIndex> indexes;
  std::vector<std::size_t> train_pool;  // per train sample
  std::size_t test_pool = 0;
  StopFields stop_fields;
  std::size_t vocab_size = 0;
  double index_build_seconds = 0.0;

  const Table& schema_table() const { return train; }

  std::uint64_t index_fingerprint() const {
    if (indexes.size() == 1) return indexes[0].fingerprint();
    Fnv1a h;
    for (const auto& idx : indexes) {
      auto f = idx.fingerprint();
      h.update(std::as_bytes(std::span(&f, 1)));
    }
    return h.digest();
  }

  std::string index_file(const fs::path& run_dir, std::size_t i) const {
    if (indexes.size() == 1 || i + 1 == indexes.size()) return (run_dir / "index.rimidx").string();
    return (run_dir / ("index.fold" + std::to_string(i) + ".rimidx")).string();
  }
};

// Numeric edges and label classes are fitted on the non-test partitions and
// then applied to every partition.
inline void fit_discretization(const ExperimentConfig& cfg, std::vector<Table*> fit_parts, std::vector<Table*> all) {
  Table fit = fit_parts.front()->empty_like();
  for (auto* t : fit_parts) fit.samples.insert(fit.samples.end(), t->samples.begin(), t->samples.end());
  for (std::size_t f = 0; f < fit.num_features(); ++f) {
    if (fit.schema.feature(f).kind != FieldKind::numeric) continue;
    auto binning = discretize_numeric(fit, f);
    for (auto* t : all) apply_binning(*t, f, binning);
  }
  if (cfg.task == TaskKind::binary) {
    for (auto* t : all) assign_binary_labels(*t);
  } else {
    auto lb = discretize_labels(fit, cfg.label_classes);
    for (auto* t : all) apply_label_binning(*t, lb);
  }
}

// Builds (or, with `reuse_files`, loads from the run directory) all indexes.
inline PreparedData prepare_data(const ExperimentConfig& cfg, bool reuse_files = false) {
  std::optional<Schema> schema;
  if (cfg.schema_path) schema = load_schema_json(cfg.resolve(*cfg.schema_path).string());
  Table full = load_table(cfg.resolve(cfg.data_path).string(), schema);

  PreparedData out;
  if (cfg.split == SplitMode::time) {
    auto sp = split_by_time(full, cfg.t1, cfg.t2);
    out.train = std::move(sp.train);
    out.test = std::move(sp.test);
    Table pool = std::move(sp.pool);
    fit_discretization(cfg, {&pool, &out.train}, {&pool, &out.train, &out.test});
    out.pools.push_back(std::move(pool));
    out.train_pool.assign(out.train.size(), 0);
    out.test_pool = 0;
  } else {
    auto hs = split_holdout(full, cfg.test_fraction, mix_seed(cfg.seed, 10));
    out.train = std::move(hs.train);
    out.test = std::move(hs.test);
    fit_discretization(cfg, {&out.train}, {&out.train, &out.test});
    auto folds = split_kfold(out.train, cfg.k, mix_seed(cfg.seed, 11));
    for (std::uint32_t f = 0; f < folds.k; ++f) out.pools.push_back(fold_pool(out.train, folds, f));
    out.pools.push_back(out.train);
    out.train_pool.assign(folds.fold_of.begin(), folds.fold_of.end());
    out.test_pool = folds.k;
  }
  if (out.train.empty()) throw DataError("training partition is empty");
  out.vocab_size = full.vocab_size();
  if (cfg.pool_sample > 0) {
    for (std::size_t i = 0; i < out.pools.size(); ++i) {
      out.pools[i] = subsample(out.pools[i], cfg.pool_sample, mix_seed(cfg.seed, 20 + i));
    }
  }
  out.stop_fields = detect_stop_fields(out.pools[out.test_pool], cfg.stop_field_ratio);

  const auto run_dir = cfg.run_dir();
  auto t0 = Clock::now();
  for (std::size_t i = 0; i < out.pools.size(); ++i) {
    auto built = build_index(out.pools[i], out.stop_fields);
    if (reuse_files) {
      auto path = out.index_file(run_dir, i);
      if (fs::exists(path)) {
        auto loaded = load_index(path);
        if (!(loaded == built)) throw StaleCacheError("index file " + path + " does not match the data; rebuild it");
        built = std::move(loaded);
      }
    }
    out.indexes.push_back(std::move(built));
  }
  out.index_build_seconds = seconds_since(t0);
  out.vocab_size = std::max(out.vocab_size, out.train.vocab_size());
  return out;
}

// Resolves the configured retrieval for one target against one pool.
class TargetRetriever {
 public:
  TargetRetriever(const ExperimentConfig& cfg, const PreparedData& data, RetrievalMode mode, std::size_t K)
      : cfg_(cfg), data_(data), mode_(mode), K_(K) {
    if (mode_ == RetrievalMode::filtered) {
      auto slot = data.train.schema.feature_slot(*cfg.filter_field);
      if (!slot) throw ConfigError("unknown filter field '" + *cfg.filter_field + "'");
      filter_slot_ = *slot;
    }
    if (cfg.use_cache) {
      cache_ = load_cache(cfg.resolve(cfg.cache_path).string());
    }
  }

  CacheProvenance provenance() const {
    std::uint64_t param = mode_ == RetrievalMode::filtered ? filter_slot_
                          : mode_ == RetrievalMode::random ? cfg_.seed
                                                           : 0;
    return {data_.index_fingerprint(), static_cast<std::uint32_t>(K_), mode_, param, cfg_.ranking};
  }

  RetrievedSet live(const Sample& target, std::size_t pool) const {
    const auto& index = data_.indexes[pool];
    const auto& table = data_.pools[pool];
    switch (mode_) {
      case RetrievalMode::bm25: return retrieve_topk(index, table, make_query(target), K_, cfg_.ranking);
      case RetrievalMode::filtered:
        return retrieve_filtered(index, table, make_query(target), K_, filter_slot_, cfg_.ranking);
      case RetrievalMode::random:
        return retrieve_random(table, target.sample_id, K_,
                               mix_seed(cfg_.seed, static_cast<std::uint64_t>(target.sample_id)));
      case RetrievalMode::none: return {};
    }
    return {};
  }

  RetrievedSet operator()(const Sample& target, std::size_t pool) const {
    if (cache_) {
      auto hit = cache_->lookup(target.sample_id, provenance());
      if (!hit) throw DataError("target " + std::to_string(target.sample_id) + " is not in the retrieval cache");
      return *hit;
    }
    return live(target, pool);
  }

  std::vector<RetrievedSet> for_train() const {
    std::vector<RetrievedSet> out;
    out.reserve(data_.train.size());
    for (std::size_t i = 0; i < data_.train.size(); ++i) out.push_back((*this)(data_.train.samples[i], data_.train_pool[i]));
    return out;
  }
  std::vector<RetrievedSet> for_test(double* mean_latency = nullptr) const {
    std::vector<RetrievedSet> out;
    out.reserve(data_.test.size());
    auto t0 = Clock::now();
    for (const auto& s : data_.test.samples) out.push_back((*this)(s, data_.test_pool));
    if (mean_latency && !data_.test.empty()) *mean_latency = seconds_since(t0) / static_cast<double>(data_.test.size());
    return out;
  }

 private:
  const ExperimentConfig& cfg_;
  const PreparedData& data_;
  RetrievalMode mode_;
  std::size_t K_;
  std::size_t filter_slot_ = 0;
  std::optional<RetrievalCache> cache_;
};

inline ModelConfig model_config(const ExperimentConfig& cfg, const PreparedData& data, InteractionKind kind,
                                bool use_labels, std::size_t K) {
  ModelConfig m;
  m.num_fields = data.train.num_features();
  m.vocab_size = std::max<std::size_t>(1, data.vocab_size);
  m.label_classes = cfg.task == TaskKind::binary ? 2 : cfg.label_classes;
  m.embedding_dim = cfg.embedding_dim;
  m.retrieval_size = K;
  m.interaction = kind;
  m.hidden = cfg.hidden;
  m.micro_hidden = cfg.micro_hidden;
  m.task = cfg.task;
  m.use_labels = use_labels;
  return m;
}

inline std::vector<metrics::PredictionRecord> records_for(const Table& targets, const std::vector<double>& preds) {
  std::vector<metrics::PredictionRecord> out;
  out.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) out.push_back({preds[i], loss_target(targets.samples[i])});
  return out;
}

inline json pointwise_metrics(TaskKind task, const std::vector<metrics::PredictionRecord>& recs) {
  json m = json::object();
  if (recs.empty()) return m;
  if (task == TaskKind::binary) {
    try {
      m["auc"] = metrics::auc(recs);
    } catch (const ValueError&) {
      m["auc"] = nullptr;
    }
    m["logloss"] = metrics::log_loss(recs);
  } else {
    m["rmse"] = metrics::rmse(recs);
  }
  return m;
}

// Ranks each positive test row against `negatives` copies of itself whose
// item field is replaced by a random other item.
inline json ranking_metrics(const ExperimentConfig& cfg, const PreparedData& data, const ModelParams& params,
                            const TargetRetriever& retriever) {
  const auto& rc = *cfg.ranking_eval;
  auto slot = data.test.schema.feature_slot(rc.item_field);
  if (!slot) throw ConfigError("unknown ranking item field '" + rc.item_field + "'");
  auto items = data.test.vocab->ids_of_field(*slot);
  std::mt19937_64 rng(mix_seed(cfg.seed, 30));
  std::map<std::size_t, double> hr, ndcg;
  double mrr_sum = 0.0;
  std::size_t lists = 0;
  for (const auto& s : data.test.samples) {
    if (s.label <= 0.5) continue;
    if (items.size() < 2) break;
    metrics::RankedList list;
    auto score = [&](const Sample& cand) { return forward(params, cand, retriever(cand, data.test_pool)).y_hat; };
    list.scores.push_back(score(s));
    list.relevant.push_back(1);
    std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
    for (std::size_t n = 0; n < rc.negatives; ++n) {
      Sample neg = s;
      FeatureId item;
      do {
        item = items[pick(rng)];
      } while (std::find(s.slots[*slot].begin(), s.slots[*slot].end(), item) != s.slots[*slot].end());
      neg.slots[*slot] = {item};
      list.scores.push_back(score(neg));
      list.relevant.push_back(0);
    }
    for (auto k : rc.cutoffs) {
      hr[k] += metrics::hr_at_k(list, k);
      ndcg[k] += metrics::ndcg_at_k(list, k);
    }
    mrr_sum += metrics::mrr(list);
    ++lists;
  }
  json m = json::object();
  if (lists == 0) return m;
  for (auto k : rc.cutoffs) {
    m["hr@" + std::to_string(k)] = hr[k] / static_cast<double>(lists);
    m["ndcg@" + std::to_string(k)] = ndcg[k] / static_cast<double>(lists);
  }
  m["mrr"] = mrr_sum / static_cast<double>(lists);
  m["lists"] = lists;
  return m;
}

inline json dataset_stats(const PreparedData& data) {
  std::size_t pool_rows = 0;
  for (const auto& p : data.pools) pool_rows = std::max(pool_rows, p.size());
  return {{"N_train", data.train.size()},
          {"N_test", data.test.size()},
          {"N_pool", data.pools[data.test_pool].size()},
          {"F", data.train.num_features()},
          {"V", data.vocab_size}};
}

inline json reproducibility(const ExperimentConfig& cfg, const PreparedData& data) {
  return {{"seed", cfg.seed}, {"config_hash", cfg.hash()}, {"index_fingerprint", hex64(data.index_fingerprint())}};
}

// ---- commands -------------------------------------------------------------

inline json cmd_build_index(const ExperimentConfig& cfg) {
  auto data = prepare_data(cfg);
  fs::create_directories(cfg.run_dir());
  json files = json::array();
  for (std::size_t i = 0; i < data.indexes.size(); ++i) {
    auto path = data.index_file(cfg.run_dir(), i);
    save_index(data.indexes[i], path);
    files.push_back(path);
  }
  const auto& main = data.indexes[data.test_pool];
  json stop = json::array();
  for (auto f : data.stop_fields) stop.push_back(data.train.schema.feature(f).name);
  return {{"command", "build-index"},
          {"N_pool", main.num_docs()},
          {"V", data.vocab_size},
          {"F", main.num_fields()},
          {"terms", main.num_terms()},
          {"stop_fields", stop},
          {"posting_length_log2_histogram", main.posting_length_histogram()},
          {"index_build_seconds", data.index_build_seconds},
          {"files", files},
          {"reproducibility", reproducibility(cfg, data)}};
}

// Re-encodes a separately loaded target table into the experiment's
// vocabulary. Values never seen during preparation are dropped.
inline Table encode_targets(const Table& raw, const PreparedData& data) {
  if (!(raw.schema == data.train.schema)) throw SchemaError("target file schema differs from the dataset schema");
  Table out = data.train.empty_like();
  for (const auto& s : raw.samples) {
    Sample e = s;
    for (std::size_t f = 0; f < e.slots.size(); ++f) {
      if (const auto& bin = data.train.binning[f]) {
        const auto& v = e.numeric[f];
        e.slots[f] = {v ? bin->bin_ids[bin->bin_of(*v)] : bin->missing_id};
        continue;
      }
      FeatureSlot slot;
      for (auto id : s.slots[f]) {
        if (auto mapped = data.train.vocab->find(f, raw.vocab->token(id))) slot.push_back(*mapped);
      }
      std::sort(slot.begin(), slot.end());
      e.slots[f] = std::move(slot);
    }
    if (data.train.label_binning) e.label_class = data.train.label_binning->class_of(e.label);
    out.samples.push_back(std::move(e));
  }
  return out;
}

struct RetrieveOptions {
  std::optional<std::string> targets_path;
  std::optional<std::string> cache_out;
  bool oracle = false;
};

inline constexpr std::size_t kOraclePoolLimit = 2000;

// Writes one JSON line per target to `out`; returns a summary.
inline json cmd_retrieve(const ExperimentConfig& cfg, const RetrieveOptions& opt, std::ostream& out) {
  auto data = prepare_data(cfg, true);
  TargetRetriever retriever(cfg, data, cfg.mode, cfg.K);
  Table targets = opt.targets_path ? encode_targets(load_table(cfg.resolve(*opt.targets_path).string(),
                                                               data.train.schema),
                                                    data)
                                   : data.test;
  const auto& pool = data.pools[data.test_pool];
  std::optional<oracle::ExhaustiveScorer> scorer;
  if (opt.oracle) {
    if (cfg.mode != RetrievalMode::bm25 && cfg.mode != RetrievalMode::filtered) {
      throw ConfigError("--oracle applies to bm25 and filtered retrieval only");
    }
    if (pool.size() > kOraclePoolLimit) {
      warn("--oracle skipped: pool has more than " + std::to_string(kOraclePoolLimit) + " rows");
    } else {
      scorer.emplace(pool, data.stop_fields, cfg.ranking);
    }
  }
  std::optional<std::size_t> filter_slot;
  if (cfg.mode == RetrievalMode::filtered) filter_slot = data.train.schema.feature_slot(*cfg.filter_field);

  std::size_t checked = 0;
  auto t0 = Clock::now();
  for (const auto& t : targets.samples) {
    auto set = retriever(t, data.test_pool);
    if (scorer) {
      auto want = scorer->topk(make_query(t), cfg.K, filter_slot);
      if (auto diff = oracle::compare(set, want)) {
        throw OracleMismatch("target " + std::to_string(t.sample_id) + ": " + *diff);
      }
      ++checked;
    }
    json nbs = json::array();
    for (const auto& n : set.neighbors) nbs.push_back({{"id", n.sample_id}, {"score", n.score}, {"label", n.label}});
    out << json{{"target", t.sample_id}, {"neighbors", nbs}}.dump() << '\n';
  }
  const double elapsed = seconds_since(t0);

  json summary = {{"command", "retrieve"},
                  {"targets", targets.size()},
                  {"mode", to_string(cfg.mode)},
                  {"K", cfg.K},
                  {"mean_query_seconds", targets.empty() ? 0.0 : elapsed / static_cast<double>(targets.size())},
                  {"oracle_checked", checked},
                  {"reproducibility", reproducibility(cfg, data)}};
  if (opt.cache_out) {
    auto prov = retriever.provenance();
    RetrievalCache cache(prov, data.train.num_features());
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      cache.insert(data.train.samples[i].sample_id, retriever.live(data.train.samples[i], data.train_pool[i]));
    }
    for (const auto& t : data.test.samples) cache.insert(t.sample_id, retriever.live(t, data.test_pool));
    save_cache(cache, cfg.resolve(*opt.cache_out).string());
    summary["cache"] = {{"path", *opt.cache_out}, {"entries", cache.size()}};
  }
  return summary;
}

struct TrainedRun {
  TrainResult result;
  json metrics;
  double retrieval_seconds = 0.0;
  double mean_query_seconds = 0.0;
  double train_seconds = 0.0;
};

inline TrainedRun run_training(const ExperimentConfig& cfg, const PreparedData& data, RetrievalMode mode,
                               std::size_t K, InteractionKind kind, bool use_labels) {
  TrainedRun run;
  TargetRetriever retriever(cfg, data, mode, K);
  auto t0 = Clock::now();
  auto train_sets = retriever.for_train();
  auto test_sets = retriever.for_test(&run.mean_query_seconds);
  run.retrieval_seconds = seconds_since(t0);

  auto mc = model_config(cfg, data, kind, use_labels, K);
  std::function<double(const ModelParams&)> eval;
  if (cfg.task == TaskKind::binary && !data.test.empty()) {
    eval = [&](const ModelParams& p) {
      auto recs = records_for(data.test, predict(p, data.test, test_sets));
      try {
        return metrics::auc(recs);
      } catch (const ValueError&) {
        return std::nan("");
      }
    };
  } else if (!data.test.empty()) {
    eval = [&](const ModelParams& p) { return metrics::rmse(records_for(data.test, predict(p, data.test, test_sets))); };
  }
  t0 = Clock::now();
  run.result = train(mc, cfg.train, data.train, train_sets, eval);
  run.train_seconds = seconds_since(t0);
  if (!data.test.empty()) {
    run.metrics = pointwise_metrics(cfg.task, records_for(data.test, predict(run.result.params, data.test, test_sets)));
  }
  return run;
}

inline json epoch_log_line(const EpochLog& e, TaskKind task) {
  json eval = json::object();
  if (e.eval_metric) eval[task == TaskKind::binary ? "auc" : "rmse"] = *e.eval_metric;
  return {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"eval", eval}};
}

inline json config_echo(const ExperimentConfig& cfg) { return cfg.raw; }

inline json cmd_train(const ExperimentConfig& cfg) {
  auto data = prepare_data(cfg, true);
  auto run = run_training(cfg, data, cfg.mode, cfg.K, cfg.interaction, cfg.use_labels);
  const auto dir = cfg.run_dir();
  fs::create_directories(dir);
  const auto ckpt = (dir / "model.rimmdl").string();
  const auto log_path = (dir / "train_log.jsonl").string();
  save_checkpoint(run.result.params, ckpt);
  std::ofstream log(log_path);
  for (const auto& e : run.result.log) log << epoch_log_line(e, cfg.task).dump() << '\n';
  return {{"command", "train"},
          {"config", config_echo(cfg)},
          {"dataset", dataset_stats(data)},
          {"timings",
           {{"index_build_seconds", data.index_build_seconds},
            {"retrieval_seconds", run.retrieval_seconds},
            {"mean_query_seconds", run.mean_query_seconds},
            {"train_seconds", run.train_seconds}}},
          {"metrics", run.metrics},
          {"checkpoint", ckpt},
          {"epoch_log", log_path},
          {"reproducibility", reproducibility(cfg, data)}};
}

inline json cmd_evaluate(const ExperimentConfig& cfg, std::optional<std::string> checkpoint = std::nullopt) {
  auto data = prepare_data(cfg, true);
  const auto ckpt = checkpoint ? cfg.resolve(*checkpoint).string() : (cfg.run_dir() / "model.rimmdl").string();
  const auto params = load_checkpoint(ckpt);
  if (params.config.num_fields != data.train.num_features() || params.config.vocab_size < data.vocab_size) {
    throw ConfigError("checkpoint " + ckpt + " does not match the dataset");
  }
  TargetRetriever retriever(cfg, data, cfg.mode, params.config.retrieval_size);
  double latency = 0.0;
  auto t0 = Clock::now();
  auto sets = retriever.for_test(&latency);
  const double retrieval_seconds = seconds_since(t0);
  auto preds = predict(params, data.test, sets);
  json m = pointwise_metrics(cfg.task, records_for(data.test, preds));
  if (cfg.ranking_eval) m["ranking"] = ranking_metrics(cfg, data, params, retriever);
  return {{"command", "evaluate"},
          {"config", config_echo(cfg)},
          {"dataset", dataset_stats(data)},
          {"metrics", m},
          {"n", data.test.size()},
          {"K", params.config.retrieval_size},
          {"seed", cfg.seed},
          {"checkpoint", ckpt},
          {"epoch_log", (cfg.run_dir() / "train_log.jsonl").string()},
          {"timings",
           {{"index_build_seconds", data.index_build_seconds},
            {"retrieval_seconds", retrieval_seconds},
            {"mean_query_seconds", latency}}},
          {"reproducibility", reproducibility(cfg, data)}};
}

// Trains one model per cell of modes x labels x interactions x K.
inline json cmd_ablate(const ExperimentConfig& cfg, std::ostream* progress = nullptr) {
  auto data = prepare_data(cfg, true);
  json rows = json::array();
  auto t0 = Clock::now();
  for (auto mode : cfg.ablate.modes) {
    for (bool labels : cfg.ablate.labels) {
      for (auto kind : cfg.ablate.interactions) {
        for (auto K : cfg.ablate.K) {
          if (mode == RetrievalMode::filtered && !cfg.filter_field) {
            throw ConfigError("ablation includes filtered retrieval but retrieval.filter_field is unset");
          }
          ExperimentConfig c = cfg;
          c.use_cache = false;
          auto run = run_training(c, data, mode, K, kind, labels);
          json row = {{"mode", to_string(mode)},
                      {"use_labels", labels},
                      {"interaction", to_string(kind)},
                      {"K", K},
                      {"metrics", run.metrics},
                      {"train_seconds", run.train_seconds}};
          if (progress) *progress << row.dump() << std::endl;
          rows.push_back(std::move(row));
        }
      }
    }
  }
  return {{"command", "ablate"},
          {"config", config_echo(cfg)},
          {"dataset", dataset_stats(data)},
          {"rows", rows},
          {"total_seconds", seconds_since(t0)},
          {"reproducibility", reproducibility(cfg, data)}};
}

}  // namespace rim
