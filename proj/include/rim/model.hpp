#pragma once

// Prediction module: shared embeddings for the target and its retrieved
// neighbors, target-aware attention over neighbor features and labels,
// pairwise interactions over [x_t, r, l], and an MLP whose output map also
// sees the aggregated label embedding directly. Gradients are hand-derived
// for this fixed architecture.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rim/common.hpp"
#include "rim/dataset.hpp"
#include "rim/retrieval.hpp"

namespace rim {

enum class TaskKind : std::uint8_t { binary = 0, regression = 1 };
enum class InteractionKind : std::uint8_t { inner = 0, kernel = 1, micro = 2 };

inline std::string_view to_string(TaskKind t) { return t == TaskKind::binary ? "binary" : "regression"; }
inline std::string_view to_string(InteractionKind k) {
  switch (k) {
    case InteractionKind::inner: return "inner";
    case InteractionKind::kernel: return "kernel";
    case InteractionKind::micro: return "micro";
  }
  return "?";
}
inline TaskKind parse_task(std::string_view s) {
  if (s == "binary") return TaskKind::binary;
  if (s == "regression") return TaskKind::regression;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}
inline InteractionKind parse_interaction(std::string_view s) {
  if (s == "inner") return InteractionKind::inner;
  if (s == "kernel") return InteractionKind::kernel;
  if (s == "micro") return InteractionKind::micro;
  throw ConfigError("unknown interaction kind '" + std::string(s) + "'");
}

inline constexpr double kProbEpsilon = 1e-12;

struct ModelConfig {
  std::size_t num_fields = 1;      // F
  std::size_t vocab_size = 1;      // V
  std::size_t label_classes = 2;   // L
  std::size_t embedding_dim = 8;   // d
  std::size_t retrieval_size = 10; // K, echoed in checkpoints
  InteractionKind interaction = InteractionKind::inner;
  std::vector<std::size_t> hidden = {200, 80};
  std::vector<std::size_t> micro_hidden = {40, 5};
  TaskKind task = TaskKind::binary;
  bool use_labels = true;

  std::size_t num_blocks() const { return 2 * num_fields + 1; }
  std::size_t num_pairs() const { return num_blocks() * (num_blocks() - 1) / 2; }
  std::size_t row_dim() const { return num_fields * embedding_dim; }
  std::size_t input_dim() const { return 2 * row_dim() + embedding_dim + num_pairs(); }

  void validate() const {
    if (num_fields == 0 || vocab_size == 0 || embedding_dim == 0) {
      throw ConfigError("model sizes must be positive");
    }
    if (label_classes < 2) throw ConfigError("model needs at least 2 label classes");
    for (auto w : hidden) {
      if (w == 0) throw ConfigError("MLP widths must be positive");
    }
    for (auto w : micro_hidden) {
      if (w == 0) throw ConfigError("micro-network widths must be positive");
    }
  }
  bool operator==(const ModelConfig&) const = default;
};

// A named, contiguous slice of the flat parameter vector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool weight = true;  // included in the L2 penalty (biases are not)

  std::size_t size() const { return rows * cols; }
};

// Block order is also the checkpoint order:
//   embedding V x d, label_embedding L x d, attention Fd x Fd,
//   [kernel d x d | micro layers (W, b)... micro_out (1 x h), micro_out_bias],
//   mlp layers (W_i h_i x in_i, b_i)..., output (1 x (h_M + d)), output_bias.
struct ParamLayout {
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;
  std::size_t embedding = 0, label_embedding = 0, attention = 0;
  std::optional<std::size_t> kernel;
  std::vector<std::size_t> micro_w, micro_b;  // includes the final scalar layer
  std::vector<std::size_t> mlp_w, mlp_b;
  std::size_t out_w = 0, out_b = 0;

  explicit ParamLayout(const ModelConfig& c = {}) {
    const std::size_t d = c.embedding_dim;
    embedding = add("embedding", c.vocab_size, d, true);
    label_embedding = add("label_embedding", c.label_classes, d, true);
    attention = add("attention", c.row_dim(), c.row_dim(), true);
    if (c.interaction == InteractionKind::kernel) kernel = add("kernel", d, d, true);
    if (c.interaction == InteractionKind::micro) {
      std::size_t in = 2 * d;
      for (std::size_t i = 0; i < c.micro_hidden.size(); ++i) {
        micro_w.push_back(add("micro_w" + std::to_string(i), c.micro_hidden[i], in, true));
        micro_b.push_back(add("micro_b" + std::to_string(i), c.micro_hidden[i], 1, false));
        in = c.micro_hidden[i];
      }
      micro_w.push_back(add("micro_out", 1, in, true));
      micro_b.push_back(add("micro_out_bias", 1, 1, false));
    }
    std::size_t in = c.input_dim();
    for (std::size_t i = 0; i < c.hidden.size(); ++i) {
      mlp_w.push_back(add("mlp_w" + std::to_string(i), c.hidden[i], in, true));
      mlp_b.push_back(add("mlp_b" + std::to_string(i), c.hidden[i], 1, false));
      in = c.hidden[i];
    }
    out_w = add("output", 1, in + d, true);
    out_b = add("output_bias", 1, 1, false);
  }

 private:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, bool weight) {
    blocks.push_back({std::move(name), total, rows, cols, weight});
    total += rows * cols;
    return blocks.size() - 1;
  }
};

// Parameters (or gradients, which share the layout).
struct ModelParams {
  ModelConfig config;
  ParamLayout layout;
  std::vector<double> values;

  ModelParams() = default;
  explicit ModelParams(ModelConfig c) : config(std::move(c)), layout(config), values(layout.total, 0.0) {}

  std::span<double> block(std::size_t b) {
    const auto& pb = layout.blocks[b];
    return {values.data() + pb.offset, pb.size()};
  }
  std::span<const double> block(std::size_t b) const {
    const auto& pb = layout.blocks[b];
    return {values.data() + pb.offset, pb.size()};
  }
  const double* row(std::size_t b, std::size_t r) const {
    const auto& pb = layout.blocks[b];
    return values.data() + pb.offset + r * pb.cols;
  }
  double* row(std::size_t b, std::size_t r) {
    const auto& pb = layout.blocks[b];
    return values.data() + pb.offset + r * pb.cols;
  }

  ModelParams zeros_like() const {
    ModelParams z;
    z.config = config;
    z.layout = layout;
    z.values.assign(values.size(), 0.0);
    return z;
  }

  bool operator==(const ModelParams& o) const { return config == o.config && values == o.values; }
};

// Embeddings in [-1/sqrt(d), 1/sqrt(d)], dense weights in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p(config);
  std::mt19937_64 rng(seed);
  for (std::size_t b = 0; b < p.layout.blocks.size(); ++b) {
    const auto& pb = p.layout.blocks[b];
    if (!pb.weight) continue;
    const bool is_embedding = b == p.layout.embedding || b == p.layout.label_embedding;
    const double fan_in = is_embedding ? static_cast<double>(config.embedding_dim) : static_cast<double>(pb.cols);
    std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (auto& v : p.block(b)) v = dist(rng);
  }
  return p;
}

struct ForwardTrace {
  std::vector<FeatureSlot> target_slots;
  std::vector<std::vector<FeatureSlot>> neighbor_slots;  // canonical (sorted id) order
  std::vector<std::int32_t> neighbor_labels;
  std::vector<double> x_t;                 // F*d
  std::vector<std::vector<double>> x_k;    // per neighbor, F*d
  std::vector<double> attn_query;          // W x_t
  std::vector<double> logits, alpha;
  std::vector<double> r, l;                // F*d, d
  std::vector<double> combined;            // (2F+1)*d
  std::vector<double> inter;               // one scalar per block pair
  std::vector<std::vector<double>> micro_pre;  // per pair, concatenated hidden pre-activations
  std::vector<double> inp;
  std::vector<std::vector<double>> hidden_pre, hidden_post;
  double logit = 0.0;
  double y_hat = 0.0;
};

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

inline void check_finite(std::span<const double> v, std::string_view stage) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("non-finite value in " + std::string(stage));
  }
}

inline void embed_into(const ModelParams& p, const std::vector<FeatureSlot>& slots, double* out) {
  const std::size_t d = p.config.embedding_dim;
  const std::size_t F = p.config.num_fields;
  if (slots.size() != F) throw DataError("sample has " + std::to_string(slots.size()) + " slots, model expects " + std::to_string(F));
  for (std::size_t f = 0; f < F; ++f) {
    double* blk = out + f * d;
    std::fill(blk, blk + d, 0.0);
    const auto& slot = slots[f];
    if (slot.empty()) continue;
    for (auto id : slot) {
      if (id >= p.config.vocab_size) {
        throw DataError("feature id " + std::to_string(id) + " out of range (V=" + std::to_string(p.config.vocab_size) + ")");
      }
      const double* e = p.row(p.layout.embedding, id);
      for (std::size_t j = 0; j < d; ++j) blk[j] += e[j];
    }
    if (slot.size() > 1) {
      const double inv = 1.0 / static_cast<double>(slot.size());
      for (std::size_t j = 0; j < d; ++j) blk[j] *= inv;
    }
  }
}

inline void scatter_embedding_grad(ModelParams& g, const std::vector<FeatureSlot>& slots, const double* grad,
                                   double scale) {
  const std::size_t d = g.config.embedding_dim;
  for (std::size_t f = 0; f < slots.size(); ++f) {
    const auto& slot = slots[f];
    if (slot.empty()) continue;
    const double w = scale / static_cast<double>(slot.size());
    for (auto id : slot) {
      double* e = g.row(g.layout.embedding, id);
      for (std::size_t j = 0; j < d; ++j) e[j] += w * grad[f * d + j];
    }
  }
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// out = W * in + bias, W row-major (rows x cols)
inline void affine(const double* W, const double* bias, const double* in, std::size_t rows, std::size_t cols,
                   double* out) {
  for (std::size_t r = 0; r < rows; ++r) out[r] = dot(W + r * cols, in, cols) + (bias ? bias[r] : 0.0);
}

// Accumulates dW += dout * in^T, db += dout, din += W^T dout.
inline void affine_backward(const double* W, const double* in, const double* dout, std::size_t rows,
                            std::size_t cols, double* dW, double* db, double* din) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dout[r];
    if (g == 0.0) continue;
    if (db) db[r] += g;
    double* dWr = dW + r * cols;
    const double* Wr = W + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      dWr[c] += g * in[c];
      if (din) din[c] += g * Wr[c];
    }
  }
}

}  // namespace detail

// Field embeddings concatenated in field order; multi-value slots mean-pool.
inline std::vector<double> embed_sample(const ModelParams& params, const std::vector<FeatureSlot>& slots) {
  std::vector<double> out(params.config.row_dim());
  detail::embed_into(params, slots, out.data());
  return out;
}

// Softmax over bilinear logits x_k^T W x_t (max-subtracted).
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - m));
  for (auto& v : out) v /= z;
  return out;
}

inline std::vector<double> attention_weights(const ModelParams& params, std::span<const double> x_t,
                                             const std::vector<std::vector<double>>& neighbors) {
  const std::size_t n = params.config.row_dim();
  std::vector<double> q(n);
  detail::affine(params.row(params.layout.attention, 0), nullptr, x_t.data(), n, n, q.data());
  std::vector<double> logits;
  logits.reserve(neighbors.size());
  for (const auto& x : neighbors) logits.push_back(detail::dot(x.data(), q.data(), n));
  return softmax(logits);
}

// One scalar per unordered block pair (p < q), lexicographic.
inline std::vector<double> interact(const ModelParams& params, std::span<const double> combined,
                                    std::vector<std::vector<double>>* micro_pre = nullptr) {
  const auto& c = params.config;
  const std::size_t d = c.embedding_dim;
  const std::size_t P = c.num_blocks();
  if (combined.size() != P * d) throw DataError("interaction input has wrong size");
  std::vector<double> out;
  out.reserve(c.num_pairs());
  std::vector<double> tmp(d), concat(2 * d);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t q = p + 1; q < P; ++q) {
      const double* ep = combined.data() + p * d;
      const double* eq = combined.data() + q * d;
      switch (c.interaction) {
        case InteractionKind::inner: out.push_back(detail::dot(ep, eq, d)); break;
        case InteractionKind::kernel:
          detail::affine(params.row(*params.layout.kernel, 0), nullptr, eq, d, d, tmp.data());
          out.push_back(detail::dot(ep, tmp.data(), d));
          break;
        case InteractionKind::micro: {
          std::copy(ep, ep + d, concat.begin());
          std::copy(eq, eq + d, concat.begin() + static_cast<std::ptrdiff_t>(d));
          std::vector<double> pre_all;
          std::vector<double> act = concat;
          const auto& L = params.layout;
          for (std::size_t i = 0; i + 1 < L.micro_w.size(); ++i) {
            const auto& pb = L.blocks[L.micro_w[i]];
            std::vector<double> pre(pb.rows);
            detail::affine(params.row(L.micro_w[i], 0), params.row(L.micro_b[i], 0), act.data(), pb.rows, pb.cols,
                           pre.data());
            pre_all.insert(pre_all.end(), pre.begin(), pre.end());
            act.resize(pb.rows);
            for (std::size_t j = 0; j < pb.rows; ++j) act[j] = std::max(0.0, pre[j]);
          }
          const auto& last = L.blocks[L.micro_w.back()];
          out.push_back(detail::dot(params.row(L.micro_w.back(), 0), act.data(), last.cols) +
                        params.row(L.micro_b.back(), 0)[0]);
          if (micro_pre) micro_pre->push_back(std::move(pre_all));
          break;
        }
      }
    }
  }
  return out;
}

// Full forward pass. Neighbors are processed in ascending sample-id order so
// the result does not depend on how the retrieved set is ordered.
inline ForwardTrace forward(const ModelParams& params, const std::vector<FeatureSlot>& target_slots,
                            const RetrievedSet& retrieved) {
  const auto& c = params.config;
  const std::size_t d = c.embedding_dim;
  const std::size_t n = c.row_dim();
  const auto& L = params.layout;
  ForwardTrace t;
  t.target_slots = target_slots;
  t.x_t = embed_sample(params, target_slots);

  std::vector<std::size_t> order(retrieved.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return retrieved.neighbors[a].sample_id < retrieved.neighbors[b].sample_id;
  });
  for (auto i : order) {
    const auto& nb = retrieved.neighbors[i];
    if (c.use_labels && (nb.label_class < 0 || static_cast<std::size_t>(nb.label_class) >= c.label_classes)) {
      throw DataError("neighbor label class " + std::to_string(nb.label_class) + " out of range (L=" +
                      std::to_string(c.label_classes) + ")");
    }
    t.neighbor_slots.push_back(nb.slots);
    t.neighbor_labels.push_back(nb.label_class);
    t.x_k.push_back(embed_sample(params, nb.slots));
  }

  t.attn_query.assign(n, 0.0);
  t.r.assign(n, 0.0);
  t.l.assign(d, 0.0);
  if (!t.x_k.empty()) {
    detail::affine(params.row(L.attention, 0), nullptr, t.x_t.data(), n, n, t.attn_query.data());
    for (const auto& x : t.x_k) t.logits.push_back(detail::dot(x.data(), t.attn_query.data(), n));
    t.alpha = softmax(t.logits);
    detail::check_finite(t.alpha, "attention");
    for (std::size_t k = 0; k < t.x_k.size(); ++k) {
      for (std::size_t j = 0; j < n; ++j) t.r[j] += t.alpha[k] * t.x_k[k][j];
      if (c.use_labels) {
        const double* lab = params.row(L.label_embedding, static_cast<std::size_t>(t.neighbor_labels[k]));
        for (std::size_t j = 0; j < d; ++j) t.l[j] += t.alpha[k] * lab[j];
      }
    }
  }

  t.combined.reserve(c.num_blocks() * d);
  t.combined.insert(t.combined.end(), t.x_t.begin(), t.x_t.end());
  t.combined.insert(t.combined.end(), t.r.begin(), t.r.end());
  t.combined.insert(t.combined.end(), t.l.begin(), t.l.end());
  t.inter = interact(params, t.combined, &t.micro_pre);
  detail::check_finite(t.inter, "interaction layer");

  t.inp = t.combined;
  t.inp.insert(t.inp.end(), t.inter.begin(), t.inter.end());

  const std::vector<double>* act = &t.inp;
  for (std::size_t i = 0; i < L.mlp_w.size(); ++i) {
    const auto& pb = L.blocks[L.mlp_w[i]];
    std::vector<double> pre(pb.rows), post(pb.rows);
    detail::affine(params.row(L.mlp_w[i], 0), params.row(L.mlp_b[i], 0), act->data(), pb.rows, pb.cols, pre.data());
    for (std::size_t j = 0; j < pb.rows; ++j) post[j] = std::max(0.0, pre[j]);
    detail::check_finite(pre, "MLP layer " + std::to_string(i + 1));
    t.hidden_pre.push_back(std::move(pre));
    t.hidden_post.push_back(std::move(post));
    act = &t.hidden_post.back();
  }
  const double* w_out = params.row(L.out_w, 0);
  const std::size_t h = act->size();
  t.logit = detail::dot(w_out, act->data(), h) + detail::dot(w_out + h, t.l.data(), d) + params.row(L.out_b, 0)[0];
  if (!std::isfinite(t.logit)) throw NumericError("non-finite value in output layer");
  t.y_hat = c.task == TaskKind::binary ? detail::sigmoid(t.logit) : t.logit;
  return t;
}

inline ForwardTrace forward(const ModelParams& params, const Sample& target, const RetrievedSet& retrieved) {
  return forward(params, target.slots, retrieved);
}

inline double data_loss(double y_hat, double y, TaskKind task) {
  if (task == TaskKind::binary) {
    const double p = std::clamp(y_hat, kProbEpsilon, 1.0 - kProbEpsilon);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return (y_hat - y) * (y_hat - y);
}

// Sum of squares over weight blocks (biases excluded).
inline double l2_penalty(const ModelParams& params) {
  double s = 0.0;
  for (std::size_t b = 0; b < params.layout.blocks.size(); ++b) {
    if (!params.layout.blocks[b].weight) continue;
    for (double v : params.block(b)) s += v * v;
  }
  return s;
}

inline double loss(double y_hat, double y, TaskKind task, double lambda, const ModelParams& params) {
  return data_loss(y_hat, y, task) + lambda * l2_penalty(params);
}

inline void add_l2_gradient(const ModelParams& params, double lambda, ModelParams& grads) {
  if (lambda == 0.0) return;
  for (std::size_t b = 0; b < params.layout.blocks.size(); ++b) {
    if (!params.layout.blocks[b].weight) continue;
    auto src = params.block(b);
    auto dst = grads.block(b);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += 2.0 * lambda * src[i];
  }
}

// Accumulates scale * d(data_loss)/d(params) into `grads`.
inline void accumulate_gradients(const ForwardTrace& t, const ModelParams& params, double y, double scale,
                                 ModelParams& grads) {
  const auto& c = params.config;
  const auto& L = params.layout;
  const std::size_t d = c.embedding_dim;
  const std::size_t n = c.row_dim();
  const std::size_t P = c.num_blocks();
  if (t.x_t.size() != n || t.inp.size() != c.input_dim() || t.hidden_pre.size() != L.mlp_w.size() ||
      grads.values.size() != params.values.size()) {
    throw DataError("forward trace does not match model parameters");
  }

  // dL/dlogit for sigmoid + cross-entropy and for squared error.
  const double dlogit =
      scale * (c.task == TaskKind::binary ? (t.y_hat - y) : 2.0 * (t.y_hat - y));

  // Output layer over [h_M, l].
  const std::vector<double>& h_last = t.hidden_post.empty() ? t.inp : t.hidden_post.back();
  const std::size_t h = h_last.size();
  const double* w_out = params.row(L.out_w, 0);
  double* gw_out = grads.row(L.out_w, 0);
  grads.row(L.out_b, 0)[0] += dlogit;
  std::vector<double> dh(h), dl(d, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    gw_out[j] += dlogit * h_last[j];
    dh[j] = dlogit * w_out[j];
  }
  for (std::size_t j = 0; j < d; ++j) {
    gw_out[h + j] += dlogit * t.l[j];
    dl[j] += dlogit * w_out[h + j];
  }

  // MLP.
  for (std::size_t i = L.mlp_w.size(); i-- > 0;) {
    const auto& pb = L.blocks[L.mlp_w[i]];
    std::vector<double> dpre(pb.rows);
    for (std::size_t j = 0; j < pb.rows; ++j) dpre[j] = t.hidden_pre[i][j] > 0.0 ? dh[j] : 0.0;
    const std::vector<double>& in = i == 0 ? t.inp : t.hidden_post[i - 1];
    std::vector<double> din(pb.cols, 0.0);
    detail::affine_backward(params.row(L.mlp_w[i], 0), in.data(), dpre.data(), pb.rows, pb.cols,
                            grads.row(L.mlp_w[i], 0), grads.row(L.mlp_b[i], 0), din.data());
    dh = std::move(din);
  }
  const std::vector<double> dinp = std::move(dh);  // w.r.t. inp

  // inp = [combined, inter]
  std::vector<double> dcomb(dinp.begin(), dinp.begin() + static_cast<std::ptrdiff_t>(P * d));
  const double* dinter = dinp.data() + P * d;
  std::size_t pair = 0;
  std::vector<double> tmp(d);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t q = p + 1; q < P; ++q, ++pair) {
      const double g = dinter[pair];
      if (g == 0.0) continue;
      const double* ep = t.combined.data() + p * d;
      const double* eq = t.combined.data() + q * d;
      double* gp = dcomb.data() + p * d;
      double* gq = dcomb.data() + q * d;
      switch (c.interaction) {
        case InteractionKind::inner:
          for (std::size_t j = 0; j < d; ++j) {
            gp[j] += g * eq[j];
            gq[j] += g * ep[j];
          }
          break;
        case InteractionKind::kernel: {
          const double* K = params.row(*L.kernel, 0);
          double* gK = grads.row(*L.kernel, 0);
          for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) {
              gK[a * d + b] += g * ep[a] * eq[b];
              gp[a] += g * K[a * d + b] * eq[b];
              gq[b] += g * K[a * d + b] * ep[a];
            }
          }
          break;
        }
        case InteractionKind::micro: {
          const auto& pre_all = t.micro_pre[pair];
          const std::size_t layers = L.micro_w.size() - 1;
          // Rebuild per-layer inputs from the stored pre-activations.
          std::vector<std::vector<double>> acts(layers + 1);
          acts[0].assign(ep, ep + d);
          acts[0].insert(acts[0].end(), eq, eq + d);
          std::size_t off = 0;
          for (std::size_t i = 0; i < layers; ++i) {
            const auto rows = L.blocks[L.micro_w[i]].rows;
            acts[i + 1].resize(rows);
            for (std::size_t j = 0; j < rows; ++j) acts[i + 1][j] = std::max(0.0, pre_all[off + j]);
            off += rows;
          }
          const auto& last = L.blocks[L.micro_w.back()];
          std::vector<double> da(last.cols, 0.0);
          grads.row(L.micro_b.back(), 0)[0] += g;
          detail::affine_backward(params.row(L.micro_w.back(), 0), acts[layers].data(), &g, 1, last.cols,
                                  grads.row(L.micro_w.back(), 0), nullptr, da.data());
          for (std::size_t i = layers; i-- > 0;) {
            const auto& pb = L.blocks[L.micro_w[i]];
            off -= pb.rows;
            std::vector<double> dpre(pb.rows);
            for (std::size_t j = 0; j < pb.rows; ++j) dpre[j] = pre_all[off + j] > 0.0 ? da[j] : 0.0;
            std::vector<double> din(pb.cols, 0.0);
            detail::affine_backward(params.row(L.micro_w[i], 0), acts[i].data(), dpre.data(), pb.rows, pb.cols,
                                    grads.row(L.micro_w[i], 0), grads.row(L.micro_b[i], 0), din.data());
            da = std::move(din);
          }
          for (std::size_t j = 0; j < d; ++j) {
            gp[j] += da[j];
            gq[j] += da[d + j];
          }
          break;
        }
      }
    }
  }

  // combined = [x_t, r, l]
  std::vector<double> dx_t(dcomb.begin(), dcomb.begin() + static_cast<std::ptrdiff_t>(n));
  const double* dr = dcomb.data() + n;
  for (std::size_t j = 0; j < d; ++j) dl[j] += dcomb[2 * n + j];

  const std::size_t K = t.x_k.size();
  if (K > 0) {
    // r = sum a_k x_k, l = sum a_k Lambda[y_k]
    std::vector<double> dalpha(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      dalpha[k] = detail::dot(dr, t.x_k[k].data(), n);
      if (c.use_labels) {
        const auto y_k = static_cast<std::size_t>(t.neighbor_labels[k]);
        const double* lab = params.row(L.label_embedding, y_k);
        dalpha[k] += detail::dot(dl.data(), lab, d);
        double* glab = grads.row(L.label_embedding, y_k);
        for (std::size_t j = 0; j < d; ++j) glab[j] += t.alpha[k] * dl[j];
      }
    }
    // softmax
    double mean = 0.0;
    for (std::size_t k = 0; k < K; ++k) mean += t.alpha[k] * dalpha[k];
    std::vector<double> dq(n, 0.0), dx_k(n);
    for (std::size_t k = 0; k < K; ++k) {
      const double dlog = t.alpha[k] * (dalpha[k] - mean);
      for (std::size_t j = 0; j < n; ++j) {
        dx_k[j] = t.alpha[k] * dr[j] + dlog * t.attn_query[j];
        dq[j] += dlog * t.x_k[k][j];
      }
      detail::scatter_embedding_grad(grads, t.neighbor_slots[k], dx_k.data(), 1.0);
    }
    // q = W x_t
    detail::affine_backward(params.row(L.attention, 0), t.x_t.data(), dq.data(), n, n, grads.row(L.attention, 0),
                            nullptr, dx_t.data());
  }
  detail::scatter_embedding_grad(grads, t.target_slots, dx_t.data(), 1.0);
}

// Gradient of the per-sample loss (data term + L2) for one trace.
inline ModelParams backward(const ForwardTrace& trace, const ModelParams& params, double y, double lambda) {
  ModelParams g = params.zeros_like();
  accumulate_gradients(trace, params, y, 1.0, g);
  add_l2_gradient(params, lambda, g);
  return g;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t t = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  bool operator==(const AdamState&) const = default;
};

inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.values.size() != params.values.size() || state.m.size() != params.values.size()) {
    throw DataError("adam: shape mismatch");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const double g = grads.values[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params.values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

struct TrainConfig {
  AdamConfig adam;
  double l2 = 1e-4;
  std::size_t batch_size = 100;
  std::size_t epochs = 5;
  std::uint64_t seed = 42;

  void validate() const {
    if (batch_size == 0 || epochs == 0) throw ConfigError("batch size and epochs must be positive");
    if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (l2 < 0.0) throw ConfigError("l2 weight must be >= 0");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> eval_metric;  // filled by an optional callback
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

// Target value used by the loss: the 0/1 label or the raw regression label.
inline double loss_target(const Sample& s) { return s.label; }

// Minibatch Adam over `train`; `neighbors[i]` is the retrieved set for
// train.samples[i]. Deterministic given the seed.
inline TrainResult train(const ModelConfig& model_config, const TrainConfig& cfg, const Table& train_table,
                         std::span<const RetrievedSet> neighbors,
                         const std::function<double(const ModelParams&)>& epoch_eval = {}) {
  cfg.validate();
  if (train_table.empty()) throw DataError("training set is empty");
  if (neighbors.size() != train_table.size()) throw DataError("need one retrieved set per training sample");
  TrainResult result{init_params(model_config, mix_seed(cfg.seed, 1)), {}};
  auto& params = result.params;
  AdamState state(params.values.size());
  ModelParams grads = params.zeros_like();
  std::mt19937_64 rng(mix_seed(cfg.seed, 2));
  std::vector<std::size_t> order(train_table.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grads.values.begin(), grads.values.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = train_table.samples[order[i]];
        auto trace = forward(params, s, neighbors[order[i]]);
        const double y = loss_target(s);
        batch_loss += data_loss(trace.y_hat, y, model_config.task);
        accumulate_gradients(trace, params, y, scale, grads);
      }
      batch_loss = batch_loss * scale + cfg.l2 * l2_penalty(params);
      add_l2_gradient(params, cfg.l2, grads);
      adam_step(params, grads, state, cfg.adam);
      loss_sum += batch_loss;
      ++batches;
    }
    if (!std::isfinite(loss_sum)) throw NumericError("training loss diverged in epoch " + std::to_string(epoch));
    EpochLog entry{epoch, loss_sum / static_cast<double>(batches), std::nullopt};
    if (epoch_eval) entry.eval_metric = epoch_eval(params);
    result.log.push_back(entry);
  }
  return result;
}

inline std::vector<double> predict(const ModelParams& params, const Table& targets,
                                   std::span<const RetrievedSet> neighbors) {
  if (neighbors.size() != targets.size()) throw DataError("need one retrieved set per target");
  std::vector<double> out;
  out.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) out.push_back(forward(params, targets.samples[i], neighbors[i]).y_hat);
  return out;
}

inline constexpr std::string_view kCheckpointMagic = "RIMMDL";
inline constexpr std::uint8_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "RIMMDL" u8:version
//   u32:F u32:d u32:L u32:K u64:V u8:interaction u8:task u8:use_labels
//   u32:n_hidden u32[n_hidden] u32:n_micro u32[n_micro] u64:n_params
//   f64[n_params] in ParamLayout block order
inline void write_checkpoint(std::ostream& os, const ModelParams& p) {
  const auto& c = p.config;
  io::write_header(os, kCheckpointMagic, kCheckpointVersion);
  io::write<std::uint32_t>(os, static_cast<std::uint32_t>(c.num_fields));
  io::write<std::uint32_t>(os, static_cast<std::uint32_t>(c.embedding_dim));
  io::write<std::uint32_t>(os, static_cast<std::uint32_t>(c.label_classes));
  io::write<std::uint32_t>(os, static_cast<std::uint32_t>(c.retrieval_size));
  io::write<std::uint64_t>(os, c.vocab_size);
  io::write<std::uint8_t>(os, static_cast<std::uint8_t>(c.interaction));
  io::write<std::uint8_t>(os, static_cast<std::uint8_t>(c.task));
  io::write<std::uint8_t>(os, c.use_labels ? 1 : 0);
  io::write<std::uint32_t>(os, static_cast<std::uint32_t>(c.hidden.size()));
  for (auto w : c.hidden) io::write<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  io::write<std::uint32_t>(os, static_cast<std::uint32_t>(c.micro_hidden.size()));
  for (auto w : c.micro_hidden) io::write<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  io::write<std::uint64_t>(os, p.values.size());
  for (double v : p.values) io::write<double>(os, v);
}

inline ModelParams read_checkpoint(std::istream& is) {
  io::expect_header(is, kCheckpointMagic, kCheckpointVersion);
  ModelConfig c;
  c.num_fields = io::read<std::uint32_t>(is, "F");
  c.embedding_dim = io::read<std::uint32_t>(is, "d");
  c.label_classes = io::read<std::uint32_t>(is, "L");
  c.retrieval_size = io::read<std::uint32_t>(is, "K");
  c.vocab_size = io::read<std::uint64_t>(is, "V");
  auto kind = io::read<std::uint8_t>(is, "interaction");
  auto task = io::read<std::uint8_t>(is, "task");
  if (kind > 2 || task > 1) throw FormatError("checkpoint: unknown interaction or task tag");
  c.interaction = static_cast<InteractionKind>(kind);
  c.task = static_cast<TaskKind>(task);
  c.use_labels = io::read<std::uint8_t>(is, "use_labels") != 0;
  c.hidden.resize(io::read<std::uint32_t>(is, "hidden count"));
  for (auto& w : c.hidden) w = io::read<std::uint32_t>(is, "hidden width");
  c.micro_hidden.resize(io::read<std::uint32_t>(is, "micro count"));
  for (auto& w : c.micro_hidden) w = io::read<std::uint32_t>(is, "micro width");
  c.validate();
  ModelParams p(c);
  auto n = io::read<std::uint64_t>(is, "parameter count");
  if (n != p.values.size()) throw CorruptionError("checkpoint: parameter count does not match config");
  for (auto& v : p.values) v = io::read<double>(is, "parameter");
  io::expect_eof(is, "checkpoint");
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_checkpoint(out, p);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace rim
