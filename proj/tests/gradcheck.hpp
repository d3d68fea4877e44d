#pragma once

// Central-difference gradient check for the prediction model.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "rim/model.hpp"

namespace rim::test {

struct GradCase {
  ModelParams params;
  std::vector<FeatureSlot> target;
  RetrievedSet neighbors;
  double y = 0.0;
  double lambda = 0.0;
};

// Small random instance: F=3 (field 1 multi-valued), d=4, K=2, two hidden layers.
inline GradCase make_grad_case(std::uint64_t seed, InteractionKind kind, TaskKind task, bool use_labels = true,
                               std::size_t K = 2) {
  ModelConfig c;
  c.num_fields = 3;
  c.vocab_size = 12;
  c.label_classes = 3;
  c.embedding_dim = 4;
  c.retrieval_size = K;
  c.interaction = kind;
  c.hidden = {6, 5};
  c.micro_hidden = {4, 3};
  c.task = task;
  c.use_labels = use_labels;
  GradCase g;
  g.params = init_params(c, seed);
  std::mt19937_64 rng(mix_seed(seed, 99));
  // Biases start at zero; perturb them so their gradients are exercised away from init.
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (const auto& b : g.params.layout.blocks) {
    if (!b.weight) {
      for (std::size_t i = 0; i < b.size(); ++i) g.params.values[b.offset + i] = u(rng);
    }
  }
  auto slots = [&] {
    std::vector<FeatureSlot> s(3);
    s[0] = {static_cast<FeatureId>(rng() % 4)};
    FeatureId a = 4 + static_cast<FeatureId>(rng() % 4), b = 4 + static_cast<FeatureId>(rng() % 4);
    s[1] = a == b ? FeatureSlot{a} : FeatureSlot{std::min(a, b), std::max(a, b)};
    s[2] = {8 + static_cast<FeatureId>(rng() % 4)};
    return s;
  };
  g.target = slots();
  for (std::size_t k = 0; k < K; ++k) {
    Neighbor n;
    n.sample_id = static_cast<SampleId>(10 + k);
    n.slots = slots();
    n.label_class = static_cast<std::int32_t>(rng() % 3);
    n.label = n.label_class;
    g.neighbors.neighbors.push_back(n);
  }
  g.y = task == TaskKind::binary ? static_cast<double>(rng() % 2) : u(rng) * 5.0;
  g.lambda = 1e-3;
  return g;
}

inline double objective(const GradCase& g, const ModelParams& p) {
  auto t = forward(p, g.target, g.neighbors);
  return loss(t.y_hat, g.y, p.config.task, g.lambda, p);
}

struct BlockError {
  double max_rel = 0.0;
  double max_abs_grad = 0.0;
};

// |a - n| / max(|a|, |n|, floor) per coordinate; max per block.
inline std::map<std::string, BlockError> gradient_errors(const GradCase& g, double h = 1e-5, double floor = 1e-6) {
  auto trace = forward(g.params, g.target, g.neighbors);
  auto analytic = backward(trace, g.params, g.y, g.lambda);
  std::map<std::string, BlockError> out;
  ModelParams p = g.params;
  for (const auto& b : g.params.layout.blocks) {
    auto& e = out[b.name];
    for (std::size_t i = 0; i < b.size(); ++i) {
      const std::size_t at = b.offset + i;
      const double orig = p.values[at];
      p.values[at] = orig + h;
      const double up = objective(g, p);
      p.values[at] = orig - h;
      const double down = objective(g, p);
      p.values[at] = orig;
      const double num = (up - down) / (2.0 * h);
      const double a = analytic.values[at];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      e.max_rel = std::max(e.max_rel, rel);
      e.max_abs_grad = std::max(e.max_abs_grad, std::abs(a));
    }
  }
  return out;
}

}  // namespace rim::test
