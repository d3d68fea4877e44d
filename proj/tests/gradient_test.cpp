#include <gtest/gtest.h>

#include <set>

#include "gradcheck.hpp"

using namespace rim;
using rim::test::gradient_errors;
using rim::test::make_grad_case;

namespace {

struct Variant {
  InteractionKind kind;
  TaskKind task;
  bool labels;
};

class GradientCheck : public ::testing::TestWithParam<Variant> {};

}  // namespace

TEST_P(GradientCheck, EveryBlockMatchesCentralDifferences) {
  const auto v = GetParam();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto g = make_grad_case(seed, v.kind, v.task, v.labels);
    for (const auto& [name, e] : gradient_errors(g)) {
      EXPECT_LT(e.max_rel, 1e-4) << "block " << name << " seed " << seed;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, GradientCheck,
                         ::testing::Values(Variant{InteractionKind::inner, TaskKind::binary, true},
                                           Variant{InteractionKind::kernel, TaskKind::binary, true},
                                           Variant{InteractionKind::micro, TaskKind::binary, true},
                                           Variant{InteractionKind::inner, TaskKind::regression, true},
                                           Variant{InteractionKind::kernel, TaskKind::regression, true},
                                           Variant{InteractionKind::micro, TaskKind::regression, true},
                                           Variant{InteractionKind::inner, TaskKind::binary, false}),
                         [](const auto& info) {
                           return std::string(to_string(info.param.kind)) + "_" +
                                  std::string(to_string(info.param.task)) + (info.param.labels ? "" : "_nolabel");
                         });

TEST(Gradient, BlocksAreExercised) {
  auto g = make_grad_case(3, InteractionKind::micro, TaskKind::binary);
  for (const auto& [name, e] : gradient_errors(g)) EXPECT_GT(e.max_abs_grad, 0.0) << name;
}

TEST(Gradient, SingleNeighborHasNoAttentionGradient) {
  auto g = make_grad_case(2, InteractionKind::inner, TaskKind::binary, true, 1);
  g.lambda = 0.0;
  auto t = forward(g.params, g.target, g.neighbors);
  auto grad = backward(t, g.params, g.y, 0.0);
  for (double v : grad.block(grad.layout.attention)) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, EmptyRetrievalMatchesFiniteDifferences) {
  auto g = make_grad_case(4, InteractionKind::kernel, TaskKind::binary, true, 0);
  for (const auto& [name, e] : gradient_errors(g)) EXPECT_LT(e.max_rel, 1e-4) << name;
}

TEST(Gradient, UntouchedEmbeddingRowsAreZero) {
  auto g = make_grad_case(5, InteractionKind::inner, TaskKind::binary);
  g.lambda = 0.0;
  auto t = forward(g.params, g.target, g.neighbors);
  auto grad = backward(t, g.params, g.y, 0.0);
  std::set<FeatureId> touched;
  for (const auto& s : g.target) touched.insert(s.begin(), s.end());
  for (const auto& n : g.neighbors.neighbors) {
    for (const auto& s : n.slots) touched.insert(s.begin(), s.end());
  }
  for (FeatureId id = 0; id < g.params.config.vocab_size; ++id) {
    if (touched.count(id)) continue;
    const double* row = grad.row(grad.layout.embedding, id);
    for (std::size_t j = 0; j < g.params.config.embedding_dim; ++j) EXPECT_EQ(row[j], 0.0);
  }
}

TEST(Gradient, LabelPathDisabledLeavesLabelEmbeddingUntouched) {
  auto g = make_grad_case(6, InteractionKind::inner, TaskKind::binary, false);
  g.lambda = 0.0;
  auto t = forward(g.params, g.target, g.neighbors);
  for (double v : t.l) EXPECT_EQ(v, 0.0);
  auto grad = backward(t, g.params, g.y, 0.0);
  for (double v : grad.block(grad.layout.label_embedding)) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, L2TermIsTwoLambdaTheta) {
  auto g = make_grad_case(7, InteractionKind::inner, TaskKind::regression);
  auto t = forward(g.params, g.target, g.neighbors);
  auto without = backward(t, g.params, g.y, 0.0);
  auto with = backward(t, g.params, g.y, 0.25);
  for (const auto& b : g.params.layout.blocks) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      const std::size_t at = b.offset + i;
      const double expect = b.weight ? 2.0 * 0.25 * g.params.values[at] : 0.0;
      EXPECT_NEAR(with.values[at] - without.values[at], expect, 1e-12) << b.name;
    }
  }
}

TEST(Gradient, ShapeMismatchIsError) {
  auto g = make_grad_case(1, InteractionKind::inner, TaskKind::binary);
  auto t = forward(g.params, g.target, g.neighbors);
  auto other = make_grad_case(1, InteractionKind::kernel, TaskKind::binary);
  auto grads = other.params.zeros_like();
  EXPECT_THROW(accumulate_gradients(t, g.params, g.y, 1.0, grads), DataError);
}
