#include <gtest/gtest.h>

#include <cmath>

#include "mica/adapter.hpp"
#include "mica/error.hpp"
#include "mica/toynet.hpp"
#include "support.hpp"

namespace mica {
namespace {

using test::max_fd_relative_error;
using test::random_matrix;

AdapterConfig config_for(bool mica, std::size_t r, double dropout, std::uint64_t seed) {
  AdapterConfig cfg;
  cfg.rank = r;
  cfg.dropout_p = dropout;
  if (mica) cfg.method = MicaMethod{SubspaceMode::minor()};
  else cfg.method = LoraGaussian{std::nullopt, seed};
  return cfg;
}

// Moves every trainable factor away from its init so that no gradient is
// structurally zero.
void perturb_trainables(ToyModel& model, std::uint64_t seed) {
  SplitMix64 gen(seed);
  for (const ParamRef& ref : trainable_params(model)) {
    for (double& v : ref.tensor->data()) v += 0.3 * gen.normal();
  }
}

// dense(d -> d, tanh) then attention(d, head) with an optional head.
ToyModel dense_then_attention(std::size_t d, std::size_t head, std::size_t classes, std::uint64_t seed) {
  SplitMix64 gen(seed);
  ToyModel m;
  m.blocks.emplace_back(make_dense(d, d, gen));
  m.blocks.emplace_back(make_attention(d, head, gen));
  if (classes) m.head = make_linear(d, classes, gen);
  return m;
}

TEST(Forward, ZeroWeightClassifierGivesLogK) {
  SplitMix64 gen(1);
  ToyModel m;
  m.blocks.emplace_back(make_dense(4, 4, gen));
  AdaptedLinear head = make_linear(4, 5, gen);
  head.w = Matrix(5, 4);
  m.head = head;
  Batch b{random_matrix(4, 3, 2), std::vector<std::size_t>{0, 3, 4}, 0};
  EXPECT_NEAR(forward(m, b, false, 0).loss, std::log(5.0), 1e-15);
}

TEST(Forward, RegressionOnOwnOutputsHasZeroLossAndGradient) {
  ToyModel m = dense_then_attention(6, 4, 0, 3);
  attach_adapters(m, config_for(true, 2, 0.0, 0));
  perturb_trainables(m, 4);
  const Matrix x = random_matrix(6, 5, 5);
  const Batch b{x, predict(m, x), 0};
  const ForwardResult fr = forward(m, b, false, 0);
  EXPECT_EQ(fr.loss, 0.0);
  for (const auto& [name, g] : backward(m, fr.cache)) EXPECT_EQ(g.frobenius_norm(), 0.0) << name;
}

TEST(Forward, FreshAdaptersMatchAdapterFreeModel) {
  for (bool mica : {true, false}) {
    ToyModel plain = dense_then_attention(6, 3, 4, 6);
    ToyModel adapted = plain;
    attach_adapters(adapted, config_for(mica, 2, 0.0, 1), {"fc", "q_proj", "v_proj"});
    const Matrix x = random_matrix(6, 7, 7);
    EXPECT_EQ(predict(adapted, x), predict(plain, x));
  }
}

TEST(Forward, NonFiniteActivationNamesTheLayer) {
  SplitMix64 gen(2);
  ToyModel m;
  m.blocks.emplace_back(make_dense(3, 3, gen, false));
  m.blocks.emplace_back(make_dense(3, 3, gen, false));
  std::get<DenseBlock>(m.blocks[1]).fc.w = Matrix(3, 3, 1e300);
  Batch b{Matrix(3, 2, 1e10), Matrix(3, 2), 0};
  try {
    forward(m, b, false, 0);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("1.fc"), std::string::npos) << e.what();
  }
}

TEST(Attention, SingleTokenPassesValuePath) {
  SplitMix64 gen(3);
  const AttentionBlock blk = make_attention(5, 3, gen);
  const Matrix x = random_matrix(5, 1, 4);
  const Matrix expected = matmul(blk.o_proj.w, matmul(blk.v_proj.w, x));
  EXPECT_LE(max_abs_diff(attention_forward(blk, x, 0, false, 0), expected), 1e-14);
}

TEST(Attention, ZeroInputGivesZeroOutputAndUniformWeights) {
  SplitMix64 gen(5);
  const AttentionBlock blk = make_attention(4, 2, gen, false);
  AttentionCache cache;
  EXPECT_EQ(attention_forward(blk, Matrix(4, 3), 0, false, 0, &cache), Matrix(4, 3));
  ASSERT_EQ(cache.probs.size(), 1u);
  for (double p : cache.probs[0].data()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(Attention, RowsSumToOneAndCausalMaskHolds) {
  SplitMix64 gen(6);
  const AttentionBlock blk = make_attention(6, 4, gen);
  const Matrix x = random_matrix(6, 8, 7, 3.0);
  AttentionCache cache;
  const Matrix y = attention_forward(blk, x, 4, false, 0, &cache);
  ASSERT_EQ(cache.probs.size(), 2u);
  for (const Matrix& p : cache.probs) {
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) {
        sum += p(i, j);
        if (j > i) EXPECT_EQ(p(i, j), 0.0);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
  // Perturbing token j of the first sequence leaves earlier positions and the
  // other sequence untouched.
  for (std::size_t j = 0; j < 4; ++j) {
    Matrix xp = x;
    for (std::size_t r = 0; r < 6; ++r) xp(r, j) += 1.0;
    const Matrix yp = attention_forward(blk, xp, 4, false, 0);
    for (std::size_t col = 0; col < 8; ++col) {
      const bool may_change = col >= j && col < 4;
      if (may_change) continue;
      for (std::size_t r = 0; r < 6; ++r) EXPECT_EQ(yp(r, col), y(r, col)) << "token " << j << " col " << col;
    }
  }
}

TEST(Backward, MicaGradSetExcludesFrozenTensors) {
  ToyModel m = dense_then_attention(6, 4, 3, 8);
  attach_adapters(m, config_for(true, 2, 0.05, 0), {"fc", "q_proj", "v_proj"});
  Batch b{random_matrix(6, 4, 9), std::vector<std::size_t>{0, 1, 2, 1}, 0};
  const GradSet g = backward(m, forward(m, b, true, 3).cache);
  std::set<std::string> names;
  for (const auto& [name, t] : g) names.insert(name);
  EXPECT_EQ(names, (std::set<std::string>{"0.fc.A", "1.q_proj.A", "1.v_proj.A"}));
}

TEST(Backward, LoraGradSetHasBothFactors) {
  ToyModel m = dense_then_attention(6, 4, 0, 8);
  attach_adapters(m, config_for(false, 2, 0.0, 4));
  Batch b{random_matrix(6, 4, 9), random_matrix(6, 4, 10), 0};
  const GradSet g = backward(m, forward(m, b, false, 0).cache);
  std::set<std::string> names;
  for (const auto& [name, t] : g) names.insert(name);
  EXPECT_EQ(names, (std::set<std::string>{"1.q_proj.A", "1.q_proj.B", "1.v_proj.A", "1.v_proj.B"}));
}

TEST(Backward, StaleCacheIsRejected) {
  ToyModel m = dense_then_attention(5, 3, 0, 9);
  attach_adapters(m, config_for(true, 2, 0.0, 0));
  Batch b{random_matrix(5, 3, 1), random_matrix(5, 3, 2), 0};
  const ForwardResult fr = forward(m, b, false, 0);
  trainable_params(m).front().tensor->data()[0] += 1.0;
  EXPECT_THROW(backward(m, fr.cache), ContractViolation);
}

struct GradCase {
  bool mica;
  bool classification;
  bool residual;
  double dropout;
};

TEST(Backward, MatchesFiniteDifferences) {
  const GradCase cases[] = {{true, false, false, 0.0}, {false, false, false, 0.0}, {true, true, false, 0.1},
                            {false, true, true, 0.1},  {true, false, true, 0.2}};
  std::uint64_t seed = 100;
  for (const GradCase& c : cases) {
    ToyModel m;
    SplitMix64 gen(seed);
    m.blocks.emplace_back(make_dense(8, 8, gen));
    AttentionBlock att = make_attention(8, 4, gen, true, c.residual);
    m.blocks.emplace_back(att);
    if (c.classification) m.head = make_linear(8, 3, gen);
    attach_adapters(m, config_for(c.mica, 2, c.dropout, seed), {"fc", "q_proj", "v_proj"});
    perturb_trainables(m, seed + 1);
    Batch b{random_matrix(8, 6, seed + 2), Matrix(), 3};
    if (c.classification) b.targets = std::vector<std::size_t>{0, 2, 1, 1, 0, 2};
    else b.targets = random_matrix(8, 6, seed + 3);
    EXPECT_LT(max_fd_relative_error(m, b, true, seed + 4), 1e-5) << "case seed " << seed;
    ++seed;
  }
}

TEST(AttachAdapters, DerivesDistinctSeedsPerLayer) {
  SplitMix64 gen(1);
  ToyModel m;
  m.blocks.emplace_back(make_attention(6, 6, gen));
  m.blocks.emplace_back(make_attention(6, 6, gen));
  attach_adapters(m, config_for(false, 2, 0.0, 7));
  const auto adapters = adapters_of(m);
  ASSERT_EQ(adapters.size(), 4u);
  EXPECT_NE(adapters.at("0.q_proj")->a, adapters.at("1.q_proj")->a);
  EXPECT_NE(adapters.at("0.q_proj")->a, adapters.at("0.v_proj")->a);
}

TEST(Hashes, FrozenHashIgnoresTrainables) {
  ToyModel m = dense_then_attention(5, 3, 2, 2);
  attach_adapters(m, config_for(true, 2, 0.0, 0));
  const auto frozen = frozen_hash(m);
  const auto trainable = trainable_hash(m);
  perturb_trainables(m, 3);
  EXPECT_EQ(frozen_hash(m), frozen);
  EXPECT_NE(trainable_hash(m), trainable);
}

}  // namespace
}  // namespace mica
