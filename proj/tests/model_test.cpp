#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bridgerec/model.hpp"

namespace br = bridgerec;
using br::Index;
using br::VectorR;

namespace {

br::ModelConfig small_config(Index conditions = 0) {
  br::ModelConfig c;
  c.num_items = 12;
  c.dim = 8;
  c.blocks = 2;
  c.heads = 2;
  c.max_len = 10;
  c.dropout = 0.2;
  c.num_conditions = conditions;
  return c;
}

}  // namespace

TEST(Encoder, OutputHasModelDimension) {
  br::Model m(small_config(), 1);
  for (std::size_t n : {1u, 3u, 10u, 14u}) {
    std::vector<Index> h(n, 2);
    EXPECT_EQ(m.encode(h).size(), 8);
  }
}

TEST(Encoder, EvalModeIsDeterministic) {
  br::Model m(small_config(), 1);
  const std::vector<Index> h = {1, 5, 7};
  EXPECT_EQ(m.encode(h), m.encode(h));
}

TEST(Encoder, EmptyHistoryIsContractError) {
  br::Model m(small_config(), 1);
  EXPECT_THROW(m.encode(std::vector<Index>{}), br::ContractError);
}

TEST(Encoder, OrderOfEarlierItemsMatters) {
  br::Model m(small_config(), 3);
  const std::vector<Index> a = {1, 2, 3, 4, 5};
  const std::vector<Index> b = {2, 1, 3, 4, 5};
  EXPECT_NE(m.encode(a), m.encode(b));
}

TEST(Encoder, ConditionalMatchesUnconditionalAtInit) {
  br::Model m(small_config(3), 5);
  const std::vector<Index> h = {4, 0, 11};
  for (Index c = 0; c < 3; ++c) EXPECT_EQ(m.encode_conditional(h, c), m.encode_unconditional(h));
  EXPECT_EQ(m.encode_unconditional(h), m.encode(h));
}

TEST(Encoder, OutOfRangeConditionIsContractError) {
  br::Model m(small_config(2), 5);
  const std::vector<Index> h = {1};
  EXPECT_THROW(m.encode_conditional(h, 2), br::ContractError);
  EXPECT_THROW(m.encode_conditional(h, -3), br::ContractError);
}

TEST(Connectivity, OutputDimensionAndDeterminism) {
  br::Model m(small_config(), 6);
  const VectorR x = VectorR::LinSpaced(8, -1, 1), x1 = VectorR::Ones(8);
  const VectorR a = m.predict_x0(x, 0.4, x1, 0.01);
  EXPECT_EQ(a.size(), 8);
  EXPECT_EQ(a, m.predict_x0(x, 0.4, x1, 0.01));
}

TEST(Connectivity, NonFiniteInputIsNumericError) {
  br::Model m(small_config(), 6);
  VectorR x = VectorR::Zero(8);
  x[3] = std::nan("");
  EXPECT_THROW(m.predict_x0(x, 0.5, VectorR::Zero(8), 1.0), br::NumericError);
}

TEST(TimeEmbedding, ZeroIsCosOnesSinZeros) {
  br::Model m(small_config(), 1);
  const VectorR e = m.time_embed(0.0);
  ASSERT_EQ(e.size(), 8);
  EXPECT_EQ(e.head(4), VectorR::Zero(4));
  EXPECT_EQ(e.tail(4), VectorR::Ones(4));
}

TEST(TimeEmbedding, GridPointsArePairwiseDistinct) {
  auto cfg = small_config();
  cfg.dim = 64;
  cfg.heads = 2;
  br::Model m(cfg, 1);
  for (int steps : {12, 32, 64}) {
    std::vector<VectorR> grid;
    for (int i = 0; i <= steps; ++i) grid.push_back(m.time_embed(1.0 - double(i) / steps));
    for (std::size_t i = 0; i < grid.size(); ++i) {
      for (std::size_t j = i + 1; j < grid.size(); ++j) {
        EXPECT_GT((grid[i] - grid[j]).norm(), 1e-6) << "steps " << steps << " i " << i << " j " << j;
      }
    }
  }
}

TEST(Scoring, OrthonormalRowRanksFirst) {
  auto cfg = small_config();
  cfg.num_items = 8;
  br::Model m(cfg, 1);
  m.parameter("item_embeddings").mutable_value() = br::MatrixR::Identity(8, 8);
  for (Index i = 0; i < 8; ++i) {
    const auto ranked = br::rank_items(m.score_candidates(VectorR::Unit(8, i)));
    EXPECT_EQ(ranked.front(), i);
  }
}

TEST(Scoring, TiesGoToLowerId) {
  VectorR s(4);
  s << 1.0, 3.0, 3.0, 0.5;
  EXPECT_EQ(br::rank_items(s), (std::vector<Index>{1, 2, 0, 3}));
}

TEST(Model, CloneIsIndependent) {
  br::Model m(small_config(), 1);
  br::Model c = m.clone();
  c.parameter("mlp.b3").mutable_value().setConstant(1.0);
  EXPECT_NE(m.parameter("mlp.b3").value(), c.parameter("mlp.b3").value());
}

TEST(Model, SameSeedSameParameters) {
  br::Model a(small_config(2), 42), b(small_config(2), 42);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].tensor.value(), b.parameters()[i].tensor.value());
  }
}
