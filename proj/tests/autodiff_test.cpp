#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bridgerec/model.hpp"
#include "bridgerec/verify.hpp"

namespace br = bridgerec;
using br::MatrixR;
using br::Tape;
using br::Tensor;

namespace {

MatrixR mat(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixR m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape tape;
  const MatrixR m = mat({{1.5, -2}, {0.25, 4}});
  auto out = br::ad::matmul(tape, Tensor::constant(MatrixR::Identity(2, 2)), Tensor::constant(m));
  EXPECT_EQ(out.value(), m);
}

TEST(Matmul, HandSum) {
  Tape tape;
  auto out = br::ad::matmul(tape, Tensor::constant(mat({{1, 2}, {3, 4}})),
                            Tensor::constant(mat({{1}, {1}})));
  EXPECT_EQ(out.value(), mat({{3}, {7}}));
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  Tape tape;
  EXPECT_THROW(br::ad::matmul(tape, Tensor::constant(MatrixR::Ones(2, 3)),
                              Tensor::constant(MatrixR::Ones(2, 3))),
               br::DimensionError);
}

TEST(Elementwise, AddZeroAndMulOneAreIdentities) {
  Tape tape;
  const MatrixR x = mat({{1, -2, 3}});
  auto a = Tensor::constant(x);
  EXPECT_EQ(br::ad::add(tape, a, Tensor::constant(MatrixR::Zero(1, 3))).value(), x);
  EXPECT_EQ(br::ad::mul(tape, a, Tensor::constant(MatrixR::Ones(1, 3))).value(), x);
}

TEST(Elementwise, IncompatibleShapesThrow) {
  Tape tape;
  EXPECT_THROW(br::ad::add(tape, Tensor::constant(MatrixR::Ones(2, 3)),
                           Tensor::constant(MatrixR::Ones(3, 2))),
               br::DimensionError);
}

TEST(Elementwise, PowerRuleAtThree) {
  Tape tape;
  auto x = Tensor::parameter(mat({{3}}));
  auto y = br::ad::mul(tape, x, x);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
}

TEST(Nonlinear, SoftmaxOfEqualRowIsUniform) {
  Tape tape;
  auto y = br::ad::softmax(tape, Tensor::constant(MatrixR::Constant(2, 4, 0.7)));
  for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y.value().data()[i], 0.25);
}

TEST(Nonlinear, SoftmaxRowsSumToOne) {
  Tape tape;
  const MatrixR x = MatrixR::Random(6, 9) * 30.0;
  auto y = br::ad::softmax(tape, Tensor::constant(x));
  for (Eigen::Index i = 0; i < 6; ++i) EXPECT_NEAR(y.value().row(i).sum(), 1.0, 1e-12);
}

TEST(Nonlinear, InvalidAxisThrows) {
  Tape tape;
  EXPECT_THROW(br::ad::softmax(tape, Tensor::constant(MatrixR::Ones(2, 2)), 2),
               br::DimensionError);
  EXPECT_THROW(br::ad::layernorm(tape, Tensor::constant(MatrixR::Ones(2, 2)), 3),
               br::DimensionError);
}

TEST(Nonlinear, DropoutRateZeroIsIdentity) {
  Tape tape;
  br::Rng rng(5);
  const MatrixR x = MatrixR::Random(3, 4);
  EXPECT_EQ(br::ad::dropout(tape, Tensor::constant(x), 0.0, rng, true).value(), x);
}

TEST(Nonlinear, DropoutIsReproducibleForASeed) {
  const MatrixR x = MatrixR::Ones(8, 8);
  Tape t1, t2;
  br::Rng r1(9), r2(9);
  EXPECT_EQ(br::ad::dropout(t1, Tensor::constant(x), 0.5, r1, true).value(),
            br::ad::dropout(t2, Tensor::constant(x), 0.5, r2, true).value());
}

TEST(Nonlinear, LayernormGradientMatchesFiniteDifferences) {
  br::Rng rng(3);
  MatrixR v(3, 5);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng.normal();
  auto x = Tensor::parameter(v);
  MatrixR w(3, 5);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  const double err = br::verify::gradient_error(
      [&](Tape& tape) {
        return br::ad::sum(tape, br::ad::mul(tape, br::ad::layernorm(tape, x), Tensor::constant(w)));
      },
      {x});
  EXPECT_LT(err, 1e-4);
}

TEST(GatherRows, FirstRow) {
  Tape tape;
  const MatrixR table = mat({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<br::Index> ids = {0};
  EXPECT_EQ(br::ad::gather_rows(tape, Tensor::constant(table), ids).value(), mat({{1, 2}}));
}

TEST(GatherRows, RepeatedIdsAccumulateGradient) {
  Tape tape;
  auto table = Tensor::parameter(MatrixR::Zero(3, 2));
  const std::vector<br::Index> ids = {2, 2, 0};
  tape.backward(br::ad::sum(tape, br::ad::gather_rows(tape, table, ids)));
  EXPECT_EQ(table.grad(), mat({{1, 1}, {0, 0}, {2, 2}}));
}

TEST(GatherRows, OutOfRangeIsIndexError) {
  Tape tape;
  const std::vector<br::Index> ids = {3};
  EXPECT_THROW(br::ad::gather_rows(tape, Tensor::constant(MatrixR::Ones(3, 2)), ids),
               br::IndexError);
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  auto x = Tensor::parameter(MatrixR::Random(2, 3));
  tape.backward(br::ad::sum(tape, x));
  EXPECT_EQ(x.grad(), MatrixR::Ones(2, 3));
}

TEST(Backward, HalfSumOfSquaresGivesX) {
  Tape tape;
  const MatrixR v = mat({{1, -2}, {0.5, 3}});
  auto x = Tensor::parameter(v);
  tape.backward(br::ad::mul(tape, br::ad::sum(tape, br::ad::mul(tape, x, x)), 0.5));
  EXPECT_EQ(x.grad(), v);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  auto x = Tensor::parameter(MatrixR::Ones(2, 2));
  auto y = br::ad::mul(tape, x, 2.0);
  EXPECT_THROW(tape.backward(y), br::ContractError);
}

TEST(Backward, SecondCallWithoutResetIsRejected) {
  Tape tape;
  auto x = Tensor::parameter(MatrixR::Ones(2, 2));
  auto loss = br::ad::sum(tape, x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), br::ContractError);
}

TEST(Backward, LossFromAnotherTapeIsRejected) {
  Tape a, b;
  auto x = Tensor::parameter(MatrixR::Ones(2, 2));
  auto loss = br::ad::sum(a, x);
  EXPECT_THROW(b.backward(loss), br::ContractError);
}

TEST(Backward, NoGradTapeRecordsNothing) {
  Tape tape(false);
  auto x = Tensor::parameter(MatrixR::Ones(2, 2));
  auto y = br::ad::sum(tape, br::ad::mul(tape, x, x));
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_DOUBLE_EQ(y.item(), 4.0);
}

TEST(Gradients, EveryOpWithinTolerance) {
  for (const auto& c : br::verify::op_gradient_errors(3, 101)) {
    EXPECT_LT(c.worst, 1e-4) << c.op;
  }
}

TEST(Gradients, CompositeModelWithinTolerance) {
  EXPECT_LT(br::verify::composite_gradient_error(3, 103), 1e-3);
}

TEST(Gradients, RandomMatmulWithinTolerance) {
  br::Rng rng(17);
  MatrixR av(5, 4), bv(4, 3);
  for (Eigen::Index i = 0; i < av.size(); ++i) av.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < bv.size(); ++i) bv.data()[i] = rng.normal();
  auto a = Tensor::parameter(av);
  auto b = Tensor::parameter(bv);
  const MatrixR w = MatrixR::Random(5, 3);
  const double err = br::verify::gradient_error(
      [&](Tape& tape) {
        return br::ad::sum(tape, br::ad::mul(tape, br::ad::matmul(tape, a, b), Tensor::constant(w)));
      },
      {a, b});
  EXPECT_LT(err, 1e-4);
}

TEST(Attention, LaterTokensDoNotAffectEarlierOutputs) {
  br::Rng rng(4);
  MatrixR q(4, 4), k(4, 4), v(4, 4);
  for (auto* m : {&q, &k, &v}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.normal();
  }
  const std::vector<br::ad::Segment> seg = {{0, 4}};
  Tape t1;
  auto before = br::ad::causal_attention(t1, Tensor::constant(q), Tensor::constant(k),
                                         Tensor::constant(v), seg, 2);
  k.row(3).setConstant(9.0);
  v.row(3).setConstant(-9.0);
  Tape t2;
  auto after = br::ad::causal_attention(t2, Tensor::constant(q), Tensor::constant(k),
                                        Tensor::constant(v), seg, 2);
  EXPECT_EQ(before.value().topRows(3), after.value().topRows(3));
  EXPECT_NE(before.value().row(3), after.value().row(3));
}
