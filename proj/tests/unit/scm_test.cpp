#include <gtest/gtest.h>

#include <sstream>

#include "cgdp/checkpoint.hpp"
#include "cgdp/discovery.hpp"
#include "cgdp/scm.hpp"
#include "fixtures.hpp"

namespace cgdp {
namespace {

GroundTruthScm tiny_scm() {
  GroundTruthScm scm;
  scm.n = 2;
  scm.d = 2;
  scm.f_s = Matrix(2, 2);
  scm.f_s << 0.5, 0.1, 0.0, 0.8;
  scm.f_a = Matrix(2, 2);
  scm.f_a << 1.0, 0.0, -0.5, 0.0;
  scm.b_s = Vector(2);
  scm.b_s << 1.0, 0.0;
  scm.b_a = Vector(2);
  scm.b_a << 0.3, 0.0;
  scm.sigma_phi = Matrix::Zero(2, 2);
  scm.sigma_omega = 0.0;
  return scm;
}

TEST(GenerateDataset, NoiselessFollowsRecursionExactly) {
  const GroundTruthScm scm = tiny_scm();
  Rng rng(4);
  const Dataset data = generate_dataset(scm, 3, 20, 0.0, rng);
  ASSERT_EQ(data.size(), 60u);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Transition& t = data[i];
    const Vector expect_next = scm.f_s * t.s + scm.f_a * t.a;
    EXPECT_EQ(t.s_next, expect_next);
    EXPECT_EQ(t.r, scm.b_s.dot(t.s_next) + scm.b_a.dot(t.a));
    if (i % 20 != 19) {
      EXPECT_FALSE(t.done);
      EXPECT_EQ(data[i + 1].s, t.s_next);
    } else {
      EXPECT_TRUE(t.done);
    }
  }
}

TEST(GenerateDataset, Deterministic) {
  Rng a(9);
  Rng b(9);
  Rng src(1);
  const GroundTruthScm scm = testing::random_scm(3, 2, src);
  const Dataset x = generate_dataset(scm, 5, 10, 0.5, a);
  const Dataset y = generate_dataset(scm, 5, 10, 0.5, b);
  ASSERT_EQ(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].s, y[i].s);
    EXPECT_EQ(x[i].a, y[i].a);
    EXPECT_EQ(x[i].r, y[i].r);
    EXPECT_EQ(x[i].s_next, y[i].s_next);
  }
}

Matrix design(const Dataset& data, int n, int d) {
  Matrix x(data.size(), n + d);
  for (std::size_t i = 0; i < data.size(); ++i) {
    x.row(i).head(n) = data[i].s.transpose();
    x.row(i).tail(d) = data[i].a.transpose();
  }
  return x;
}

TEST(GenerateDataset, ZeroActionColumnHasNoPartialEffect) {
  Rng src(2);
  GroundTruthScm scm = testing::random_scm(3, 3, src);
  scm.f_a.col(1).setZero();
  Rng rng(3);
  const Dataset data = generate_dataset(scm, 200, 50, 0.5, rng);
  ASSERT_EQ(data.size(), 10000u);
  const Matrix x = design(data, 3, 3);
  for (int i = 0; i < 3; ++i) {
    Vector y(data.size());
    for (std::size_t k = 0; k < data.size(); ++k) y(k) = data[k].s_next(i);
    const Vector coef = x.colPivHouseholderQr().solve(y);
    EXPECT_LT(std::abs(coef(3 + 1)), 0.05);
  }
}

TEST(GenerateDataset, ResidualCovarianceMatchesNoise) {
  Rng src(5);
  GroundTruthScm scm = testing::random_scm(3, 2, src);
  scm.sigma_phi << 0.2, 0.05, 0.0, 0.05, 0.1, 0.02, 0.0, 0.02, 0.3;
  Rng rng(6);
  const Dataset data = generate_dataset(scm, 100, 100, 0.5, rng);
  Matrix cov = Matrix::Zero(3, 3);
  for (const Transition& t : data) {
    const Vector e = t.s_next - scm.f_s * t.s - scm.f_a * t.a;
    cov += e * e.transpose();
  }
  cov /= static_cast<double>(data.size());
  EXPECT_LT((cov - scm.sigma_phi).norm() / scm.sigma_phi.norm(), 0.1);
}

TEST(GenerateDataset, RejectsIndefiniteNoise) {
  GroundTruthScm scm = tiny_scm();
  scm.sigma_phi = -Matrix::Identity(2, 2);
  Rng rng(1);
  EXPECT_THROW(generate_dataset(scm, 1, 1, 0.0, rng), std::exception);
}

TEST(ExactMasks, DiagonalStateZeroAction) {
  GroundTruthScm scm = tiny_scm();
  scm.f_s = Matrix::Identity(2, 2) * 0.4;
  scm.f_a.setZero();
  const CausalMasks m = exact_masks(scm);
  EXPECT_EQ(m.c_ss, Matrix::Identity(2, 2));
  EXPECT_TRUE(m.c_as.isZero(0.0));
}

TEST(ExactMasks, DenseGivesOnes) {
  GroundTruthScm scm = tiny_scm();
  scm.f_s.setConstant(0.2);
  scm.f_a.setConstant(-1.0);
  scm.b_s.setConstant(2.0);
  scm.b_a.setConstant(0.1);
  EXPECT_EQ(exact_masks(scm), CausalMasks::ones(2, 2));
}

TEST(ExactMasks, ZeroRewardActionOperator) {
  GroundTruthScm scm = tiny_scm();
  scm.b_a.setZero();
  EXPECT_TRUE(exact_masks(scm).u_ar.isZero(0.0));
}

TEST(ExactMasks, OrientationPerOutputColumn) {
  const CausalMasks m = exact_masks(tiny_scm());
  // f_s(0, 1) = 0.1 means s_1 feeds next-state 0: row 1, column 0.
  EXPECT_EQ(m.c_ss(1, 0), 1.0);
  EXPECT_EQ(m.c_ss(0, 1), 0.0);
  // f_a(1, 0) = -0.5: action 0 feeds next-state 1.
  EXPECT_EQ(m.c_as(0, 1), 1.0);
  EXPECT_EQ(m.c_as(1, 0), 0.0);
}

TEST(ExactMasks, InvariantUnderRescaling) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    GroundTruthScm scm = testing::random_scm(4, 3, rng);
    GroundTruthScm scaled = scm;
    scaled.f_s *= 3.7;
    scaled.f_a *= -0.01;
    scaled.b_s *= 12.0;
    scaled.b_a *= 0.5;
    EXPECT_EQ(exact_masks(scm), exact_masks(scaled));
  }
}

TEST(StackedAdjacency, EdgelessWhenOperatorsZero) {
  GroundTruthScm scm;
  scm.n = 1;
  scm.d = 1;
  scm.f_s = Matrix::Zero(1, 1);
  scm.f_a = Matrix::Zero(1, 1);
  scm.b_s = Vector::Zero(1);
  scm.b_a = Vector::Zero(1);
  scm.sigma_phi = Matrix::Identity(1, 1);
  scm.sigma_omega = 1.0;
  const Dag dag = stacked_adjacency(scm);
  EXPECT_EQ(dag.nodes(), 4);
  EXPECT_EQ(dag.edge_count(), 0);
  scm.f_s(0, 0) = 0.9;
  scm.b_s(0) = 1.0;
  const Dag chain = stacked_adjacency(scm);
  EXPECT_EQ(chain.edge_count(), 2);
  EXPECT_TRUE(chain.has_edge(0, 2));
  EXPECT_TRUE(chain.has_edge(2, 3));
}

TEST(StackedAdjacency, AlwaysAcyclic) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const GroundTruthScm scm = testing::random_scm(1 + trial % 5, 1 + trial % 3, rng);
    EXPECT_LT(acyclicity(stacked_adjacency(scm).weights), 1e-8);
  }
}

TEST(MakeDag, RejectsCycle) {
  Matrix w = Matrix::Zero(2, 2);
  w(0, 1) = 1.0;
  w(1, 0) = 1.0;
  EXPECT_THROW(make_dag(w), std::invalid_argument);
}

TEST(CausalMasks, ValidateRange) {
  CausalMasks m = CausalMasks::ones(2, 1);
  m.validate();
  m.u_sr(0) = 1.5;
  EXPECT_THROW(m.validate(), std::invalid_argument);
}

TEST(DatasetIo, RoundTripBitExact) {
  Rng src(12);
  const GroundTruthScm scm = testing::random_scm(3, 2, src);
  Rng rng(13);
  const Dataset data = generate_dataset(scm, 4, 25, 0.3, rng);
  std::stringstream first;
  write_dataset(first, 3, 2, data);
  const DatasetFile back = read_dataset(first);
  ASSERT_EQ(back.n, 3);
  ASSERT_EQ(back.d, 2);
  ASSERT_EQ(back.data.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back.data[i].s, data[i].s);
    EXPECT_EQ(back.data[i].a, data[i].a);
    EXPECT_EQ(back.data[i].r, data[i].r);
    EXPECT_EQ(back.data[i].s_next, data[i].s_next);
    EXPECT_EQ(back.data[i].done, data[i].done);
  }
  std::stringstream second;
  write_dataset(second, 3, 2, back.data);
  EXPECT_EQ(first.str(), second.str());
}

TEST(DatasetIo, EmptyDatasetHasHeader) {
  std::stringstream out;
  write_dataset(out, 3, 2, {});
  EXPECT_EQ(out.str(), "3 2 0\n");
  const DatasetFile back = read_dataset(out);
  EXPECT_TRUE(back.data.empty());
}

TEST(DatasetIo, RejectsTruncatedFile) {
  std::stringstream in("2 1 1\n0.5 1\n");
  EXPECT_THROW(read_dataset(in), std::runtime_error);
}

TEST(MaskIo, RoundTrip) {
  Rng rng(3);
  CausalMasks m = CausalMasks::zeros(3, 2);
  m.c_ss(0, 1) = 0.25;
  m.c_as(1, 2) = 1.0;
  m.u_ar(1) = 0.75;
  Checkpoint ck("masks");
  save_masks(ck, "m", m);
  std::stringstream io;
  ck.write(io);
  const Checkpoint back = Checkpoint::read(io);
  EXPECT_EQ(load_masks(back, "m"), m);
}

}  // namespace
}  // namespace cgdp
