#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cgdp/envs.hpp"
#include "fixtures.hpp"

namespace cgdp {
namespace {

// Two-sample Kolmogorov-Smirnov p-value from the asymptotic distribution.
double ks_p_value(std::vector<double> x, std::vector<double> y) {
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::size_t i = 0;
  std::size_t j = 0;
  double stat = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= v) ++i;
    while (j < y.size() && y[j] <= v) ++j;
    stat = std::max(stat, std::abs(static_cast<double>(i) / x.size() - static_cast<double>(j) / y.size()));
  }
  const double ne = static_cast<double>(x.size()) * y.size() / (x.size() + y.size());
  const double lam = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * stat;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lam * lam);
  return std::clamp(p, 0.0, 1.0);
}

TEST(EnvSpec, ParseAndValidate) {
  EXPECT_EQ(parse_env_kind("lin-scm"), EnvKind::lin_scm);
  EXPECT_EQ(parse_env_kind("point-maze"), EnvKind::point_maze);
  EXPECT_EQ(to_string(EnvKind::point_maze), "point-maze");
  EXPECT_THROW(parse_env_kind("maze"), std::invalid_argument);
  EnvSpec bad;
  bad.causal_actions = bad.action_dim + 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = EnvSpec{};
  bad.horizon = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  const EnvSpec maze = point_maze_spec();
  EXPECT_EQ(maze.state_dim, 4);
  EXPECT_EQ(maze.action_dim, 2);
  EXPECT_EQ(maze.horizon, 200);
}

TEST(MakeLinScm, StructureAndDeterminism) {
  EnvSpec spec;
  spec.seed = 17;
  const GroundTruthScm a = make_lin_scm(spec);
  const GroundTruthScm b = make_lin_scm(spec);
  EXPECT_EQ(a.f_s, b.f_s);
  EXPECT_EQ(a.f_a, b.f_a);
  EXPECT_GE(a.f_s.minCoeff(), 0.0);
  EXPECT_GE(a.b_s.minCoeff(), 0.0);
  EXPECT_LT(a.f_s.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
  for (int j = spec.causal_actions; j < spec.action_dim; ++j) {
    EXPECT_TRUE(a.f_a.col(j).isZero(0.0));
    EXPECT_EQ(a.b_a(j), 0.0);
  }
  for (int j = 0; j < spec.causal_actions; ++j) {
    EXPECT_FALSE(a.f_a.col(j).isZero(0.0));
    for (int i = 0; i < spec.state_dim; ++i) {
      if (a.f_a(i, j) != 0.0 && a.b_a(j) != 0.0) EXPECT_GT(a.f_a(i, j) * a.b_a(j), 0.0);
    }
  }
  EXPECT_DOUBLE_EQ(a.sigma_omega, spec.noise);
  spec.seed = 18;
  EXPECT_NE(make_lin_scm(spec).f_a, a.f_a);
}

TEST(Reset, FixedSeedIsReproducible) {
  const Environment env{EnvSpec{}};
  Rng a(3);
  Rng b(3);
  EXPECT_EQ(env.reset(a).obs, env.reset(b).obs);
}

TEST(Reset, PointMazeStartsAtRest) {
  const Environment env(point_maze_spec());
  Rng rng(4);
  const EnvState s = env.reset(rng);
  EXPECT_EQ(s.obs(2), 0.0);
  EXPECT_EQ(s.obs(3), 0.0);
  EXPECT_EQ(s.step, 0);
  EXPECT_FALSE(s.done);
}

TEST(Reset, LinScmMomentsAreStandard) {
  const Environment env{EnvSpec{}};
  Rng rng(5);
  Vector mean = Vector::Zero(env.state_dim());
  const int n = 10000;
  for (int i = 0; i < n; ++i) mean += env.reset(rng).obs;
  mean /= n;
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.05);
}

TEST(Step, PointMazeBallisticMotion) {
  const EnvSpec spec = point_maze_spec();
  const Environment env(spec);
  EnvState s;
  s.obs = (Vector(4) << 0.2, -0.3, 0.5, -0.25).finished();
  Rng rng(6);
  const StepOutcome out = env.step(s, Vector::Zero(2), rng);
  EXPECT_DOUBLE_EQ(out.state.obs(0), 0.2 + 0.5 * spec.dt);
  EXPECT_DOUBLE_EQ(out.state.obs(1), -0.3 - 0.25 * spec.dt);
  EXPECT_EQ(out.state.obs(2), 0.5);
  EXPECT_EQ(out.state.obs(3), -0.25);
  const double dx = out.state.obs(0) - spec.goal_x;
  const double dy = out.state.obs(1) - spec.goal_y;
  EXPECT_DOUBLE_EQ(out.reward, -(dx * dx + dy * dy));
  EXPECT_FALSE(out.done);
}

TEST(Step, PointMazeEndsAtGoal) {
  const EnvSpec spec = point_maze_spec();
  const Environment env(spec);
  EnvState s;
  s.obs = (Vector(4) << spec.goal_x, spec.goal_y, 0.0, 0.0).finished();
  Rng rng(7);
  const StepOutcome out = env.step(s, Vector::Zero(2), rng);
  EXPECT_TRUE(out.done);
  EXPECT_EQ(out.reward, 0.0);
  EXPECT_THROW(env.step(out.state, Vector::Zero(2), rng), std::logic_error);
}

TEST(Step, LinScmZeroOperatorsAreInert) {
  GroundTruthScm scm;
  scm.n = 3;
  scm.d = 2;
  scm.f_s = Matrix::Zero(3, 3);
  scm.f_a = Matrix::Zero(3, 2);
  scm.b_s = Vector::Zero(3);
  scm.b_a = Vector::Zero(2);
  scm.sigma_phi = Matrix::Zero(3, 3);
  scm.sigma_omega = 0.0;
  const Environment env(scm, 10);
  Rng rng(8);
  EnvState s;
  s.obs = Vector::Zero(3);
  for (int t = 0; t < 10; ++t) {
    const StepOutcome out = env.step(s, rng.normal_vector(2), rng);
    EXPECT_EQ(out.reward, 0.0);
    EXPECT_TRUE(out.state.obs.isZero(0.0));
    EXPECT_EQ(out.done, t == 9);
    s = out.state;
  }
}

TEST(Step, ClampsActionsAndRejectsBadInput) {
  const Environment env{EnvSpec{}};
  Rng a(9);
  Rng b(9);
  Rng init(10);
  const EnvState s = env.reset(init);
  const Vector big = Vector::Constant(env.action_dim(), 5.0);
  const StepOutcome clamped = env.step(s, big, a);
  const StepOutcome edge = env.step(s, Vector::Ones(env.action_dim()), b);
  EXPECT_EQ(clamped.state.obs, edge.state.obs);
  EXPECT_EQ(clamped.reward, edge.reward);
  EXPECT_THROW(env.step(s, Vector::Zero(env.action_dim() + 1), a), std::invalid_argument);
  EXPECT_THROW(env.step(s, Vector::Constant(env.action_dim(), NAN), a), std::invalid_argument);
}

TEST(Step, NonCausalActionsLeaveTransitionsUnchanged) {
  const Environment env{EnvSpec{}};
  const EnvSpec& spec = env.spec();
  Rng init(11);
  const EnvState s = env.reset(init);
  Vector base = Vector::Zero(spec.action_dim);
  base(0) = 0.3;
  Vector perturbed = base;
  for (int j = spec.causal_actions; j < spec.action_dim; ++j) perturbed(j) = 0.9;

  // Common noise: bit-identical outcomes.
  Rng c1(12);
  Rng c2(12);
  EXPECT_EQ(env.step(s, base, c1).state.obs, env.step(s, perturbed, c2).state.obs);

  // Independent noise: same distribution per coordinate.
  const int runs = 1000;
  Rng r1(13);
  Rng r2(14);
  std::vector<std::vector<double>> x(spec.state_dim + 1), y(spec.state_dim + 1);
  for (int i = 0; i < runs; ++i) {
    const StepOutcome u = env.step(s, base, r1);
    const StepOutcome v = env.step(s, perturbed, r2);
    for (int k = 0; k < spec.state_dim; ++k) {
      x[k].push_back(u.state.obs(k));
      y[k].push_back(v.state.obs(k));
    }
    x[spec.state_dim].push_back(u.reward);
    y[spec.state_dim].push_back(v.reward);
  }
  for (int k = 0; k <= spec.state_dim; ++k) EXPECT_GT(ks_p_value(x[k], y[k]), 0.01) << "coordinate " << k;
}

TEST(KsPValue, DetectsShift) {
  Rng rng(15);
  std::vector<double> x;
  std::vector<double> y;
  for (int i = 0; i < 1000; ++i) {
    x.push_back(rng.normal());
    y.push_back(rng.normal() + 0.3);
  }
  EXPECT_LT(ks_p_value(x, y), 0.01);
}

TEST(OptimalReward, HandExamples) {
  EXPECT_EQ(optimal_reward(point_maze_spec()), 0.0);
  GroundTruthScm scm;
  scm.n = 1;
  scm.d = 2;
  scm.f_s = Matrix::Zero(1, 1);
  scm.f_a = Matrix::Zero(1, 2);
  scm.b_s = Vector::Zero(1);
  scm.b_a = (Vector(2) << 1.0, 0.0).finished();
  scm.sigma_phi = Matrix::Zero(1, 1);
  scm.sigma_omega = 0.0;
  EXPECT_EQ(optimal_reward(scm), 1.0);
  const Environment env(scm, 1);
  Rng rng(16);
  EnvState s;
  s.obs = Vector::Zero(1);
  EXPECT_EQ(env.step(s, (Vector(2) << 1.0, -0.4).finished(), rng).reward, 1.0);
}

TEST(OptimalReward, MatchesGridSearch) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    EnvSpec spec;
    spec.state_dim = 4;
    spec.action_dim = 2;
    spec.seed = seed;
    GroundTruthScm scm = make_lin_scm(spec);
    const double closed = optimal_reward(scm);
    scm.sigma_phi.setZero();
    scm.sigma_omega = 0.0;
    const Environment env(scm, 1);
    EnvState s;
    s.obs = Vector::Zero(spec.state_dim);
    Rng rng(seed);
    double best = -1e300;
    for (int i = 0; i <= 200; ++i) {
      for (int j = 0; j <= 200; ++j) {
        const Vector a = (Vector(2) << -1.0 + 0.01 * i, -1.0 + 0.01 * j).finished();
        best = std::max(best, env.step(s, a, rng).reward);
      }
    }
    EXPECT_NEAR(closed, best, 1e-3) << "seed " << seed;
  }
}

}  // namespace
}  // namespace cgdp
