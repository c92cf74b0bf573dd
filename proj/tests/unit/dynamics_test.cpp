#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "cgdp/dynamics.hpp"
#include "fixtures.hpp"

namespace cgdp {
namespace {

using testing::fd_gradient;
using testing::rel_error;

CausalDynamics random_mlp_dynamics(int n, int d, const CausalMasks& masks, Rng& rng) {
  std::vector<Mlp> nets;
  for (int i = 0; i < n; ++i) nets.push_back(Mlp::random({n + d, 8, 1}, rng));
  Matrix cov = Matrix::Identity(n, n) * 0.2;
  cov(0, 1) = cov(1, 0) = 0.05;
  return CausalDynamics::mlp(masks, std::move(nets), Mlp::random({n + d, 8, 1}, rng), cov, 0.3);
}

CausalMasks random_masks(int n, int d, Rng& rng) {
  CausalMasks m = CausalMasks::zeros(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m.c_ss(i, j) = rng.uniform() < 0.5 ? 1.0 : 0.0;
    m.u_sr(i) = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < n; ++i) m.c_as(j, i) = rng.uniform() < 0.5 ? 1.0 : 0.0;
    m.u_ar(j) = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }
  return m;
}

TEST(ApplyMasks, OnesAreIdentityAndZerosVanish) {
  Rng rng(1);
  const Vector s = rng.normal_vector(3);
  const Vector a = rng.normal_vector(2);
  const Vector sn = rng.normal_vector(3);
  const MaskedFeatures ones = apply_masks(CausalMasks::ones(3, 2), s, a, sn);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(ones.state[i], s);
    EXPECT_EQ(ones.action[i], a);
  }
  EXPECT_EQ(ones.reward_state, sn);
  EXPECT_EQ(ones.reward_action, a);
  const MaskedFeatures zeros = apply_masks(CausalMasks::zeros(3, 2), s, a, sn);
  for (int i = 0; i < 3; ++i) {
    EXPECT_TRUE(zeros.state[i].isZero(0.0));
    EXPECT_TRUE(zeros.action[i].isZero(0.0));
  }
  EXPECT_TRUE(zeros.reward_state.isZero(0.0));
  EXPECT_TRUE(zeros.reward_action.isZero(0.0));
}

TEST(ApplyMasks, DimensionMismatchThrows) {
  EXPECT_THROW(apply_masks(CausalMasks::ones(3, 2), Vector::Zero(2), Vector::Zero(2), Vector::Zero(3)),
               std::invalid_argument);
}

TEST(CausalDynamics, MaskedInputsHaveNoInfluence) {
  Rng rng(7);
  const int n = 3;
  const int d = 2;
  for (int trial = 0; trial < 20; ++trial) {
    const CausalMasks masks = random_masks(n, d, rng);
    const GroundTruthScm scm = testing::random_scm(n, d, rng);
    const std::vector<CausalDynamics> models{
        CausalDynamics::linear(masks, scm.f_s, scm.f_a, scm.b_s, scm.b_a, scm.sigma_phi, 0.1),
        random_mlp_dynamics(n, d, masks, rng)};
    for (const CausalDynamics& dyn : models) {
      const Vector s = rng.normal_vector(n);
      const Vector a = rng.normal_vector(d);
      const Vector sn = rng.normal_vector(n);
      const double r = rng.normal();
      const LogDensity base_t = transition_logpdf_grad(dyn, s, a, sn);
      const LogDensity base_r = reward_logpdf_grad(dyn, sn, a, r);
      const Vector base_mean = dyn.transition_mean(s, a);
      // An action coordinate masked out of every equation cannot matter.
      for (int j = 0; j < d; ++j) {
        if (masks.c_as.row(j).any() || masks.u_ar(j) != 0.0) continue;
        Vector a2 = a;
        a2(j) = 1e3;
        EXPECT_EQ(dyn.transition_mean(s, a2), base_mean);
        EXPECT_EQ(transition_logpdf_grad(dyn, s, a2, sn).log_p, base_t.log_p);
        EXPECT_EQ(reward_logpdf_grad(dyn, sn, a2, r).grad, base_r.grad);
      }
      // Per-equation check: coordinate i of the mean ignores masked inputs, even non-finite ones.
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          if (masks.c_ss(j, i) != 0.0) continue;
          Vector s2 = s;
          s2(j) = std::numeric_limits<double>::quiet_NaN();
          const Vector mean2 = dyn.transition_mean(s2, a);
          EXPECT_EQ(mean2(i), base_mean(i));
        }
      }
      for (int j = 0; j < n; ++j) {
        if (masks.u_sr(j) != 0.0) continue;
        Vector sn2 = sn;
        sn2(j) += 17.0;
        EXPECT_EQ(dyn.reward_mean(sn2, a), dyn.reward_mean(sn, a));
        EXPECT_EQ(reward_logpdf_grad(dyn, sn2, a, r).grad, base_r.grad);
      }
    }
  }
}

TEST(CausalDynamics, RejectsBadCovariances) {
  const CausalMasks m = CausalMasks::ones(2, 1);
  EXPECT_THROW(CausalDynamics::linear(m, Matrix::Zero(2, 2), Matrix::Zero(2, 1), Vector::Zero(2), Vector::Zero(1),
                                      Matrix::Zero(2, 2), 1.0),
               std::exception);
  EXPECT_THROW(CausalDynamics::linear(m, Matrix::Zero(2, 2), Matrix::Zero(2, 1), Vector::Zero(2), Vector::Zero(1),
                                      Matrix::Identity(2, 2), 0.0),
               std::exception);
}

TEST(FitDynamics, NoiselessLinearIsExact) {
  Rng rng(3);
  GroundTruthScm scm = testing::random_scm(4, 3, rng);
  scm.sigma_phi.setZero();
  scm.sigma_omega = 0.0;
  const Dataset data = generate_dataset(scm, 10, 30, 0.8, rng);
  const CausalDynamics dyn = fit_dynamics(data, exact_masks(scm), {}, rng);
  EXPECT_LT((dyn.effective_f_s() - scm.f_s).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((dyn.effective_f_a() - scm.f_a).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((dyn.effective_b_s() - scm.b_s).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((dyn.effective_b_a() - scm.b_a).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FitDynamics, NoisyLinearIsConsistent) {
  Rng rng(11);
  const GroundTruthScm scm = testing::random_scm(3, 2, rng, 0.1);
  const Dataset data = generate_dataset(scm, 200, 50, 0.8, rng);
  ASSERT_EQ(data.size(), 10000u);
  const CausalDynamics dyn = fit_dynamics(data, exact_masks(scm), {}, rng);
  EXPECT_LT((dyn.effective_f_s() - scm.f_s).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LT((dyn.effective_f_a() - scm.f_a).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LT((dyn.effective_b_s() - scm.b_s).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LT((dyn.effective_b_a() - scm.b_a).cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LT((dyn.sigma_phi() - scm.sigma_phi).norm() / scm.sigma_phi.norm(), 0.15);
}

TEST(FitDynamics, ZeroActionMaskGivesExactlyZeroOperator) {
  Rng rng(5);
  const GroundTruthScm scm = testing::random_scm(3, 2, rng);
  const Dataset data = generate_dataset(scm, 20, 20, 0.8, rng);
  CausalMasks masks = CausalMasks::ones(3, 2);
  masks.c_as.setZero();
  masks.u_ar.setZero();
  const CausalDynamics dyn = fit_dynamics(data, masks, {}, rng);
  EXPECT_TRUE(dyn.effective_f_a().isZero(0.0));
  EXPECT_TRUE(dyn.effective_b_a().isZero(0.0));
}

TEST(FitDynamics, TooFewTransitionsThrows) {
  Rng rng(5);
  const GroundTruthScm scm = testing::random_scm(3, 2, rng);
  const Dataset data = generate_dataset(scm, 1, 49, 0.8, rng);
  EXPECT_THROW(fit_dynamics(data, CausalMasks::ones(3, 2), {}, rng), std::invalid_argument);
}

TEST(FitDynamics, RankDeficientDesignFallsBackToRidge) {
  Rng rng(8);
  const GroundTruthScm scm = testing::random_scm(2, 2, rng);
  Dataset data = generate_dataset(scm, 10, 20, 0.8, rng);
  for (Transition& t : data) t.a(1) = t.a(0);  // duplicated action column
  DynamicsFitReport report;
  const CausalDynamics dyn = fit_dynamics(data, CausalMasks::ones(2, 2), {}, rng, &report);
  EXPECT_FALSE(report.ridge_equations.empty());
  EXPECT_TRUE(dyn.effective_f_a().allFinite());
}

TEST(FitDynamics, SelfConsistentAtLargeSample) {
  Rng rng(21);
  const GroundTruthScm scm = testing::random_scm(3, 2, rng, 0.1);
  const Dataset first = generate_dataset(scm, 40, 50, 0.8, rng);
  const CausalDynamics fitted = fit_dynamics(first, exact_masks(scm), {}, rng);
  GroundTruthScm model = scm;
  model.f_s = fitted.effective_f_s();
  model.f_a = fitted.effective_f_a();
  model.b_s = fitted.effective_b_s();
  model.b_a = fitted.effective_b_a();
  model.sigma_phi = fitted.sigma_phi();
  model.sigma_omega = fitted.sigma_omega();
  const Dataset second = generate_dataset(model, 2000, 50, 0.8, rng);
  const CausalDynamics refit = fit_dynamics(second, exact_masks(scm), {}, rng);
  EXPECT_LT((refit.effective_f_s() - model.f_s).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_LT((refit.effective_f_a() - model.f_a).cwiseAbs().maxCoeff(), 1e-2);
  EXPECT_LT((refit.effective_b_a() - model.b_a).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(FitDynamics, MlpKindRespectsMasksAndFits) {
  Rng rng(2);
  const GroundTruthScm scm = testing::random_scm(2, 2, rng, 0.05);
  const Dataset data = generate_dataset(scm, 40, 25, 0.8, rng);
  DynamicsFitConfig cfg;
  cfg.kind = ModelKind::mlp;
  cfg.steps = 1500;
  cfg.hidden = 16;
  const CausalMasks masks = exact_masks(scm);
  DynamicsFitReport report;
  const CausalDynamics dyn = fit_dynamics(data, masks, cfg, rng, &report);
  EXPECT_EQ(dyn.kind(), ModelKind::mlp);
  double mse = 0.0;
  for (const Transition& t : data) mse += (dyn.transition_mean(t.s, t.a) - t.s_next).squaredNorm();
  mse /= static_cast<double>(data.size());
  EXPECT_LT(mse, 0.5);
}

TEST(TransitionLogpdf, HandExamples) {
  const CausalMasks m = CausalMasks::ones(2, 2);
  const CausalDynamics dyn = CausalDynamics::linear(m, Matrix::Zero(2, 2), Matrix::Identity(2, 2), Vector::Zero(2),
                                                    Vector::Zero(2), Matrix::Identity(2, 2), 1.0);
  const Vector a = (Vector(2) << 1.0, 0.0).finished();
  const LogDensity ld = transition_logpdf_grad(dyn, Vector::Zero(2), a, Vector::Zero(2));
  EXPECT_NEAR(ld.grad(0), -1.0, 1e-15);
  EXPECT_NEAR(ld.grad(1), 0.0, 1e-15);
  EXPECT_NEAR(ld.log_p, -0.5 - std::log(2.0 * M_PI), 1e-12);
  const LogDensity at_mean = transition_logpdf_grad(dyn, Vector::Zero(2), a, a);
  EXPECT_TRUE(at_mean.grad.isZero(1e-15));
}

TEST(RewardLogpdf, HandExamples) {
  const CausalMasks m = CausalMasks::ones(1, 1);
  const CausalDynamics dyn = CausalDynamics::linear(m, Matrix::Zero(1, 1), Matrix::Zero(1, 1), Vector::Zero(1),
                                                    Vector::Constant(1, 1.0), Matrix::Identity(1, 1), 1.0);
  const LogDensity ld = reward_logpdf_grad(dyn, Vector::Zero(1), Vector::Constant(1, 2.0), 0.0);
  EXPECT_NEAR(ld.grad(0), -2.0, 1e-15);
  const LogDensity at_pred = reward_logpdf_grad(dyn, Vector::Zero(1), Vector::Constant(1, 2.0), 2.0);
  EXPECT_TRUE(at_pred.grad.isZero(1e-15));
}

TEST(LogDensityGradients, MatchFiniteDifferencesLinear) {
  Rng rng(13);
  for (int probe = 0; probe < 100; ++probe) {
    const GroundTruthScm scm = testing::random_scm(3, 2, rng, 0.2 + rng.uniform());
    const CausalDynamics dyn = CausalDynamics::from_scm(scm, random_masks(3, 2, rng));
    const Vector s = rng.normal_vector(3);
    const Vector a = rng.normal_vector(2);
    const Vector sn = rng.normal_vector(3);
    const double r = rng.normal();
    const Vector gt = transition_logpdf_grad(dyn, s, a, sn).grad;
    const Vector fdt = fd_gradient([&](const Vector& x) { return transition_logpdf_grad(dyn, s, x, sn).log_p; }, a);
    EXPECT_LT(rel_error(gt, fdt), 1e-6);
    const Vector gr = reward_logpdf_grad(dyn, sn, a, r).grad;
    const Vector fdr = fd_gradient([&](const Vector& x) { return reward_logpdf_grad(dyn, sn, x, r).log_p; }, a);
    EXPECT_LT(rel_error(gr, fdr), 1e-6);
    const Vector gj = joint_logpdf_grad(dyn, s, a, sn, r).grad;
    const Vector fdj = fd_gradient([&](const Vector& x) { return joint_logpdf_grad(dyn, s, x, sn, r).log_p; }, a);
    EXPECT_LT(rel_error(gj, fdj), 1e-6);
  }
}

TEST(LogDensityGradients, MatchFiniteDifferencesMlp) {
  Rng rng(17);
  for (int probe = 0; probe < 100; ++probe) {
    const CausalDynamics dyn = random_mlp_dynamics(3, 2, random_masks(3, 2, rng), rng);
    const Vector s = rng.normal_vector(3);
    const Vector a = rng.normal_vector(2);
    const Vector sn = rng.normal_vector(3);
    const double r = rng.normal();
    const Vector gt = transition_logpdf_grad(dyn, s, a, sn).grad;
    const Vector fdt = fd_gradient([&](const Vector& x) { return transition_logpdf_grad(dyn, s, x, sn).log_p; }, a);
    EXPECT_LT(rel_error(gt, fdt), 1e-4);
    const Vector gr = reward_logpdf_grad(dyn, sn, a, r).grad;
    const Vector fdr = fd_gradient([&](const Vector& x) { return reward_logpdf_grad(dyn, sn, x, r).log_p; }, a);
    EXPECT_LT(rel_error(gr, fdr), 1e-4);
  }
}

TEST(JointLogpdf, FactorizesExactly) {
  Rng rng(19);
  const GroundTruthScm scm = testing::random_scm(3, 2, rng);
  const CausalDynamics dyn = CausalDynamics::from_scm(scm, exact_masks(scm));
  for (int i = 0; i < 20; ++i) {
    const Vector s = rng.normal_vector(3);
    const Vector a = rng.normal_vector(2);
    const Vector sn = rng.normal_vector(3);
    const double r = rng.normal();
    const LogDensity t = transition_logpdf_grad(dyn, s, a, sn);
    const LogDensity w = reward_logpdf_grad(dyn, sn, a, r);
    const LogDensity j = joint_logpdf_grad(dyn, s, a, sn, r);
    EXPECT_EQ(j.log_p, t.log_p + w.log_p);
    EXPECT_EQ(j.grad, t.grad + w.grad);
  }
}

TEST(DoInterventionGrad, CoefficientReductions) {
  Rng rng(23);
  const GroundTruthScm scm = testing::random_scm(3, 2, rng);
  const CausalDynamics dyn = CausalDynamics::from_scm(scm, CausalMasks::ones(3, 2));
  const Vector s = rng.normal_vector(3);
  const Vector a = rng.normal_vector(2);
  const Vector sn = rng.normal_vector(3);
  const double r = 0.7;
  EXPECT_TRUE(do_intervention_joint_grad(dyn, s, a, sn, r, 0.0, 0.0).isZero(0.0));
  EXPECT_EQ(do_intervention_joint_grad(dyn, s, a, sn, r, 1.0, 0.0), transition_logpdf_grad(dyn, s, a, sn).grad);
  const Vector both = do_intervention_joint_grad(dyn, s, a, sn, r, 1.0, 1.0);
  const Vector sum = transition_logpdf_grad(dyn, s, a, sn).grad + reward_logpdf_grad(dyn, sn, a, r).grad;
  EXPECT_LT((both - sum).norm(), 1e-12);
}

TEST(CausalDynamics, CheckpointRoundTripIsBitExact) {
  Rng rng(29);
  const GroundTruthScm scm = testing::random_scm(3, 2, rng);
  const std::vector<CausalDynamics> models{CausalDynamics::from_scm(scm, random_masks(3, 2, rng)),
                                           random_mlp_dynamics(3, 2, random_masks(3, 2, rng), rng)};
  for (const CausalDynamics& dyn : models) {
    std::stringstream buf;
    dyn.to_checkpoint().write(buf);
    const std::string first = buf.str();
    const CausalDynamics back = CausalDynamics::from_checkpoint(Checkpoint::read(buf));
    std::stringstream again;
    back.to_checkpoint().write(again);
    EXPECT_EQ(again.str(), first);
    const Vector s = rng.normal_vector(3);
    const Vector a = rng.normal_vector(2);
    EXPECT_EQ(back.transition_mean(s, a), dyn.transition_mean(s, a));
    EXPECT_EQ(back.masks(), dyn.masks());
  }
}

}  // namespace
}  // namespace cgdp
