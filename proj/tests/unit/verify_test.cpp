#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "cgdp/verify.hpp"
#include "fixtures.hpp"

namespace cgdp {
namespace {

PosteriorSpec scalar_spec() {
  PosteriorSpec spec;
  spec.prior_mean = Vector::Zero(1);
  spec.prior_cov = Matrix::Identity(1, 1);
  spec.m = Matrix::Identity(1, 1);
  spec.sigma_y = Matrix::Identity(1, 1);
  spec.y = Vector::Constant(1, 2.0);
  return spec;
}

// Information form of the same conditioning.
GaussianMoments information_posterior(const PosteriorSpec& spec) {
  const Matrix prior_prec = spec.prior_cov.inverse();
  const Matrix noise_prec = spec.sigma_y.inverse();
  const Matrix prec = prior_prec + spec.m.transpose() * noise_prec * spec.m;
  GaussianMoments out;
  out.cov = prec.inverse();
  out.mean = out.cov * (prior_prec * spec.prior_mean + spec.m.transpose() * noise_prec * spec.y);
  return out;
}

CausalDynamics scalar_dynamics(double f_a, double b_s, double b_a, double var) {
  return CausalDynamics::linear(CausalMasks::ones(1, 1), Matrix::Zero(1, 1), Matrix::Constant(1, 1, f_a),
                                Vector::Constant(1, b_s), Vector::Constant(1, b_a), Matrix::Identity(1, 1) * var,
                                var);
}

TEST(GaussianPosterior, ScalarConjugate) {
  const GaussianMoments post = gaussian_posterior(scalar_spec());
  EXPECT_NEAR(post.mean(0), 1.0, 1e-15);
  EXPECT_NEAR(post.cov(0, 0), 0.5, 1e-15);
}

TEST(GaussianPosterior, UninformativeObservations) {
  Rng rng(1);
  PosteriorSpec spec = random_posterior_spec(3, 2, rng);
  spec.m.setZero();
  GaussianMoments post = gaussian_posterior(spec);
  EXPECT_EQ(post.mean, spec.prior_mean);
  EXPECT_LT((post.cov - spec.prior_cov).norm(), 1e-15);
  spec = random_posterior_spec(3, 2, rng);
  spec.sigma_y *= 1e12;
  post = gaussian_posterior(spec);
  EXPECT_LT((post.mean - spec.prior_mean).norm(), 1e-6);
  EXPECT_LT((post.cov - spec.prior_cov).norm(), 1e-6);
}

TEST(GaussianPosterior, MatchesInformationForm) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const PosteriorSpec spec = random_posterior_spec(3, 2, rng);
    const GaussianMoments got = gaussian_posterior(spec);
    const GaussianMoments want = information_posterior(spec);
    EXPECT_LT((got.mean - want.mean).norm(), 1e-10);
    EXPECT_LT((got.cov - want.cov).norm(), 1e-10);
  }
}

TEST(GaussianPosterior, RejectsSingularInnovation) {
  PosteriorSpec spec = scalar_spec();
  spec.prior_cov.setZero();
  spec.sigma_y.setZero();
  EXPECT_THROW(gaussian_posterior(spec), std::exception);
}

TEST(RandomPosteriorSpec, StackedLayout) {
  Rng rng(2);
  const PosteriorSpec spec = random_posterior_spec(3, 2, rng);
  EXPECT_EQ(spec.m.rows(), 4);
  EXPECT_EQ(spec.m.cols(), 2);
  EXPECT_EQ(spec.y.size(), 4);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(spec.prior_cov);
  EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
  EXPECT_LT(eig.eigenvalues().maxCoeff(), 1.0);
}

TEST(CheckLemma1, ScalarPosteriorMoments) {
  const DiffusionSchedule schedule = make_schedule(1000, 1e-4, 0.02);
  Rng rng(3);
  const Lemma1Report rep = check_lemma1(scalar_spec(), schedule, 20000, rng);
  EXPECT_GE(rep.sample.mean(0), 0.95);
  EXPECT_LE(rep.sample.mean(0), 1.05);
  EXPECT_GE(rep.sample.cov(0, 0), 0.45);
  EXPECT_LE(rep.sample.cov(0, 0), 0.55);
  EXPECT_TRUE(rep.pass);
}

TEST(CheckLemma1, ZeroGuidanceRecoversPrior) {
  const DiffusionSchedule schedule = make_schedule(500, 1e-4, 0.04);
  Rng rng(4);
  const PosteriorSpec spec = random_posterior_spec(3, 2, rng);
  const Lemma1Report rep = check_lemma1(spec, schedule, 10000, rng, Lemma1Guidance::clean_estimate, 0.0);
  EXPECT_EQ(rep.target.mean, spec.prior_mean);
  EXPECT_EQ(rep.target.cov, spec.prior_cov);
  EXPECT_LT(rep.max_mean_z, 4.0);
  EXPECT_LT(rep.cov_rel_error, 0.1);
}

TEST(CheckLemma1, RejectsUndersizedRuns) {
  Rng rng(5);
  EXPECT_THROW(check_lemma1(scalar_spec(), make_schedule(100, 1e-4, 0.1), 20000, rng), std::invalid_argument);
  EXPECT_THROW(check_lemma1(scalar_spec(), make_schedule(1000, 1e-4, 0.02), 100, rng), std::invalid_argument);
}

TEST(CheckProp1, ZeroMarginSkipsSweep) {
  Prop1Config cfg;
  cfg.delta = 0.0;
  const Prop1Report rep = check_prop1(stiff_instance(), make_schedule(100, 1e-4, 0.02), cfg);
  EXPECT_TRUE(rep.skipped);
  EXPECT_EQ(rep.dt_max, 0.0);
  EXPECT_FALSE(rep.note.empty());
  EXPECT_TRUE(rep.rows.empty());
}

TEST(CheckProp1, StiffInstanceBoundaryBehaviour) {
  const Prop1Instance inst = stiff_instance();
  const DiffusionSchedule schedule = make_schedule(100, 1e-4, 0.02);
  const LipschitzBundle bundle = exact_bundle(inst, schedule, 0.5);
  EXPECT_NEAR(bundle.l_phi, 100.0, 1e-9);
  Prop1Config cfg;
  const Prop1Report rep = check_prop1(inst, schedule, cfg);
  EXPECT_FALSE(rep.skipped);
  ASSERT_EQ(rep.rows.size(), cfg.multipliers.size() * cfg.seeds);
  int half_divergences = 0;
  int fifty_divergences = 0;
  for (const Prop1Row& row : rep.rows) {
    if (row.multiplier == 0.5) half_divergences += row.diverged;
    if (row.multiplier == 50.0) fifty_divergences += row.diverged;
  }
  EXPECT_EQ(half_divergences, 0);
  EXPECT_GE(fifty_divergences, 1);
  EXPECT_EQ(rep.divergences_within_bound, 0);
  EXPECT_TRUE(rep.pass);
}

TEST(CheckProp2, NoCausalEffectGivesZeroEstimate) {
  const CausalDynamics dyn = scalar_dynamics(0.0, 1.0, 0.0, 0.5);
  Rng rng(6);
  const int n = 10000;
  const Prop2Report rep = check_prop2(dyn, Vector::Zero(1), Vector::Constant(1, 0.3), n, rng);
  EXPECT_TRUE(rep.analytic.isZero(0.0));
  EXPECT_LT(rep.estimate.norm(), 3.0 / std::sqrt(double(n)));
}

TEST(CheckProp2, ScalarRewardSlopeSign) {
  const CausalDynamics dyn = scalar_dynamics(0.0, 0.0, 2.0, 1.0);
  EXPECT_NEAR(interventional_reward_gradient(dyn, Vector::Zero(1), Vector::Constant(1, 0.4))(0), 2.0, 1e-15);
  int positive = 0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    if (check_prop2(dyn, Vector::Zero(1), Vector::Constant(1, 0.4), 10000, rng).estimate(0) > 0.0) ++positive;
  }
  EXPECT_GE(positive, 99);
}

TEST(CheckProp2, DoubledRewardsDoubleTheEstimate) {
  Rng init(7);
  GroundTruthScm scm = testing::random_scm(3, 2, init, 0.3);
  scm.b_a = init.normal_vector(2);
  scm.b_s = init.normal_vector(3);
  const CausalDynamics base = CausalDynamics::from_scm(scm, CausalMasks::ones(3, 2));
  scm.b_a *= 2.0;
  scm.b_s *= 2.0;
  scm.sigma_omega *= 4.0;
  const CausalDynamics doubled = CausalDynamics::from_scm(scm, CausalMasks::ones(3, 2));
  const Vector s = init.normal_vector(3);
  const Vector a = 0.5 * init.normal_vector(2);
  Rng r1(8);
  Rng r2(8);
  const Prop2Report x = check_prop2(base, s, a, 10000, r1);
  const Prop2Report y = check_prop2(doubled, s, a, 10000, r2);
  EXPECT_NEAR(y.estimate.norm() / x.estimate.norm(), 2.0, 1e-9);
  EXPECT_NEAR(x.estimate.normalized().dot(y.estimate.normalized()), 1.0, 1e-9);
  EXPECT_TRUE(x.pass);
  EXPECT_GE(x.cosine, 0.95);
}

TEST(CheckTheorem1, ZeroGuidanceIsTight) {
  EnvSpec spec;
  spec.state_dim = 2;
  spec.action_dim = 1;
  spec.causal_actions = 1;
  spec.horizon = 10;
  spec.noise = 1.0;
  const Environment env(spec);
  Rng data_rng(9);
  const Dataset data = generate_dataset(env.scm(), 20, 10, 0.5, data_rng);
  TrainerConfig cfg;
  cfg.hidden = 8;
  cfg.hidden_layers = 1;
  cfg.diffusion_steps = 10;
  cfg.offline_steps = 20;
  Rng rng(10);
  const Artifacts art = offline_stage(data, cfg, rng);
  GuidanceConfig guidance;
  Theorem1Config tcfg;
  tcfg.lambdas = {0.0};
  tcfg.rollouts = 20;
  tcfg.advantage_states = 16;
  const Theorem1Report rep = check_theorem1(env, art, cfg.schedule(), guidance, {1, 2}, tcfg);
  ASSERT_EQ(rep.rows.size(), 2u);
  for (const Theorem1Row& row : rep.rows) {
    EXPECT_EQ(row.kl, 0.0);
    EXPECT_EQ(row.bound, 0.0);
    EXPECT_EQ(row.gap, 0.0);
    EXPECT_TRUE(row.holds);
  }
  EXPECT_EQ(rep.held, 2);
  const std::string csv = theorem1_csv(rep);
  EXPECT_EQ(csv.rfind("seed,lambda,j_guided,j_base,gap,kl,sup_adv_sq,bound,holds\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(CheckTheorem1, RequiresLinScm) {
  const Environment env(point_maze_spec());
  Artifacts art;
  EXPECT_THROW(check_theorem1(env, art, make_schedule(10, 1e-3, 0.2), GuidanceConfig{}, {1}, Theorem1Config{}),
               std::invalid_argument);
}

TEST(VerifyCsv, HeadersAndRows) {
  Prop2Report p;
  p.estimate = Vector::Ones(2);
  p.analytic = Vector::Ones(2);
  p.cosine = 1.0;
  p.pass = true;
  const std::string csv = prop2_csv({p, p});
  EXPECT_EQ(csv.rfind("run,cosine,pass,estimate,analytic\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  Prop1Report q;
  q.instance = "stiff";
  q.rows.resize(4);
  const std::string pcsv = prop1_csv({q});
  EXPECT_EQ(pcsv.rfind("instance,multiplier,dt,seed,diverged,steps_run,final_norm\n", 0), 0u);
  EXPECT_EQ(std::count(pcsv.begin(), pcsv.end(), '\n'), 5);
}

}  // namespace
}  // namespace cgdp
