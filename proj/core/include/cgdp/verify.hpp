#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgdp/diffusion.hpp"
#include "cgdp/dynamics.hpp"
#include "cgdp/envs.hpp"
#include "cgdp/guidance.hpp"
#include "cgdp/rl.hpp"

namespace cgdp {

/// Linear-Gaussian conditioning problem: a ~ N(prior_mean, prior_cov),
/// y = M a + noise, noise ~ N(0, sigma_y).
struct PosteriorSpec {
  Vector prior_mean;
  Matrix prior_cov;
  Matrix m;
  Matrix sigma_y;
  Vector y;

  void validate() const;
};

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

GaussianMoments gaussian_posterior(const PosteriorSpec& spec);

/// Random instance with the observation stacked as (s', r): M = [F_a; B_a^T],
/// sigma_y = blockdiag(sigma_phi, sigma_omega), prior covariance below I.
PosteriorSpec random_posterior_spec(int state_dim, int action_dim, Rng& rng);

enum class Lemma1Guidance {
  none,
  // grad log p(y | a^k) through the exact Gaussian clean-action estimate.
  clean_estimate,
  // grad log p(y | a = a^k), the dynamics evaluated at the noisy action.
  noisy_action,
};

struct Lemma1Report {
  GaussianMoments target;
  GaussianMoments sample;
  Vector standard_error;
  double max_mean_z = 0.0;  // max_j |mean error_j| / se_j
  double cov_rel_error = 0.0;
  bool pass = false;
};

/// DDPM with the exact noise of the Gaussian prior plus guidance at `lambda`.
/// The target is the posterior, or the prior when mode is none or lambda is 0.
/// noisy_action needs the stacked (s', r) layout of random_posterior_spec.
Lemma1Report check_lemma1(const PosteriorSpec& spec, const DiffusionSchedule& schedule, int samples,
                          Rng& rng, Lemma1Guidance mode = Lemma1Guidance::clean_estimate,
                          double lambda = 1.0);

struct Prop1Config {
  double delta = 0.5;
  std::vector<double> multipliers{0.1, 0.5, 1.0, 10.0, 50.0};
  int seeds = 20;
  int steps = 10000;
  std::uint64_t seed = 0;
};

/// Guided reverse SDE problem: Gaussian action prior and observed (s', r).
struct Prop1Instance {
  std::string name;
  CausalDynamics dyn;
  Vector prior_mean;
  Matrix prior_cov;  // must satisfy prior_cov <= I
  Vector s;
  Vector s_next;
  double r_target = 0.0;
  GuidanceConfig guidance;
};

/// F_a = 10 I, sigma_phi = I: the transition term alone has Lipschitz constant 100.
Prop1Instance stiff_instance();
/// Ground truth of make_lin_scm(spec) with an observed transition drawn from it.
Prop1Instance lin_scm_instance(const EnvSpec& spec, Rng& rng);

/// Exact constants for a Gaussian prior and linear dynamics.
LipschitzBundle exact_bundle(const Prop1Instance& inst, const DiffusionSchedule& schedule, double delta);

struct Prop1Row {
  double multiplier = 0.0;
  double dt = 0.0;
  int seed = 0;
  bool diverged = false;
  int steps_run = 0;
  double final_norm = 0.0;
};

struct Prop1Report {
  std::string instance;
  double dt_max = 0.0;  // smallest bound over t in [0, 1]
  bool skipped = false;
  std::string note;
  std::vector<Prop1Row> rows;
  int divergences_within_bound = 0;
  int divergences_above_bound = 0;
  bool pass = false;  // no divergence at any multiplier <= 1
};

Prop1Report check_prop1(const Prop1Instance& inst, const DiffusionSchedule& schedule,
                        const Prop1Config& cfg);

struct Prop2Report {
  Vector estimate;
  Vector analytic;
  double cosine = 0.0;
  bool pass = false;
};

/// grad_a E[r | s, do(a)] for the model (exact for linear dynamics).
Vector interventional_reward_gradient(const CausalDynamics& dyn, const Vector& s, const Vector& a);

/// (1/N) sum r_i grad_a log p(s'_i, r_i | s, do(a)) over model rollouts.
Prop2Report check_prop2(const CausalDynamics& dyn, const Vector& s, const Vector& a, int samples,
                        Rng& rng, double min_cosine = 0.95);

struct Theorem1Config {
  std::vector<double> lambdas{0.1, 1.0};
  int rollouts = 1000;
  double discount = 0.99;
  double grid = 0.05;
  int advantage_states = 256;
};

struct Theorem1Row {
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double j_guided = 0.0;
  double j_base = 0.0;
  double gap = 0.0;
  double kl = 0.0;
  double sup_adv_sq = 0.0;
  double bound = 0.0;
  bool holds = false;
};

struct Theorem1Report {
  std::vector<Theorem1Row> rows;
  int held = 0;
};

/// Paired rollouts of the unguided and guided DDPM policies with shared
/// random numbers. The advantage of the unguided policy comes from a
/// quadratic value fit on its discounted returns-to-go plus a one-step
/// lookahead through the environment's SCM, maximised over an action grid.
Theorem1Report check_theorem1(const Environment& env, const Artifacts& artifacts,
                              const DiffusionSchedule& schedule, const GuidanceConfig& guidance,
                              const std::vector<std::uint64_t>& seeds, const Theorem1Config& cfg);

std::string lemma1_csv(const std::vector<Lemma1Report>& reports);
std::string prop1_csv(const std::vector<Prop1Report>& reports);
std::string prop2_csv(const std::vector<Prop2Report>& reports);
std::string theorem1_csv(const Theorem1Report& report);

}  // namespace cgdp
