#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "cgdp/diffusion.hpp"
#include "cgdp/dynamics.hpp"

namespace cgdp {

/// Coefficients of the causal guidance term. `beta_guid` weights the reward
/// density and is unrelated to the diffusion noise schedule.
struct GuidanceConfig {
  double lambda = 1.0;
  // Optional per-step scale, entry k - 1 for diffusion step k; overrides lambda.
  std::vector<double> lambda_schedule;
  double gamma = 1.0;
  double beta_guid = 1.0;
  double r_star = 0.0;
  bool use_r_star = false;

  double lambda_at(int k) const;
  /// False when every correction is zero by construction.
  bool active() const;
  void validate() const;
};

/// eps_cg = eps_raw - lambda sqrt(1 - alpha_bar) grad. Returns eps_raw
/// itself when lambda is zero.
Vector guided_noise(const Vector& eps_raw, const Vector& causal_grad, double lambda, double alpha_bar);

/// Running path integral of ||drift correction / g||^2 dt.
struct KlAccumulator {
  double value = 0.0;
  std::vector<double> records;
};

void kl_path_integral(KlAccumulator& acc, const Vector& correction, double g, double dt);

/// Guidance from the causal dynamics at a fixed environment state.
///
/// When `s_next` is absent (acting before the transition is observed) the
/// model's predicted next-state mean at the candidate action stands in. The
/// reward target is the observed reward when one is given and use_r_star is
/// off, otherwise r_star. Every correction is also charged to `kl`, with
/// the drift difference g^2 lambda grad, g^2 = K beta_k and dt = (k - k_prev) / K.
class CausalGuidanceHook : public SamplerGuidance {
 public:
  CausalGuidanceHook(const CausalDynamics& dyn, GuidanceConfig cfg, const DiffusionSchedule& schedule,
                     Vector s, std::optional<Vector> s_next = std::nullopt,
                     std::optional<double> r_observed = std::nullopt, KlAccumulator* kl = nullptr);

  Vector correction(const Vector& a_k, const Vector& eps_raw, int k, int k_prev) override;
  Matrix correction_jacobian(const Vector& a_k, const Vector& eps_raw, int k, int k_prev) override;

  /// The causal gradient at a_k, before the lambda sqrt(1 - alpha_bar) scale.
  Vector causal_grad(const Vector& a_k) const;
  double r_target() const { return r_target_; }

 private:
  Matrix causal_grad_jacobian(const Vector& a_k) const;

  const CausalDynamics& dyn_;
  GuidanceConfig cfg_;
  const DiffusionSchedule& schedule_;
  Vector s_;
  std::optional<Vector> s_next_;
  double r_target_ = 0.0;
  KlAccumulator* kl_ = nullptr;
};

CausalGuidanceHook make_guidance_hook(const CausalDynamics& dyn, const GuidanceConfig& cfg,
                                      const DiffusionSchedule& schedule, const Vector& s,
                                      const std::optional<Vector>& s_next = std::nullopt,
                                      const std::optional<double>& r_observed = std::nullopt,
                                      KlAccumulator* kl = nullptr);

/// Lipschitz constants of the guided reverse SDE. The diffusion coefficient
/// is g(t)^2 = beta(t) = K (beta_1 + t (beta_K - beta_1)) for t in [0, 1].
struct LipschitzBundle {
  double l_f = 0.0;
  double l_s = 0.0;
  double l_phi = 0.0;
  double l_omega = 0.0;
  double delta = 0.5;
  double beta_start = 0.0;  // beta(0)
  double beta_end = 0.0;    // beta(1)
  bool exact = true;        // false for probe-based lower estimates
  int probes = 0;

  double g_squared(double t) const;
  void validate() const;
};

/// Continuous-time view of a discrete schedule: beta(t) = K beta_{k(t)}.
LipschitzBundle bundle_for_schedule(const DiffusionSchedule& schedule, double delta);

struct StepBound {
  double dt = 0.0;
  bool capped = false;  // denominator was zero; dt is the cap
};

/// delta / (L_f + g(t)^2 L_s + |gamma| L_phi + |beta_guid| L_omega).
StepBound stability_max_step(const LipschitzBundle& bundle, double gamma, double beta_guid,
                             double t, double cap = 1.0);

/// Linear dynamics: spectral-norm constants. MLP dynamics and the noise
/// predictor: largest observed difference ratio over random probe pairs.
LipschitzBundle estimate_lipschitz(const CausalDynamics& dyn, const NoisePredictor& net,
                                   const DiffusionSchedule& schedule, int probes, Rng& rng,
                                   double delta = 0.5);

using ScoreFn = std::function<Vector(const Vector& a, double t)>;

/// Score of a Gaussian action prior N(mean, cov) diffused to time t.
ScoreFn gaussian_prior_score(const LipschitzBundle& bundle, Vector mean, Matrix cov);
/// Score read off a noise predictor at step ceil(t K) (at least 1).
ScoreFn predictor_score(const NoisePredictor& net, const DiffusionSchedule& schedule, Vector s);

struct EulerResult {
  std::vector<Vector> trajectory;  // only when recording
  Vector terminal;
  bool diverged = false;
  int steps_run = 0;
};

using DriftFn = std::function<Vector(const Vector& a, double time)>;
using DiffusionFn = std::function<double(double time)>;

/// a_{n+1} = a_n + drift(a_n, t_n) dt + diffusion(t_n) sqrt(dt) z, t_n = n dt.
/// Stops early and flags divergence once ||a|| > 1e6 or a is non-finite.
EulerResult euler_maruyama(const DriftFn& drift, const DiffusionFn& diffusion, Vector a0,
                           double dt, int steps, Rng& rng, bool record = false);

/// Guided reverse-time VP-SDE integrated from t = 1 towards t = 0 (time is
/// held at 0 once reached), starting from N(0, I):
///   da = [1/2 beta(t) a + beta(t) score + gamma grad log p_phi + beta_guid grad log p_omega] dtau
///        + sqrt(beta(t)) dw
/// with the guidance evaluated at the observed (s_next, r_target).
EulerResult euler_maruyama_guided(const CausalDynamics& dyn, const ScoreFn& score,
                                  const LipschitzBundle& bundle, const GuidanceConfig& cfg,
                                  const Vector& s, const Vector& s_next, double r_target, double dt,
                                  int steps, Rng& rng, bool record = false);

}  // namespace cgdp
