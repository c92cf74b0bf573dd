#include "cgdp/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgdp {

double GuidanceConfig::lambda_at(int k) const {
  if (lambda_schedule.empty()) return lambda;
  if (k < 1 || k > static_cast<int>(lambda_schedule.size())) {
    throw std::out_of_range("GuidanceConfig: no lambda for step " + std::to_string(k));
  }
  return lambda_schedule[k - 1];
}

bool GuidanceConfig::active() const {
  if (gamma == 0.0 && beta_guid == 0.0) return false;
  if (lambda_schedule.empty()) return lambda != 0.0;
  for (double l : lambda_schedule) {
    if (l != 0.0) return true;
  }
  return false;
}

void GuidanceConfig::validate() const {
  auto check = [](double x, const char* what) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string("guidance: non-finite ") + what);
  };
  check(lambda, "lambda");
  check(gamma, "gamma");
  check(beta_guid, "beta_guid");
  check(r_star, "r_star");
  if (lambda < 0.0) throw std::invalid_argument("guidance: lambda must be >= 0");
  for (double l : lambda_schedule) {
    check(l, "lambda schedule entry");
    if (l < 0.0) throw std::invalid_argument("guidance: lambda schedule entries must be >= 0");
  }
}

Vector guided_noise(const Vector& eps_raw, const Vector& causal_grad, double lambda, double alpha_bar) {
  if (eps_raw.size() != causal_grad.size()) throw std::invalid_argument("guided_noise: dimension mismatch");
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0)) throw std::invalid_argument("guided_noise: alpha_bar outside (0, 1)");
  if (lambda == 0.0) return eps_raw;
  return eps_raw - (lambda * std::sqrt(1.0 - alpha_bar)) * causal_grad;
}

void kl_path_integral(KlAccumulator& acc, const Vector& correction, double g, double dt) {
  if (!(g > 0.0)) throw std::invalid_argument("kl_path_integral: g must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("kl_path_integral: dt must be positive");
  if (correction.isZero(0.0)) return;
  const double term = (correction / g).squaredNorm() * dt;
  acc.records.push_back(term);
  acc.value += term;
}

CausalGuidanceHook::CausalGuidanceHook(const CausalDynamics& dyn, GuidanceConfig cfg,
                                       const DiffusionSchedule& schedule, Vector s,
                                       std::optional<Vector> s_next, std::optional<double> r_observed,
                                       KlAccumulator* kl)
    : dyn_(dyn), cfg_(std::move(cfg)), schedule_(schedule), s_(std::move(s)),
      s_next_(std::move(s_next)), kl_(kl) {
  cfg_.validate();
  if (s_.size() != dyn_.state_dim()) throw std::invalid_argument("guidance hook: state dimension mismatch");
  if (s_next_ && s_next_->size() != dyn_.state_dim()) {
    throw std::invalid_argument("guidance hook: next-state dimension mismatch");
  }
  r_target_ = (r_observed && !cfg_.use_r_star) ? *r_observed : cfg_.r_star;
}

Vector CausalGuidanceHook::causal_grad(const Vector& a_k) const {
  if (!s_next_) {
    // At the predicted mean the transition term is exactly zero; the reward
    // term is differentiated through the predicted next state as well.
    const Vector predicted = dyn_.transition_mean(s_, a_k);
    const double resid = (r_target_ - dyn_.reward_mean(predicted, a_k)) / dyn_.sigma_omega();
    const Vector total = dyn_.reward_action_gradient(predicted, a_k) +
                         dyn_.transition_action_jacobian(s_, a_k).transpose() *
                             dyn_.reward_state_gradient(predicted, a_k);
    return (cfg_.beta_guid * resid) * total;
  }
  return do_intervention_joint_grad(dyn_, s_, a_k, *s_next_, r_target_, cfg_.gamma, cfg_.beta_guid);
}

Vector CausalGuidanceHook::correction(const Vector& a_k, const Vector& eps_raw, int k, int k_prev) {
  const int d = dyn_.action_dim();
  if (a_k.size() != d || eps_raw.size() != d) throw std::invalid_argument("guidance hook: action dimension mismatch");
  const double lambda = cfg_.lambda_at(k);
  if (lambda == 0.0 || (cfg_.gamma == 0.0 && cfg_.beta_guid == 0.0)) return Vector::Zero(d);
  const Vector grad = causal_grad(a_k);
  if (kl_) {
    const double g2 = schedule_.steps * schedule_.beta(k);
    const double dt = static_cast<double>(k - k_prev) / schedule_.steps;
    kl_path_integral(*kl_, (g2 * lambda) * grad, std::sqrt(g2), dt);
  }
  return (lambda * std::sqrt(1.0 - schedule_.alpha_bar(k))) * grad;
}

Matrix CausalGuidanceHook::causal_grad_jacobian(const Vector& a_k) const {
  const int d = dyn_.action_dim();
  if (dyn_.kind() == ModelKind::linear) {
    const Matrix f_a = dyn_.effective_f_a();
    const Vector b_a = dyn_.effective_b_a();
    const double var = dyn_.sigma_omega();
    if (!s_next_) {
      const Vector total = b_a + f_a.transpose() * dyn_.effective_b_s();
      return -(cfg_.beta_guid / var) * total * total.transpose();
    }
    return -cfg_.gamma * (f_a.transpose() * dyn_.sigma_phi_inverse() * f_a) -
           (cfg_.beta_guid / var) * b_a * b_a.transpose();
  }
  Matrix jac(d, d);
  const double h = 1e-5;
  for (int j = 0; j < d; ++j) {
    Vector plus = a_k;
    Vector minus = a_k;
    plus(j) += h;
    minus(j) -= h;
    jac.col(j) = (causal_grad(plus) - causal_grad(minus)) / (2 * h);
  }
  return jac;
}

Matrix CausalGuidanceHook::correction_jacobian(const Vector& a_k, const Vector& eps_raw, int k, int) {
  const int d = dyn_.action_dim();
  if (a_k.size() != d || eps_raw.size() != d) throw std::invalid_argument("guidance hook: action dimension mismatch");
  const double lambda = cfg_.lambda_at(k);
  if (lambda == 0.0 || (cfg_.gamma == 0.0 && cfg_.beta_guid == 0.0)) return Matrix::Zero(d, d);
  return (lambda * std::sqrt(1.0 - schedule_.alpha_bar(k))) * causal_grad_jacobian(a_k);
}

CausalGuidanceHook make_guidance_hook(const CausalDynamics& dyn, const GuidanceConfig& cfg,
                                      const DiffusionSchedule& schedule, const Vector& s,
                                      const std::optional<Vector>& s_next,
                                      const std::optional<double>& r_observed, KlAccumulator* kl) {
  return CausalGuidanceHook(dyn, cfg, schedule, s, s_next, r_observed, kl);
}

double LipschitzBundle::g_squared(double t) const {
  return beta_start + t * (beta_end - beta_start);
}

void LipschitzBundle::validate() const {
  if (l_f < 0.0 || l_s < 0.0 || l_phi < 0.0 || l_omega < 0.0) {
    throw std::invalid_argument("LipschitzBundle: constants must be >= 0");
  }
  if (!(delta >= 0.0 && delta < 1.0)) throw std::invalid_argument("LipschitzBundle: delta outside [0, 1)");
  if (beta_start < 0.0 || beta_end < 0.0) throw std::invalid_argument("LipschitzBundle: negative beta(t)");
}

LipschitzBundle bundle_for_schedule(const DiffusionSchedule& schedule, double delta) {
  LipschitzBundle b;
  b.delta = delta;
  b.beta_start = schedule.steps * schedule.beta(1);
  b.beta_end = schedule.steps * schedule.beta(schedule.steps);
  b.l_f = 0.5 * std::max(b.beta_start, b.beta_end);
  return b;
}

StepBound stability_max_step(const LipschitzBundle& bundle, double gamma, double beta_guid,
                             double t, double cap) {
  bundle.validate();
  const double denom = bundle.l_f + bundle.g_squared(t) * bundle.l_s + std::abs(gamma) * bundle.l_phi +
                       std::abs(beta_guid) * bundle.l_omega;
  if (!(denom > 0.0)) return {cap, true};
  return {bundle.delta / denom, false};
}

LipschitzBundle estimate_lipschitz(const CausalDynamics& dyn, const NoisePredictor& net,
                                   const DiffusionSchedule& schedule, int probes, Rng& rng,
                                   double delta) {
  if (probes < 100) throw std::invalid_argument("estimate_lipschitz: need at least 100 probes");
  LipschitzBundle b = bundle_for_schedule(schedule, delta);
  b.probes = probes;
  const int n = dyn.state_dim();
  const int d = dyn.action_dim();
  auto ratio = [](const Vector& dy, const Vector& dx) {
    const double den = dx.norm();
    return den > 0.0 ? dy.norm() / den : 0.0;
  };
  for (int p = 0; p < probes; ++p) {
    const int k = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(schedule.steps)));
    const Vector s = rng.normal_vector(n);
    const Vector a1 = rng.normal_vector(d);
    const Vector a2 = a1 + 0.1 * rng.normal_vector(d);
    const double ab = schedule.alpha_bar(k);
    if (ab < 1.0) {
      const Vector s1 = score_from_noise(net.predict(a1, s, k), ab);
      const Vector s2 = score_from_noise(net.predict(a2, s, k), ab);
      b.l_s = std::max(b.l_s, ratio(s1 - s2, a1 - a2));
    }
  }
  if (dyn.kind() == ModelKind::linear) {
    const Matrix f_a = dyn.effective_f_a();
    b.l_phi = spectral_norm(f_a.transpose() * dyn.sigma_phi_inverse() * f_a);
    b.l_omega = dyn.effective_b_a().squaredNorm() / dyn.sigma_omega();
    b.exact = true;
    return b;
  }
  b.exact = false;
  for (int p = 0; p < probes; ++p) {
    const Vector s = rng.normal_vector(n);
    const Vector s_next = rng.normal_vector(n);
    const double r = rng.normal();
    const Vector a1 = rng.normal_vector(d);
    const Vector a2 = a1 + 0.1 * rng.normal_vector(d);
    b.l_phi = std::max(b.l_phi, ratio(transition_logpdf_grad(dyn, s, a1, s_next).grad -
                                          transition_logpdf_grad(dyn, s, a2, s_next).grad,
                                      a1 - a2));
    b.l_omega = std::max(b.l_omega, ratio(reward_logpdf_grad(dyn, s_next, a1, r).grad -
                                              reward_logpdf_grad(dyn, s_next, a2, r).grad,
                                          a1 - a2));
  }
  return b;
}

ScoreFn gaussian_prior_score(const LipschitzBundle& bundle, Vector mean, Matrix cov) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw std::invalid_argument("gaussian_prior_score: covariance shape mismatch");
  }
  cholesky_lower(cov, "gaussian_prior_score covariance");
  const double b0 = bundle.beta_start;
  const double b1 = bundle.beta_end;
  return [b0, b1, mean = std::move(mean), cov = std::move(cov)](const Vector& a, double t) {
    const double integral = b0 * t + 0.5 * (b1 - b0) * t * t;
    const double ab = std::exp(-integral);
    const Matrix cov_t = ab * cov + (1.0 - ab) * Matrix::Identity(cov.rows(), cov.cols());
    return Vector(-cov_t.ldlt().solve(a - std::sqrt(ab) * mean));
  };
}

ScoreFn predictor_score(const NoisePredictor& net, const DiffusionSchedule& schedule, Vector s) {
  return [&net, &schedule, s = std::move(s)](const Vector& a, double t) {
    const int steps = schedule.steps;
    const int k = std::clamp(static_cast<int>(std::ceil(t * steps)), 1, steps);
    return score_from_noise(net.predict(a, s, k), schedule.alpha_bar(k));
  };
}

EulerResult euler_maruyama(const DriftFn& drift, const DiffusionFn& diffusion, Vector a0,
                           double dt, int steps, Rng& rng, bool record) {
  if (!(dt > 0.0)) throw std::invalid_argument("euler_maruyama: dt must be positive");
  EulerResult out;
  Vector a = std::move(a0);
  const double sqrt_dt = std::sqrt(dt);
  if (record) out.trajectory.push_back(a);
  for (int n = 0; n < steps; ++n) {
    const double t = n * dt;
    const Vector z = rng.normal_vector(a.size());
    a = a + drift(a, t) * dt + (diffusion(t) * sqrt_dt) * z;
    out.steps_run = n + 1;
    if (record) out.trajectory.push_back(a);
    if (!a.allFinite() || a.norm() > 1e6) {
      out.diverged = true;
      break;
    }
  }
  out.terminal = std::move(a);
  return out;
}

EulerResult euler_maruyama_guided(const CausalDynamics& dyn, const ScoreFn& score,
                                  const LipschitzBundle& bundle, const GuidanceConfig& cfg,
                                  const Vector& s, const Vector& s_next, double r_target, double dt,
                                  int steps, Rng& rng, bool record) {
  const double gamma = cfg.gamma;
  const double beta_guid = cfg.beta_guid;
  auto reverse_time = [](double tau) { return std::max(0.0, 1.0 - tau); };
  DriftFn drift = [&](const Vector& a, double tau) {
    const double t = reverse_time(tau);
    const double beta = bundle.g_squared(t);
    Vector out = 0.5 * beta * a + beta * score(a, t);
    if (gamma != 0.0 || beta_guid != 0.0) {
      out += do_intervention_joint_grad(dyn, s, a, s_next, r_target, gamma, beta_guid);
    }
    return out;
  };
  DiffusionFn diffusion = [&](double tau) { return std::sqrt(bundle.g_squared(reverse_time(tau))); };
  Vector a0 = rng.normal_vector(dyn.action_dim());
  return euler_maruyama(drift, diffusion, std::move(a0), dt, steps, rng, record);
}

}  // namespace cgdp
