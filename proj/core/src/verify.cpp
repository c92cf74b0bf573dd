#include "cgdp/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace cgdp {

void PosteriorSpec::validate() const {
  const Eigen::Index d = prior_mean.size();
  const Eigen::Index m_rows = y.size();
  if (d < 1 || m_rows < 1) throw std::invalid_argument("PosteriorSpec: empty action or observation");
  if (prior_cov.rows() != d || prior_cov.cols() != d || m.rows() != m_rows || m.cols() != d ||
      sigma_y.rows() != m_rows || sigma_y.cols() != m_rows) {
    throw std::invalid_argument("PosteriorSpec: inconsistent shapes");
  }
  if (!is_symmetric(prior_cov) || !is_symmetric(sigma_y)) {
    throw std::invalid_argument("PosteriorSpec: covariances must be symmetric");
  }
  cholesky_lower(prior_cov, "PosteriorSpec prior covariance");
  cholesky_lower(sigma_y, "PosteriorSpec observation covariance");
}

GaussianMoments gaussian_posterior(const PosteriorSpec& spec) {
  spec.validate();
  const Matrix innovation = spec.sigma_y + spec.m * spec.prior_cov * spec.m.transpose();
  Eigen::LLT<Matrix> llt(innovation);
  if (llt.info() != Eigen::Success) throw std::domain_error("gaussian_posterior: singular innovation matrix");
  const Matrix gain = llt.solve(spec.m * spec.prior_cov).transpose();  // prior_cov M^T S^-1
  GaussianMoments out;
  out.mean = spec.prior_mean + gain * (spec.y - spec.m * spec.prior_mean);
  out.cov = spec.prior_cov - gain * spec.m * spec.prior_cov;
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

PosteriorSpec random_posterior_spec(int state_dim, int action_dim, Rng& rng) {
  if (state_dim < 1 || action_dim < 1) throw std::invalid_argument("random_posterior_spec: invalid dims");
  const int n = state_dim;
  const int d = action_dim;
  PosteriorSpec spec;
  spec.prior_mean = 0.5 * rng.normal_vector(d);
  Matrix q = Matrix::NullaryExpr(d, d, [&] { return rng.normal(); });
  Eigen::HouseholderQR<Matrix> qr(q);
  const Matrix basis = qr.householderQ();
  Vector eig(d);
  for (int j = 0; j < d; ++j) eig(j) = 0.3 + 0.6 * rng.uniform();
  spec.prior_cov = basis * eig.asDiagonal() * basis.transpose();
  spec.prior_cov = 0.5 * (spec.prior_cov + spec.prior_cov.transpose());
  spec.m = Matrix::NullaryExpr(n + 1, d, [&] { return 0.5 * rng.normal(); });
  spec.sigma_y = Matrix::Zero(n + 1, n + 1);
  for (int i = 0; i < n; ++i) spec.sigma_y(i, i) = 0.5 + 0.5 * rng.uniform();
  spec.sigma_y(n, n) = 0.5 + 0.5 * rng.uniform();
  const Vector a_true = gaussian_sample(spec.prior_mean, cholesky_lower(spec.prior_cov, "prior"), rng);
  spec.y = spec.m * a_true;
  for (int i = 0; i <= n; ++i) spec.y(i) += std::sqrt(spec.sigma_y(i, i)) * rng.normal();
  return spec;
}

namespace {

// Cov_k = alpha_bar Sigma + (1 - alpha_bar) I for the diffused Gaussian prior.
std::vector<Matrix> diffused_precisions(const Matrix& prior_cov, const DiffusionSchedule& schedule) {
  const Eigen::Index d = prior_cov.rows();
  std::vector<Matrix> out(schedule.steps + 1);
  for (int k = 0; k <= schedule.steps; ++k) {
    const double ab = schedule.alpha_bar(k);
    out[k] = (ab * prior_cov + (1.0 - ab) * Matrix::Identity(d, d)).inverse();
  }
  return out;
}

class GaussianPriorNoise : public NoisePredictor {
 public:
  GaussianPriorNoise(Vector mean, const Matrix& cov, const DiffusionSchedule& schedule)
      : mean_(std::move(mean)), schedule_(schedule), precision_(diffused_precisions(cov, schedule)) {}

  int action_dim() const override { return static_cast<int>(mean_.size()); }

  Vector predict(const Vector& a_k, const Vector&, int k) const override {
    const double ab = schedule_.alpha_bar(k);
    return std::sqrt(1.0 - ab) * (precision_[k] * (a_k - std::sqrt(ab) * mean_));
  }

 private:
  Vector mean_;
  const DiffusionSchedule& schedule_;
  std::vector<Matrix> precision_;
};

// Likelihood of y given a^k, with the clean action integrated out under the
// Gaussian prior: a0 | a^k ~ N(J a^k + c, C), so y | a^k ~ N(M (J a^k + c), sigma_y + M C M^T).
class CleanEstimateGuidance : public SamplerGuidance {
 public:
  CleanEstimateGuidance(const PosteriorSpec& spec, const DiffusionSchedule& schedule, double lambda)
      : spec_(spec), schedule_(schedule), lambda_(lambda) {
    const Eigen::Index d = spec.prior_mean.size();
    const std::vector<Matrix> precision = diffused_precisions(spec.prior_cov, schedule);
    jac_.resize(schedule.steps + 1);
    offset_.resize(schedule.steps + 1);
    gain_.resize(schedule.steps + 1);
    for (int k = 1; k <= schedule.steps; ++k) {
      const double ab = schedule.alpha_bar(k);
      const Matrix identity = Matrix::Identity(d, d);
      jac_[k] = (identity - (1.0 - ab) * precision[k]) / std::sqrt(ab);
      offset_[k] = (1.0 - ab) * (precision[k] * spec.prior_mean);
      Matrix clean_cov = ((1.0 - ab) / std::sqrt(ab)) * jac_[k];
      clean_cov = 0.5 * (clean_cov + clean_cov.transpose());
      const Matrix s = spec.sigma_y + spec.m * clean_cov * spec.m.transpose();
      gain_[k] = jac_[k].transpose() * spec.m.transpose() * s.inverse();
    }
  }

  Vector correction(const Vector& a_k, const Vector&, int k, int) override {
    const Vector clean = jac_[k] * a_k + offset_[k];
    const Vector grad = gain_[k] * (spec_.y - spec_.m * clean);
    return (lambda_ * std::sqrt(1.0 - schedule_.alpha_bar(k))) * grad;
  }

 private:
  const PosteriorSpec& spec_;
  const DiffusionSchedule& schedule_;
  double lambda_;
  std::vector<Matrix> jac_;
  std::vector<Vector> offset_;
  std::vector<Matrix> gain_;
};

CausalDynamics stacked_observation_dynamics(const PosteriorSpec& spec) {
  const Eigen::Index n = spec.y.size() - 1;
  const Eigen::Index d = spec.prior_mean.size();
  if (n < 1) throw std::invalid_argument("check_lemma1: noisy_action mode needs an (s', r) observation");
  if (!spec.sigma_y.row(n).head(n).isZero() || !spec.sigma_y.col(n).head(n).isZero()) {
    throw std::invalid_argument("check_lemma1: noisy_action mode needs block-diagonal sigma_y");
  }
  return CausalDynamics::linear(CausalMasks::ones(static_cast<int>(n), static_cast<int>(d)),
                                Matrix::Zero(n, n), spec.m.topRows(n), Vector::Zero(n),
                                spec.m.row(n).transpose(), spec.sigma_y.topLeftCorner(n, n), spec.sigma_y(n, n));
}

GaussianMoments sample_moments(const Matrix& samples) {
  GaussianMoments out;
  out.mean = samples.rowwise().mean();
  const Matrix centered = samples.colwise() - out.mean;
  out.cov = centered * centered.transpose() / static_cast<double>(samples.cols() - 1);
  return out;
}

}  // namespace

Lemma1Report check_lemma1(const PosteriorSpec& spec, const DiffusionSchedule& schedule, int samples,
                          Rng& rng, Lemma1Guidance mode, double lambda) {
  spec.validate();
  if (schedule.steps < 500) throw std::invalid_argument("check_lemma1: need at least 500 diffusion steps");
  if (samples < 10000) throw std::invalid_argument("check_lemma1: need at least 10000 samples");
  const bool guided = mode != Lemma1Guidance::none && lambda != 0.0;
  Lemma1Report report;
  report.target = guided ? gaussian_posterior(spec) : GaussianMoments{spec.prior_mean, spec.prior_cov};

  const GaussianPriorNoise prior(spec.prior_mean, spec.prior_cov, schedule);
  std::unique_ptr<SamplerGuidance> hook;
  CausalDynamics dyn;
  const Eigen::Index d = spec.prior_mean.size();
  if (guided && mode == Lemma1Guidance::clean_estimate) {
    hook = std::make_unique<CleanEstimateGuidance>(spec, schedule, lambda);
  } else if (guided) {
    dyn = stacked_observation_dynamics(spec);
    GuidanceConfig g;
    g.lambda = lambda;
    const Eigen::Index n = spec.y.size() - 1;
    hook = std::make_unique<CausalGuidanceHook>(dyn, g, schedule, Vector::Zero(n), Vector(spec.y.head(n)),
                                                spec.y(n));
  }
  Matrix draws(d, samples);
  const Vector no_state;
  for (int i = 0; i < samples; ++i) draws.col(i) = ddpm_sample(prior, schedule, no_state, rng, hook.get());

  report.sample = sample_moments(draws);
  report.standard_error = (report.sample.cov.diagonal() / static_cast<double>(samples)).cwiseSqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double z = std::abs(report.sample.mean(j) - report.target.mean(j)) / report.standard_error(j);
    report.max_mean_z = std::max(report.max_mean_z, z);
  }
  report.cov_rel_error = (report.sample.cov - report.target.cov).norm() / report.target.cov.norm();
  report.pass = report.max_mean_z < 3.0 && report.cov_rel_error < 0.1;
  return report;
}

Prop1Instance stiff_instance() {
  Prop1Instance inst;
  inst.name = "stiff";
  const int n = 2;
  const int d = 2;
  inst.dyn = CausalDynamics::linear(CausalMasks::ones(n, d), Matrix::Zero(n, n), 10.0 * Matrix::Identity(n, d),
                                    Vector::Zero(n), Vector::Zero(d), Matrix::Identity(n, n), 1.0);
  inst.prior_mean = Vector::Zero(d);
  inst.prior_cov = Matrix::Identity(d, d);
  inst.s = Vector::Zero(n);
  inst.s_next = Vector::Constant(n, 1.0);
  inst.r_target = 0.0;
  return inst;
}

Prop1Instance lin_scm_instance(const EnvSpec& spec, Rng& rng) {
  const GroundTruthScm scm = make_lin_scm(spec);
  Prop1Instance inst;
  inst.name = "lin-scm";
  inst.dyn = CausalDynamics::from_scm(scm, exact_masks(scm));
  inst.prior_mean = Vector::Zero(scm.d);
  inst.prior_cov = 0.5 * Matrix::Identity(scm.d, scm.d);
  inst.s = rng.normal_vector(scm.n);
  const Vector a = rng.normal_vector(scm.d).unaryExpr([](double x) { return std::clamp(x, -1.0, 1.0); });
  auto [s_next, r] = inst.dyn.sample(inst.s, a, rng);
  inst.s_next = s_next;
  inst.r_target = r;
  return inst;
}

LipschitzBundle exact_bundle(const Prop1Instance& inst, const DiffusionSchedule& schedule, double delta) {
  if (inst.dyn.kind() != ModelKind::linear) throw std::invalid_argument("exact_bundle: linear dynamics only");
  LipschitzBundle b = bundle_for_schedule(schedule, delta);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(inst.prior_cov);
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmin > 0.0)) throw std::invalid_argument("exact_bundle: prior covariance must be positive definite");
  // ||(alpha_bar Sigma + (1 - alpha_bar) I)^-1|| is largest at one end of the path.
  b.l_s = std::max(1.0, 1.0 / lmin);
  const Matrix f_a = inst.dyn.effective_f_a();
  b.l_phi = spectral_norm(f_a.transpose() * inst.dyn.sigma_phi_inverse() * f_a);
  b.l_omega = inst.dyn.effective_b_a().squaredNorm() / inst.dyn.sigma_omega();
  b.exact = true;
  return b;
}

Prop1Report check_prop1(const Prop1Instance& inst, const DiffusionSchedule& schedule,
                        const Prop1Config& cfg) {
  if (cfg.seeds < 1 || cfg.steps < 1) throw std::invalid_argument("check_prop1: need seeds and steps");
  Prop1Report report;
  report.instance = inst.name;
  const LipschitzBundle bundle = exact_bundle(inst, schedule, cfg.delta);
  double dt_max = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 100; ++i) {
    const StepBound bound = stability_max_step(bundle, inst.guidance.gamma, inst.guidance.beta_guid, i / 100.0);
    dt_max = std::min(dt_max, bound.dt);
  }
  report.dt_max = dt_max;
  if (!(dt_max > 0.0)) {
    report.skipped = true;
    report.note = "step bound is zero (delta = 0); sweep skipped";
    report.pass = true;
    return report;
  }
  const ScoreFn score = gaussian_prior_score(bundle, inst.prior_mean, inst.prior_cov);
  for (std::size_t m = 0; m < cfg.multipliers.size(); ++m) {
    const double mult = cfg.multipliers[m];
    for (int seed = 0; seed < cfg.seeds; ++seed) {
      Rng rng = Rng::derive(cfg.seed, "prop1/" + std::to_string(m) + "/" + std::to_string(seed));
      const EulerResult res = euler_maruyama_guided(inst.dyn, score, bundle, inst.guidance, inst.s, inst.s_next,
                                                    inst.r_target, mult * dt_max, cfg.steps, rng);
      Prop1Row row;
      row.multiplier = mult;
      row.dt = mult * dt_max;
      row.seed = seed;
      row.diverged = res.diverged;
      row.steps_run = res.steps_run;
      row.final_norm = res.terminal.norm();
      if (row.diverged) {
        if (mult <= 1.0) {
          ++report.divergences_within_bound;
        } else {
          ++report.divergences_above_bound;
        }
      }
      report.rows.push_back(row);
    }
  }
  report.pass = report.divergences_within_bound == 0;
  return report;
}

Vector interventional_reward_gradient(const CausalDynamics& dyn, const Vector& s, const Vector& a) {
  const Vector mean_next = dyn.transition_mean(s, a);
  return dyn.transition_action_jacobian(s, a).transpose() * dyn.reward_state_gradient(mean_next, a) +
         dyn.reward_action_gradient(mean_next, a);
}

Prop2Report check_prop2(const CausalDynamics& dyn, const Vector& s, const Vector& a, int samples, Rng& rng,
                        double min_cosine) {
  if (samples < 1) throw std::invalid_argument("check_prop2: need at least one sample");
  Prop2Report report;
  report.estimate = Vector::Zero(a.size());
  for (int i = 0; i < samples; ++i) {
    auto [s_next, r] = dyn.sample(s, a, rng);
    report.estimate += r * joint_logpdf_grad(dyn, s, a, s_next, r).grad;
  }
  report.estimate /= samples;
  report.analytic = interventional_reward_gradient(dyn, s, a);
  const double denom = report.estimate.norm() * report.analytic.norm();
  report.cosine = denom > 0.0 ? report.estimate.dot(report.analytic) / denom : 0.0;
  report.pass = report.cosine >= min_cosine;
  return report;
}

namespace {

Matrix ddpm_columns(const NoiseNet& net, const DiffusionSchedule& schedule, const Matrix& states, Rng& rng,
                    std::vector<CausalGuidanceHook>* hooks) {
  const int d = net.action_dim();
  const Eigen::Index batch = states.cols();
  Matrix a(d, batch);
  for (Eigen::Index b = 0; b < batch; ++b) a.col(b) = rng.normal_vector(d);
  Matrix x(d + states.rows() + 1, batch);
  x.middleRows(d, states.rows()) = states;
  for (int k = schedule.steps; k >= 1; --k) {
    x.topRows(d) = a;
    x.bottomRows(1).setConstant(static_cast<double>(k) / schedule.steps);
    Matrix eps = net.net().forward(x);
    if (hooks) {
      for (Eigen::Index b = 0; b < batch; ++b) eps.col(b) -= (*hooks)[b].correction(a.col(b), eps.col(b), k, k - 1);
    }
    const double beta = schedule.beta(k);
    a = (a - (beta / std::sqrt(1.0 - schedule.alpha_bar(k))) * eps) / std::sqrt(schedule.alpha(k));
    if (k > 1) {
      for (Eigen::Index b = 0; b < batch; ++b) a.col(b) += std::sqrt(beta) * rng.normal_vector(d);
    }
  }
  return a;
}

struct RolloutBatch {
  std::vector<Matrix> states;  // per step, n x rollouts
  Matrix rewards;              // rollouts x horizon
  double j = 0.0;
  double kl_per_action = 0.0;
};

RolloutBatch paired_rollouts(const Environment& env, const Artifacts& art, const DiffusionSchedule& schedule,
                             const GuidanceConfig* guidance, std::uint64_t seed, int rollouts, double discount) {
  Rng env_rng = Rng::derive(seed, "theorem1/env");
  Rng policy_rng = Rng::derive(seed, "theorem1/policy");
  const int horizon = env.horizon();
  std::vector<EnvState> live(rollouts);
  for (EnvState& st : live) st = env.reset(env_rng);
  RolloutBatch out;
  out.rewards = Matrix::Zero(rollouts, horizon);
  KlAccumulator kl;
  long actions = 0;
  for (int t = 0; t < horizon; ++t) {
    Matrix obs(env.state_dim(), rollouts);
    for (int b = 0; b < rollouts; ++b) obs.col(b) = live[b].obs;
    out.states.push_back(obs);
    std::vector<CausalGuidanceHook> hooks;
    if (guidance) {
      hooks.reserve(rollouts);
      for (int b = 0; b < rollouts; ++b) {
        hooks.emplace_back(art.dyn, *guidance, schedule, obs.col(b), std::nullopt, std::nullopt, &kl);
      }
    }
    const Matrix a = ddpm_columns(art.net, schedule, obs, policy_rng, guidance ? &hooks : nullptr);
    actions += rollouts;
    for (int b = 0; b < rollouts; ++b) {
      if (live[b].done) continue;
      StepOutcome o = env.step(live[b], a.col(b), env_rng);
      out.rewards(b, t) = o.reward;
      live[b] = std::move(o.state);
    }
  }
  double total = 0.0;
  for (int b = 0; b < rollouts; ++b) {
    double g = 0.0;
    for (int t = horizon - 1; t >= 0; --t) g = out.rewards(b, t) + discount * g;
    total += g;
  }
  out.j = total / rollouts;
  out.kl_per_action = actions > 0 ? kl.value / static_cast<double>(actions) : 0.0;
  return out;
}

// V(s) = c + p.s + s^T P s fitted by least squares.
struct QuadraticValue {
  double c = 0.0;
  Vector p;
  Matrix q;

  double operator()(const Vector& s) const { return c + p.dot(s) + s.dot(q * s); }
};

Vector quadratic_features(const Vector& s) {
  const Eigen::Index n = s.size();
  Vector f(1 + n + n * (n + 1) / 2);
  f(0) = 1.0;
  f.segment(1, n) = s;
  Eigen::Index idx = 1 + n;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) f(idx++) = s(i) * s(j);
  }
  return f;
}

QuadraticValue fit_value(const RolloutBatch& base, double discount) {
  const Eigen::Index n = base.states.front().rows();
  const Eigen::Index rollouts = base.rewards.rows();
  const Eigen::Index horizon = base.rewards.cols();
  const Eigen::Index p = 1 + n + n * (n + 1) / 2;
  Matrix gram = Matrix::Zero(p, p);
  Vector rhs = Vector::Zero(p);
  for (Eigen::Index b = 0; b < rollouts; ++b) {
    double g = 0.0;
    for (Eigen::Index t = horizon - 1; t >= 0; --t) {
      g = base.rewards(b, t) + discount * g;
      const Vector f = quadratic_features(base.states[t].col(b));
      gram.selfadjointView<Eigen::Lower>().rankUpdate(f);
      rhs += g * f;
    }
  }
  gram = gram.selfadjointView<Eigen::Lower>();
  gram.diagonal().array() += 1e-9 * (gram.trace() / p);
  const Vector w = gram.ldlt().solve(rhs);
  QuadraticValue v;
  v.c = w(0);
  v.p = w.segment(1, n);
  v.q = Matrix::Zero(n, n);
  Eigen::Index idx = 1 + n;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      if (i == j) {
        v.q(i, i) = w(idx++);
      } else {
        v.q(i, j) = 0.5 * w(idx);
        v.q(j, i) = 0.5 * w(idx++);
      }
    }
  }
  return v;
}

// Largest |c + lin . a + a^T h a - v_s| over the grid, one axis at a time:
// fixing a_j folds its terms into the constant and the remaining linear
// coefficients, so the innermost axis costs three flops per point.
void grid_sweep(const Matrix& h, const Vector& lin, double c, int j, const std::vector<double>& axis, double v_s,
                double& best) {
  const Eigen::Index d = h.rows();
  if (j == d - 1) {
    const double l = lin(j);
    const double q = h(j, j);
    for (double x : axis) best = std::max(best, std::abs(c + x * (l + q * x) - v_s));
    return;
  }
  Vector next(d);
  for (double x : axis) {
    next.tail(d - j - 1) = lin.tail(d - j - 1) + 2.0 * x * h.col(j).tail(d - j - 1);
    grid_sweep(h, next, c + x * (lin(j) + h(j, j) * x), j + 1, axis, v_s, best);
  }
}

double sup_abs_advantage(const GroundTruthScm& scm, const QuadraticValue& v, const Vector& s, double discount,
                         double grid) {
  const int per_axis = static_cast<int>(std::lround(2.0 / grid)) + 1;
  std::vector<double> axis(per_axis);
  for (int i = 0; i < per_axis; ++i) axis[i] = -1.0 + i * grid;
  // Q(s, a) = b_s . m + b_a . a + discount (V(m) + tr(Q_v Sigma_phi)) with m = F_s s + F_a a.
  const Vector drift = scm.f_s * s;
  const Matrix h = discount * scm.f_a.transpose() * v.q * scm.f_a;
  const Vector lin = scm.f_a.transpose() * (scm.b_s + discount * (v.p + 2.0 * v.q * drift)) + scm.b_a;
  const double c = scm.b_s.dot(drift) + discount * (v(drift) + (v.q * scm.sigma_phi).trace());
  double best = 0.0;
  grid_sweep(h, lin, c, 0, axis, v(s), best);
  return best;
}

}  // namespace

Theorem1Report check_theorem1(const Environment& env, const Artifacts& artifacts,
                              const DiffusionSchedule& schedule, const GuidanceConfig& guidance,
                              const std::vector<std::uint64_t>& seeds, const Theorem1Config& cfg) {
  if (env.kind() != EnvKind::lin_scm) throw std::invalid_argument("check_theorem1: needs a lin-scm environment");
  if (cfg.rollouts < 2 || cfg.advantage_states < 1 || !(cfg.grid > 0.0)) {
    throw std::invalid_argument("check_theorem1: invalid configuration");
  }
  if (!(cfg.discount >= 0.0 && cfg.discount < 1.0)) throw std::invalid_argument("check_theorem1: discount outside [0, 1)");
  const GroundTruthScm& scm = env.scm();
  Theorem1Report report;
  for (std::uint64_t seed : seeds) {
    const RolloutBatch base = paired_rollouts(env, artifacts, schedule, nullptr, seed, cfg.rollouts, cfg.discount);
    const QuadraticValue value = fit_value(base, cfg.discount);
    for (double lambda : cfg.lambdas) {
      GuidanceConfig g = guidance;
      g.lambda = lambda;
      g.lambda_schedule.clear();
      g.use_r_star = true;
      g.r_star = artifacts.r_star;
      const RolloutBatch guided = paired_rollouts(env, artifacts, schedule, g.active() ? &g : nullptr, seed,
                                                  cfg.rollouts, cfg.discount);
      Theorem1Row row;
      row.seed = seed;
      row.lambda = lambda;
      row.j_base = base.j;
      row.j_guided = guided.j;
      row.gap = std::abs(guided.j - base.j);
      row.kl = guided.kl_per_action;
      const std::size_t total = guided.states.size() * static_cast<std::size_t>(cfg.rollouts);
      const std::size_t count = std::min<std::size_t>(total, static_cast<std::size_t>(cfg.advantage_states));
      double acc = 0.0;
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t flat = i * total / count;
        const Vector s = guided.states[flat / cfg.rollouts].col(static_cast<Eigen::Index>(flat % cfg.rollouts));
        const double sup = sup_abs_advantage(scm, value, s, cfg.discount, cfg.grid);
        acc += sup * sup;
      }
      row.sup_adv_sq = acc / static_cast<double>(count);
      row.bound = std::sqrt(row.sup_adv_sq) * std::sqrt(row.kl / 2.0) / (1.0 - cfg.discount);
      row.holds = row.gap <= row.bound;
      if (row.holds) ++report.held;
      report.rows.push_back(row);
    }
  }
  return report;
}

namespace {

std::string join(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out += (i ? ";" : "") + format_metric(v(i));
  return out;
}

}  // namespace

std::string lemma1_csv(const std::vector<Lemma1Report>& reports) {
  std::ostringstream out;
  out << "run,max_mean_z,cov_rel_error,pass,sample_mean,target_mean\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const Lemma1Report& r = reports[i];
    out << i << ',' << format_metric(r.max_mean_z) << ',' << format_metric(r.cov_rel_error) << ','
        << (r.pass ? 1 : 0) << ',' << join(r.sample.mean) << ',' << join(r.target.mean) << '\n';
  }
  return out.str();
}

std::string prop1_csv(const std::vector<Prop1Report>& reports) {
  std::ostringstream out;
  out << "instance,multiplier,dt,seed,diverged,steps_run,final_norm\n";
  for (const Prop1Report& r : reports) {
    for (const Prop1Row& row : r.rows) {
      out << r.instance << ',' << format_metric(row.multiplier) << ',' << format_metric(row.dt) << ','
          << row.seed << ',' << (row.diverged ? 1 : 0) << ',' << row.steps_run << ','
          << format_metric(row.final_norm) << '\n';
    }
  }
  return out.str();
}

std::string prop2_csv(const std::vector<Prop2Report>& reports) {
  std::ostringstream out;
  out << "run,cosine,pass,estimate,analytic\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const Prop2Report& r = reports[i];
    out << i << ',' << format_metric(r.cosine) << ',' << (r.pass ? 1 : 0) << ',' << join(r.estimate) << ','
        << join(r.analytic) << '\n';
  }
  return out.str();
}

std::string theorem1_csv(const Theorem1Report& report) {
  std::ostringstream out;
  out << "seed,lambda,j_guided,j_base,gap,kl,sup_adv_sq,bound,holds\n";
  for (const Theorem1Row& r : report.rows) {
    out << r.seed << ',' << format_metric(r.lambda) << ',' << format_metric(r.j_guided) << ','
        << format_metric(r.j_base) << ',' << format_metric(r.gap) << ',' << format_metric(r.kl) << ','
        << format_metric(r.sup_adv_sq) << ',' << format_metric(r.bound) << ',' << (r.holds ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace cgdp
