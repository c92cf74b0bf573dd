#include "cgdp/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgdp {

namespace {

constexpr double kArenaLow = -0.5;
constexpr double kArenaHigh = 1.5;
constexpr double kMaxSpeed = 1.0;

Vector clamp_box(const Vector& a) { return a.cwiseMax(-1.0).cwiseMin(1.0); }

}  // namespace

EnvKind parse_env_kind(const std::string& text) {
  if (text == "lin-scm") return EnvKind::lin_scm;
  if (text == "point-maze") return EnvKind::point_maze;
  throw std::invalid_argument("unknown env '" + text + "' (expected lin-scm or point-maze)");
}

std::string to_string(EnvKind kind) { return kind == EnvKind::lin_scm ? "lin-scm" : "point-maze"; }

void EnvSpec::validate() const {
  if (state_dim < 1 || action_dim < 1) throw std::invalid_argument("env: dimensions must be >= 1");
  if (horizon < 1) throw std::invalid_argument("env: horizon must be >= 1");
  if (kind == EnvKind::lin_scm) {
    if (causal_actions < 0 || causal_actions > action_dim) {
      throw std::invalid_argument("env: causal_actions must lie in [0, action_dim]");
    }
    if (!(noise > 0.0)) throw std::invalid_argument("env: noise must be positive");
  } else {
    if (state_dim != 4 || action_dim != 2) throw std::invalid_argument("env: point-maze has n = 4, d = 2");
    if (!(dt > 0.0) || !(goal_radius > 0.0)) throw std::invalid_argument("env: dt and goal_radius must be positive");
  }
}

EnvSpec point_maze_spec() {
  EnvSpec spec;
  spec.kind = EnvKind::point_maze;
  spec.state_dim = 4;
  spec.action_dim = 2;
  spec.horizon = 200;
  return spec;
}

GroundTruthScm make_lin_scm(const EnvSpec& spec) {
  spec.validate();
  if (spec.kind != EnvKind::lin_scm) throw std::invalid_argument("make_lin_scm: not a lin-scm spec");
  const int n = spec.state_dim;
  const int d = spec.action_dim;
  Rng rng = Rng::derive(spec.seed, "lin-scm");
  GroundTruthScm scm;
  scm.n = n;
  scm.d = d;
  scm.f_s = Matrix::Zero(n, n);
  scm.f_a = Matrix::Zero(n, d);
  scm.b_s = Vector::Zero(n);
  scm.b_a = Vector::Zero(d);
  for (int i = 0; i < n; ++i) {
    scm.f_s(i, i) = 0.5 + 0.3 * rng.uniform();
    const int j = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
    if (j != i && rng.uniform() < 0.5) scm.f_s(i, j) = 0.5 + 0.3 * rng.uniform();
  }
  // Nonnegative matrix: the row-sum bound caps the spectral radius.
  const double row_max = scm.f_s.rowwise().sum().maxCoeff();
  if (row_max > 0.9) scm.f_s *= 0.9 / row_max;

  // Every other state coordinate feeds the reward, starting with 0.
  for (int i = 0; i < n; i += 2) scm.b_s(i) = 0.5 + 0.5 * rng.uniform();
  for (int j = 0; j < spec.causal_actions; ++j) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    // One rewarded coordinate and one other coordinate per causal action.
    const int rewarded = 2 * static_cast<int>(rng.index(static_cast<std::size_t>((n + 1) / 2)));
    scm.f_a(rewarded, j) = sign * (0.5 + 0.5 * rng.uniform());
    const int other = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
    scm.f_a(other, j) = sign * (0.5 + 0.5 * rng.uniform());
    scm.b_a(j) = sign * (0.5 + 0.5 * rng.uniform());
  }
  scm.sigma_phi = spec.noise * Matrix::Identity(n, n);
  scm.sigma_omega = spec.noise;
  scm.validate();
  return scm;
}

Environment::Environment(const EnvSpec& spec) : spec_(spec) {
  spec_.validate();
  if (spec_.kind == EnvKind::lin_scm) {
    scm_ = make_lin_scm(spec_);
    noise_ = scm_noise(scm_);
  }
}

Environment::Environment(GroundTruthScm scm, int horizon) : scm_(std::move(scm)) {
  scm_.validate();
  spec_.kind = EnvKind::lin_scm;
  spec_.state_dim = scm_.n;
  spec_.action_dim = scm_.d;
  spec_.horizon = horizon;
  spec_.causal_actions = 0;
  spec_.noise = 1.0;
  spec_.validate();
  noise_ = scm_noise(scm_);
}

const GroundTruthScm& Environment::scm() const {
  if (spec_.kind != EnvKind::lin_scm) throw std::logic_error("Environment: point-maze has no SCM");
  return scm_;
}

EnvState Environment::reset(Rng& rng) const {
  EnvState state;
  if (spec_.kind == EnvKind::lin_scm) {
    state.obs = rng.normal_vector(spec_.state_dim);
  } else {
    state.obs = Vector::Zero(4);
  }
  return state;
}

StepOutcome Environment::step(const EnvState& state, const Vector& a, Rng& rng) const {
  if (state.done) throw std::logic_error("Environment::step on a finished episode");
  if (a.size() != spec_.action_dim) throw std::invalid_argument("Environment::step: action dimension mismatch");
  if (state.obs.size() != spec_.state_dim) throw std::invalid_argument("Environment::step: state dimension mismatch");
  if (!a.allFinite()) throw std::invalid_argument("Environment::step: non-finite action");
  const Vector action = clamp_box(a);
  StepOutcome out;
  out.state.step = state.step + 1;
  if (spec_.kind == EnvKind::lin_scm) {
    auto [s_next, r] = scm_step(scm_, noise_, state.obs, action, rng);
    out.state.obs = std::move(s_next);
    out.reward = r;
    out.done = out.state.step >= spec_.horizon;
  } else {
    Vector obs = state.obs;
    for (int i = 0; i < 2; ++i) {
      obs(i) += obs(2 + i) * spec_.dt;
      if (obs(i) < kArenaLow || obs(i) > kArenaHigh) {
        obs(i) = std::clamp(obs(i), kArenaLow, kArenaHigh);
        obs(2 + i) = 0.0;
      }
      obs(2 + i) = std::clamp(obs(2 + i) + action(i) * spec_.dt, -kMaxSpeed, kMaxSpeed);
    }
    const double dx = obs(0) - spec_.goal_x;
    const double dy = obs(1) - spec_.goal_y;
    const double dist2 = dx * dx + dy * dy;
    out.reward = -dist2;
    out.state.obs = std::move(obs);
    out.done = out.state.step >= spec_.horizon || dist2 <= spec_.goal_radius * spec_.goal_radius;
  }
  out.state.done = out.done;
  return out;
}

double Environment::optimal_reward() const {
  if (spec_.kind == EnvKind::point_maze) return 0.0;
  return cgdp::optimal_reward(scm_);
}

double optimal_reward(const GroundTruthScm& scm) {
  scm.validate();
  return (scm.f_a.transpose() * scm.b_s + scm.b_a).lpNorm<1>();
}

double optimal_reward(const EnvSpec& spec) {
  spec.validate();
  if (spec.kind == EnvKind::point_maze) return 0.0;
  return optimal_reward(make_lin_scm(spec));
}

}  // namespace cgdp
