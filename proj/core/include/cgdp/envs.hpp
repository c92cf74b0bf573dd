#pragma once

#include <cstdint>
#include <string>

#include "cgdp/linalg.hpp"
#include "cgdp/random.hpp"
#include "cgdp/scm.hpp"

namespace cgdp {

enum class EnvKind { lin_scm, point_maze };

EnvKind parse_env_kind(const std::string& text);  // "lin-scm" | "point-maze"
std::string to_string(EnvKind kind);

struct EnvSpec {
  EnvKind kind = EnvKind::lin_scm;
  int state_dim = 6;
  int action_dim = 4;
  int horizon = 50;
  std::uint64_t seed = 0;
  // lin-scm: the first `causal_actions` action coordinates drive the system.
  int causal_actions = 2;
  double noise = 0.1;  // Sigma_phi = noise I, sigma_omega = noise
  // point-maze
  double dt = 0.05;
  double goal_radius = 0.1;
  double goal_x = 1.0;
  double goal_y = 1.0;

  void validate() const;
};

/// Defaults for point-maze: n = 4 (position, velocity), d = 2, horizon 200.
EnvSpec point_maze_spec();

struct EnvState {
  Vector obs;
  int step = 0;
  bool done = false;
};

struct StepOutcome {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

/// Sparse linear-Gaussian SCM drawn from spec.seed. F_s and B_s are
/// nonnegative with spectral radius below 1; each causal action coordinate
/// gets one sign that it shares across its F_a column and B_a entry, so the
/// immediate and long-run effects of an action agree in direction.
GroundTruthScm make_lin_scm(const EnvSpec& spec);

class Environment {
 public:
  explicit Environment(const EnvSpec& spec);
  /// lin-scm environment around an explicit SCM.
  Environment(GroundTruthScm scm, int horizon);

  EnvKind kind() const { return spec_.kind; }
  const EnvSpec& spec() const { return spec_; }
  int state_dim() const { return spec_.state_dim; }
  int action_dim() const { return spec_.action_dim; }
  int horizon() const { return spec_.horizon; }
  const GroundTruthScm& scm() const;

  /// lin-scm: s0 ~ N(0, I). point-maze: origin, zero velocity (no draws).
  EnvState reset(Rng& rng) const;
  /// Actions are clamped to [-1, 1]^d. lin-scm draws the structural noise
  /// exactly as scm_step does, so env rollouts and generate_dataset agree
  /// draw for draw.
  StepOutcome step(const EnvState& state, const Vector& a, Rng& rng) const;
  double optimal_reward() const;

 private:
  EnvSpec spec_;
  GroundTruthScm scm_;
  ScmNoise noise_;
};

/// Largest expected one-step reward over the action box: for lin-scm at
/// s = 0 this is ||F_a^T B_s + B_a||_1; point-maze gives 0 (at the goal).
double optimal_reward(const EnvSpec& spec);
double optimal_reward(const GroundTruthScm& scm);

}  // namespace cgdp
