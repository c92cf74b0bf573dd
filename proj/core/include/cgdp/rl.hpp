#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "cgdp/adam.hpp"
#include "cgdp/diffusion.hpp"
#include "cgdp/discovery.hpp"
#include "cgdp/dynamics.hpp"
#include "cgdp/envs.hpp"
#include "cgdp/guidance.hpp"

namespace cgdp {

/// Fixed-capacity FIFO of transitions with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const;
  /// Raw storage; order is not chronological once the buffer wraps.
  const Dataset& storage() const { return storage_; }
  /// The newest `count` transitions, oldest first.
  Dataset window(std::size_t count) const;

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;  // next slot to overwrite once full
  Dataset storage_;
};

struct CriticPair {
  Mlp q1, q2;
  Mlp target1, target2;
  double tau = 0.005;
  double discount = 0.99;

  /// Two independently initialized critics on [s, a] with target copies.
  static CriticPair create(int state_dim, int action_dim, int hidden, int hidden_layers, Rng& rng);
  void validate() const;

  Checkpoint to_checkpoint() const;
  static CriticPair from_checkpoint(const Checkpoint& ck);
};

Vector critic_input(const Vector& s, const Vector& a);

/// y = r + discount (1 - done) min(Q1'(s', a'), Q2'(s', a')). The critics
/// are not evaluated when done.
double td_target(const CriticPair& critics, double r, const Vector& s_next, const Vector& a_next,
                 bool done);

struct TrainerConfig {
  // Optimizer and network shape.
  double lr = 3e-4;
  double critic_lr = 3e-4;
  double eta = 3.0;
  // Divide the Q term by the batch mean |Q| (detached) so eta is scale free.
  bool q_normalize = true;
  int batch = 64;
  int hidden = 128;
  int hidden_layers = 3;
  // Diffusion.
  int diffusion_steps = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
  int act_steps = 10;    // DDIM steps when acting and for TD targets
  int actor_steps = 5;   // DDIM steps unrolled for the actor gradient
  // Stages.
  int offline_steps = 2000;
  int episodes = 200;
  int mask_refresh = 1000;  // environment steps between mask refreshes; 0 disables
  int refresh_window = 5000;
  std::size_t replay_capacity = 1000000;
  double discount = 0.99;
  double tau = 0.005;
  // Mask corruption applied after every discovery (0 = clean masks).
  double flip_prob = 0.0;
  // Small scale: with sigma_omega = 0.1 the reward term is steep and strided
  // DDIM sampling becomes unstable from about lambda = 0.02.
  GuidanceConfig guidance = [] {
    GuidanceConfig g;
    g.lambda = 0.005;
    return g;
  }();
  // r* starts at the dataset's best reward and tracks the running maximum.
  bool r_star_from_data = true;
  NotearsConfig notears;
  DynamicsFitConfig dynamics;
  std::uint64_t seed = 0;

  void validate() const;
  DiffusionSchedule schedule() const;
};

struct Artifacts {
  NoiseNet net;
  CausalDynamics dyn;
  CausalMasks masks;
  Matrix discovered_w;
  double r_star = 0.0;
};

/// Discovery, optional corruption, dynamics fit and noise-net pretraining,
/// in that order. Corruption draws come from the seed's "corrupt" stream.
Artifacts offline_stage(const Dataset& data, const TrainerConfig& cfg, Rng& rng);

/// One batched DDIM sample per column of `states`, with optional acting-time
/// guidance (predicted next state, reward target r*).
Matrix sample_actions(const NoiseNet& net, const DiffusionSchedule& schedule, const Matrix& states,
                      int count, Rng& rng, const CausalDynamics* dyn, const GuidanceConfig* guidance,
                      KlAccumulator* kl = nullptr);

/// One Adam step on both critics followed by a soft target update. Next
/// actions come from `policy`, one per batch row. Returns the mean over the
/// batch of (Q1 - y)^2 + (Q2 - y)^2.
double critic_update(CriticPair& critics, const Dataset& batch,
                     const std::function<Matrix(const Matrix& next_states)>& policy,
                     AdamState& opt1, AdamState& opt2);

struct ActorGradient {
  double q_objective = 0.0;  // mean Q1(s, G(s; z))
  Vector grad;               // gradient of -mean Q1 w.r.t. the net parameters
  Matrix actions;            // final clamped actions
};

/// Runs the guided DDIM chain from the given start noises (one column per
/// state) and backpropagates -mean Q1 through every step into the network.
/// Gradients are zero for coordinates clamped at the action box.
ActorGradient actor_gradient(const NoiseNet& net, const CriticPair& critics,
                             const DiffusionSchedule& schedule, const Matrix& states,
                             const Matrix& start_noise, int count, const CausalDynamics* dyn,
                             const GuidanceConfig* guidance);

struct PolicyStep {
  double denoise_loss = 0.0;
  double q_objective = 0.0;
};

/// One step on the denoising loss toward the causally guided noise of each
/// replayed transition (recorded s', observed r), minus eta times Q1 of the
/// actions generated by the guided sampler. With eta = 0 the Q part is
/// skipped and makes no random draws.
PolicyStep policy_update(NoiseNet& net, const CriticPair& critics, const CausalDynamics& dyn,
                         const Dataset& data, const TrainerConfig& cfg,
                         const DiffusionSchedule& schedule, AdamState& opt, Rng& rng);

struct EpisodeMetrics {
  int episode = 0;
  double ret = 0.0;
  double denoise_loss = 0.0;
  double q_loss = 0.0;
  double kl_integral = 0.0;
  bool mask_refresh = false;
};

using MetricsSink = std::function<void(const EpisodeMetrics&)>;

struct OnlineResult {
  std::vector<EpisodeMetrics> episodes;
  CriticPair critics;
};

/// Acting, replay updates and periodic mask refreshes. Environment noise
/// comes from the seed's "env" stream so arms sharing a seed see the same
/// environment randomness; everything else draws from `rng`.
OnlineResult online_stage(const Environment& env, Artifacts& artifacts, const Dataset& offline_data,
                          const TrainerConfig& cfg, Rng& rng, const MetricsSink& sink = {});

/// Returns of `episodes` rollouts without learning.
std::vector<double> evaluate_policy(const Environment& env, const Artifacts& artifacts,
                                    const TrainerConfig& cfg, int episodes, Rng& rng,
                                    bool guided);

}  // namespace cgdp
