#pragma once

#include <vector>

#include "cgdp/adam.hpp"
#include "cgdp/checkpoint.hpp"
#include "cgdp/linalg.hpp"
#include "cgdp/mlp.hpp"
#include "cgdp/random.hpp"
#include "cgdp/scm.hpp"

namespace cgdp {

/// Noise schedule with alpha_k = 1 - beta_k and alpha_bar_k = prod alpha_j.
/// Index 0 of every vector is the clean end: beta(0) = 0, alpha_bar(0) = 1.
struct DiffusionSchedule {
  int steps = 0;
  Vector beta;       // K + 1 entries
  Vector alpha;      // K + 1 entries
  Vector alpha_bar;  // K + 1 entries

  double beta_at(int k) const { return beta(k); }
  double alpha_bar_at(int k) const { return alpha_bar(k); }
};

/// beta_k linearly interpolated from beta_start (k = 1) to beta_end (k = K).
DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end);

/// Evenly spaced descending step indices K = k_0 > ... > k_m = 0 for a
/// sampler that visits `count` of the K steps.
std::vector<int> stride_steps(int total, int count);

struct Corrupted {
  Vector a_k;
  Vector noise;
};

/// a^k = sqrt(alpha_bar_k) a0 + sqrt(1 - alpha_bar_k) eps; k = 0 returns a0.
Corrupted forward_corrupt(const DiffusionSchedule& schedule, const Vector& a0, int k, Rng& rng);

/// Anything that predicts the injected noise from (a^k, s, k).
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual int action_dim() const = 0;
  virtual Vector predict(const Vector& a_k, const Vector& s, int k) const = 0;
};

/// eps_theta: an Mlp on [a^k, s, k / K].
class NoiseNet : public NoisePredictor {
 public:
  NoiseNet() = default;
  NoiseNet(int state_dim, int action_dim, int steps, int hidden, int hidden_layers, Rng& rng);
  NoiseNet(int state_dim, int action_dim, int steps, Mlp net);

  int state_dim() const { return state_dim_; }
  int action_dim() const override { return action_dim_; }
  int steps() const { return steps_; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  Vector input(const Vector& a_k, const Vector& s, int k) const;
  Vector predict(const Vector& a_k, const Vector& s, int k) const override;

  Checkpoint to_checkpoint() const;
  static NoiseNet from_checkpoint(const Checkpoint& ck);

 private:
  int state_dim_ = 0;
  int action_dim_ = 0;
  int steps_ = 0;
  Mlp net_;
};

/// Additive correction to the predicted noise inside a sampler step:
/// the sampler uses eps_hat = eps_raw - correction. `k_prev` is the step the
/// sampler moves to, so strided samplers can report their time increment.
class SamplerGuidance {
 public:
  virtual ~SamplerGuidance() = default;
  virtual Vector correction(const Vector& a_k, const Vector& eps_raw, int k, int k_prev) = 0;
  /// d correction / d a_k with eps_raw held fixed, (d x d).
  virtual Matrix correction_jacobian(const Vector& a_k, const Vector& eps_raw, int k, int k_prev);
};

struct TrainBatchItem {
  std::size_t index = 0;
  int k = 1;
  Vector noise;
};

/// Draws one minibatch in the fixed order (index, step, noise) per item.
std::vector<TrainBatchItem> draw_denoise_batch(std::size_t dataset_size, int batch, int steps,
                                               int action_dim, Rng& rng);

/// Gradient of the mean squared noise-prediction error over a batch,
/// regressing onto `targets[i]` (the injected noise for plain training).
double denoise_loss_grad(const NoiseNet& net, const DiffusionSchedule& schedule,
                         const Dataset& data, const std::vector<TrainBatchItem>& batch,
                         const std::vector<Vector>& targets, Vector* grad);

struct TrainTrace {
  std::vector<double> loss;
};

/// Minibatch Adam on ||eps - eps_theta(a^k, s, k)||^2.
TrainTrace train_noise_net(NoiseNet& net, const Dataset& data, const DiffusionSchedule& schedule,
                           AdamState& opt, int steps, int batch, Rng& rng);

/// Mean noise-prediction loss on fresh draws, without updating anything.
double evaluate_denoise_loss(const NoiseNet& net, const Dataset& data,
                             const DiffusionSchedule& schedule, int samples, Rng& rng);

/// Stochastic reverse sampler over all K steps, starting from N(0, I). The
/// last step (k = 1) adds no noise.
Vector ddpm_sample(const NoisePredictor& net, const DiffusionSchedule& schedule, const Vector& s,
                   Rng& rng, SamplerGuidance* guidance = nullptr);

struct DdimStep {
  Vector a0_hat;
  Vector a_prev;
  Vector eps_hat;
};

/// Deterministic update from step k to step k_prev (default k - 1).
DdimStep ddim_step(const NoisePredictor& net, const DiffusionSchedule& schedule, const Vector& a_k,
                   const Vector& s, int k, SamplerGuidance* guidance = nullptr, int k_prev = -1);

/// Deterministic sampler visiting `count` evenly spaced steps (count = K
/// visits all of them). Starts from N(0, I) drawn from `rng`.
Vector ddim_sample(const NoisePredictor& net, const DiffusionSchedule& schedule, const Vector& s,
                   int count, Rng& rng, SamplerGuidance* guidance = nullptr);

/// score = -eps / sqrt(1 - alpha_bar); requires 0 < alpha_bar < 1.
Vector score_from_noise(const Vector& eps, double alpha_bar);
Vector noise_from_score(const Vector& score, double alpha_bar);

}  // namespace cgdp
