#pragma once

#include <string>
#include <vector>

#include "cgdp/checkpoint.hpp"
#include "cgdp/linalg.hpp"
#include "cgdp/mlp.hpp"
#include "cgdp/random.hpp"
#include "cgdp/scm.hpp"

namespace cgdp {

enum class ModelKind { linear, mlp };

ModelKind parse_model_kind(const std::string& text);
std::string to_string(ModelKind kind);

/// Gated input of one structural equation: entries whose mask is exactly
/// zero become exactly zero, so masked-out inputs cannot leak into outputs
/// (not even through NaN or infinity).
Vector gate(const Vector& x, const Eigen::Ref<const Vector>& mask);

struct MaskedFeatures {
  std::vector<Vector> state;   // per next-state coordinate: C_ss[:, i] ∘ s
  std::vector<Vector> action;  // per next-state coordinate: C_as[:, i] ∘ a
  Vector reward_state;         // U_sr ∘ s_next
  Vector reward_action;        // U_ar ∘ a
};

MaskedFeatures apply_masks(const CausalMasks& masks, const Vector& s, const Vector& a,
                           const Vector& s_next);

/// Masked Gaussian transition and reward models:
///   s' ~ N(f(C_ss ∘ s, C_as ∘ a), sigma_phi),  r ~ N(g(U_sr ∘ s', U_ar ∘ a), sigma_omega)
/// with f, g either linear maps or per-coordinate MLPs.
class CausalDynamics {
 public:
  CausalDynamics() = default;

  static CausalDynamics linear(CausalMasks masks, Matrix f_s, Matrix f_a, Vector b_s, Vector b_a,
                               Matrix sigma_phi, double sigma_omega);
  /// `transition_nets[i]` maps [gated s, gated a] (n + d) to next-state
  /// coordinate i; `reward_net` maps [gated s', gated a] to the reward.
  static CausalDynamics mlp(CausalMasks masks, std::vector<Mlp> transition_nets, Mlp reward_net,
                            Matrix sigma_phi, double sigma_omega);
  /// Exact model of a ground-truth SCM under the given masks.
  static CausalDynamics from_scm(const GroundTruthScm& scm, const CausalMasks& masks);

  ModelKind kind() const { return kind_; }
  int state_dim() const { return masks_.state_dim(); }
  int action_dim() const { return masks_.action_dim(); }
  const CausalMasks& masks() const { return masks_; }
  const Matrix& sigma_phi() const { return sigma_phi_; }
  double sigma_omega() const { return sigma_omega_; }

  // Raw linear operators (unmasked). Linear kind only.
  const Matrix& f_s() const;
  const Matrix& f_a() const;
  const Vector& b_s() const;
  const Vector& b_a() const;
  /// Operators with the masks folded in: entry (i, j) of F_a times C_as(j, i).
  Matrix effective_f_s() const;
  Matrix effective_f_a() const;
  Vector effective_b_s() const;
  Vector effective_b_a() const;

  const std::vector<Mlp>& transition_nets() const { return transition_nets_; }
  const Mlp& reward_net() const { return reward_net_; }

  Vector transition_mean(const Vector& s, const Vector& a) const;
  double reward_mean(const Vector& s_next, const Vector& a) const;
  /// d transition_mean / d a, (n x d).
  Matrix transition_action_jacobian(const Vector& s, const Vector& a) const;
  /// d reward_mean / d a with s_next held fixed.
  Vector reward_action_gradient(const Vector& s_next, const Vector& a) const;
  /// d reward_mean / d s_next with a held fixed.
  Vector reward_state_gradient(const Vector& s_next, const Vector& a) const;

  /// Lower Cholesky factor of sigma_phi and its precision.
  const Matrix& sigma_phi_chol() const { return sigma_chol_; }
  const Matrix& sigma_phi_inverse() const { return sigma_inv_; }
  double sigma_phi_logdet() const { return sigma_logdet_; }

  /// Draws (s', r) from the model.
  std::pair<Vector, double> sample(const Vector& s, const Vector& a, Rng& rng) const;

  Checkpoint to_checkpoint() const;
  static CausalDynamics from_checkpoint(const Checkpoint& ck);

 private:
  void set_covariances(Matrix sigma_phi, double sigma_omega);
  void check_dims(const Vector& s, const Vector& a) const;

  ModelKind kind_ = ModelKind::linear;
  CausalMasks masks_;
  Matrix f_s_, f_a_;
  Vector b_s_, b_a_;
  std::vector<Mlp> transition_nets_;
  Mlp reward_net_;
  Matrix sigma_phi_;
  double sigma_omega_ = 1.0;
  Matrix sigma_chol_;
  Matrix sigma_inv_;
  double sigma_logdet_ = 0.0;
};

struct DynamicsFitConfig {
  ModelKind kind = ModelKind::linear;
  // Full residual covariance up to this state dimension, diagonal above.
  int full_covariance_max_dim = 8;
  double variance_floor = 1e-8;
  double ridge = 1e-6;
  // MLP kind.
  int hidden = 32;
  int hidden_layers = 2;
  int steps = 3000;
  int batch = 64;
  double lr = 1e-3;
};

struct DynamicsFitReport {
  // Equations whose masked design matrix was rank deficient and fell back
  // to ridge regression. Index n denotes the reward equation.
  std::vector<int> ridge_equations;
  double final_loss = 0.0;
};

/// Linear kind: masked least squares per equation plus residual covariance.
/// MLP kind: Adam on the squared error (the Gaussian NLL at fixed variance),
/// then diagonal variances from the residuals. `rng` is only used by the
/// MLP kind.
CausalDynamics fit_dynamics(const Dataset& transitions, const CausalMasks& masks,
                            const DynamicsFitConfig& cfg, Rng& rng,
                            DynamicsFitReport* report = nullptr);

struct LogDensity {
  double log_p = 0.0;
  Vector grad;  // with respect to the action
};

LogDensity transition_logpdf_grad(const CausalDynamics& dyn, const Vector& s, const Vector& a,
                                  const Vector& s_next);
LogDensity reward_logpdf_grad(const CausalDynamics& dyn, const Vector& s_next, const Vector& a,
                              double r);
/// log p(s', r | s, do(a)) = transition + reward log density.
LogDensity joint_logpdf_grad(const CausalDynamics& dyn, const Vector& s, const Vector& a,
                             const Vector& s_next, double r);

/// gamma * grad log p(s' | s, do(a)) + beta_guid * grad log p(r | s', do(a)).
Vector do_intervention_joint_grad(const CausalDynamics& dyn, const Vector& s, const Vector& a,
                                  const Vector& s_next, double r_target, double gamma,
                                  double beta_guid);

}  // namespace cgdp
