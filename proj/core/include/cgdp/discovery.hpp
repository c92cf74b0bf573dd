#pragma once

#include <optional>

#include "cgdp/linalg.hpp"
#include "cgdp/random.hpp"
#include "cgdp/scm.hpp"

namespace cgdp {

struct NotearsConfig {
  double lambda1 = 0.1;
  double rho_init = 1.0;
  double rho_growth = 10.0;
  double rho_max = 1e16;
  double alpha_init = 0.0;
  double tolerance = 1e-8;
  int max_outer = 100;
  int max_inner = 20000;
  double threshold = 0.3;

  void validate() const;
};

struct AcyclicityValue {
  double h = 0.0;
  Matrix grad;  // (e^{W∘W})^T ∘ 2W
};

/// h(W) = tr(e^{W∘W}) - d. Zero exactly on DAGs.
double acyclicity(const Matrix& w);
AcyclicityValue acyclicity_with_grad(const Matrix& w);

struct NotearsResult {
  Matrix w;
  double h = 0.0;
  double objective = 0.0;  // least squares + l1 at the returned W
  bool converged = false;
  int outer_iterations = 0;
};

/// Linear NOTEARS: minimize (1/2n)||X - XW||_F^2 + lambda1 ||W||_1 subject to
/// h(W) = 0 by augmented Lagrangian with dual ascent. The inner problem is
/// solved by proximal gradient with backtracking (soft thresholding for the
/// l1 term). `allowed(i, j) == 0` pins edge i -> j at zero. Columns are
/// centered internally. Weights below the threshold are not removed from
/// the returned W; callers threshold.
NotearsResult notears_fit(const Matrix& data, const NotearsConfig& cfg,
                          const std::optional<Matrix>& allowed = std::nullopt,
                          const std::optional<Matrix>& warm_start = std::nullopt);

/// Thresholded copy: entries with |w| < tau set to zero.
Matrix threshold_weights(const Matrix& w, double tau);

/// Best DAG by exhaustive enumeration (at most 4 variables) under an
/// equal-noise-variance Gaussian BIC, with least-squares edge weights.
Dag exhaustive_dag_oracle(const Matrix& data);

/// Count of insertions, deletions and reversals turning `a` into `b`.
int structural_hamming_distance(const Matrix& a, const Matrix& b, double threshold = 0.0);

struct DiscoveryResult {
  Matrix w;
  CausalMasks masks;
  double h = 0.0;
  double objective = 0.0;
  bool converged = false;
  double threshold = 0.3;
};

/// Stacked variable matrix [s_t | a_t | s_{t+1} | r_t], one row per transition.
Matrix stack_transitions(const Dataset& transitions);

/// Edges allowed by temporal order over the stacked variables: s_t and a_t
/// feed s_{t+1}, and s_t, a_t, s_{t+1} feed r_t. Next-state coordinates do
/// not feed each other; their correlation is left to the noise covariance.
Matrix temporal_allowed_edges(int n, int d);

/// Runs NOTEARS on the standardized stacked transitions, refits the selected
/// edges by least squares in raw units, and slices the thresholded W into
/// the four mask blocks. `warm_start` and the returned W are in raw units.
DiscoveryResult discover(const Dataset& transitions, const NotearsConfig& cfg,
                         const std::optional<Matrix>& warm_start = std::nullopt);
CausalMasks discover_masks(const Dataset& transitions, const NotearsConfig& cfg);

/// Mask blocks read off a stacked adjacency matrix, thresholded at tau.
CausalMasks masks_from_stacked(const Matrix& w, int n, int d, double tau);

/// Flips every entry x -> 1 - x independently with probability flip_prob.
/// Draws one uniform per entry regardless of flip_prob.
CausalMasks corrupt_masks(const CausalMasks& masks, double flip_prob, Rng& rng);

void save_discovery(const std::string& path, const DiscoveryResult& result, int n, int d);

}  // namespace cgdp
