#pragma once

#include <iosfwd>
#include <vector>

#include "cgdp/linalg.hpp"
#include "cgdp/random.hpp"

namespace cgdp {

/// Weighted DAG; weights(i, j) is the weight of edge i -> j.
struct Dag {
  Matrix weights;

  int nodes() const { return static_cast<int>(weights.rows()); }
  int edge_count(double threshold = 0.0) const;
  /// Edge i -> j present when |weight| > threshold.
  bool has_edge(int from, int to, double threshold = 0.0) const;
};

/// Builds a Dag after checking squareness, a zero diagonal and acyclicity.
Dag make_dag(Matrix weights);

/// Structural gates on the causal dynamical model.
///
/// Column i of `c_ss` (n x n) and `c_as` (d x n) gates the state and action
/// inputs of next-state coordinate i; `u_sr` (n) and `u_ar` (d) gate the
/// next-state and action inputs of the reward. Entries live in [0, 1].
struct CausalMasks {
  Matrix c_ss;
  Matrix c_as;
  Vector u_sr;
  Vector u_ar;

  int state_dim() const { return static_cast<int>(c_ss.rows()); }
  int action_dim() const { return static_cast<int>(c_as.rows()); }

  static CausalMasks ones(int n, int d);
  static CausalMasks zeros(int n, int d);
  void validate() const;
  int entry_count() const;
  bool operator==(const CausalMasks& other) const;
};

/// Number of entries whose thresholded value differs (|x - y| >= 0.5).
int mask_difference(const Matrix& a, const Matrix& b);

/// Linear-Gaussian ground truth:
///   s' = F_s s + F_a a + xi_s,   xi_s ~ N(0, sigma_phi)
///   r  = B_s . s' + B_a . a + xi_r, xi_r ~ N(0, sigma_omega)
struct GroundTruthScm {
  int n = 0;
  int d = 0;
  Matrix f_s;        // n x n
  Matrix f_a;        // n x d
  Vector b_s;        // n
  Vector b_a;        // d
  Matrix sigma_phi;  // n x n, symmetric PSD
  double sigma_omega = 0.0;

  void validate() const;
};

struct Transition {
  Vector s;
  Vector a;
  double r = 0.0;
  Vector s_next;
  bool done = false;
};

using Dataset = std::vector<Transition>;

/// Precomputed noise factors for repeated stepping.
struct ScmNoise {
  Matrix state_factor;
  double reward_scale = 0.0;
};

ScmNoise scm_noise(const GroundTruthScm& scm);

/// One structural step. Always draws n + 1 normals so the stream position
/// does not depend on the noise level.
std::pair<Vector, double> scm_step(const GroundTruthScm& scm, const ScmNoise& noise,
                                   const Vector& s, const Vector& a, Rng& rng);

/// Gain of the linear behavior policy a = K s + noise * z used for offline data.
Matrix draw_behavior_gain(int n, int d, Rng& rng);

/// Rolls out the clamped linear behavior policy through the SCM. Draw order:
/// the gain K once, then per episode s0 ~ N(0, I), then per step d behavior
/// normals followed by the structural noise of scm_step.
Dataset generate_dataset(const GroundTruthScm& scm, int episodes, int horizon,
                         double behavior_noise, Rng& rng);

/// 1 where the true operator entry is nonzero, else 0.
CausalMasks exact_masks(const GroundTruthScm& scm);

/// DAG over the stacked variables (s_t, a_t, s_{t+1}, r_t), node order
/// [0, n) s_t, [n, n+d) a_t, [n+d, 2n+d) s_{t+1}, 2n+d r_t.
Dag stacked_adjacency(const GroundTruthScm& scm);

/// Dataset text format: "n d count" then one transition per line as
/// s a r s_next done, all reals in shortest round-trip form.
void write_dataset(std::ostream& out, int n, int d, const Dataset& data);
struct DatasetFile {
  int n = 0;
  int d = 0;
  Dataset data;
};
DatasetFile read_dataset(std::istream& in);

void save_dataset(const std::string& path, int n, int d, const Dataset& data);
DatasetFile load_dataset(const std::string& path);

void save_masks(class Checkpoint& ck, const std::string& prefix, const CausalMasks& masks);
CausalMasks load_masks(const class Checkpoint& ck, const std::string& prefix);

}  // namespace cgdp
