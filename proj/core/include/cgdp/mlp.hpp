#pragma once

#include <vector>

#include "cgdp/linalg.hpp"
#include "cgdp/random.hpp"

namespace cgdp {

/// Fully connected network: tanh on hidden layers, identity on the output.
///
/// All weights and biases live in one flat parameter vector so optimizers,
/// target-network averaging and checkpointing work on a single array. Layer
/// l owns a column-major (widths[l+1] x widths[l]) weight block followed by
/// its bias. Batched calls take inputs as columns.
class Mlp {
 public:
  /// Activations recorded by a forward pass, consumed by backward().
  struct Tape {
    std::vector<Matrix> activations;  // layer inputs, then the output
  };

  struct Gradient {
    Vector params;
    Vector input;
  };

  Mlp() = default;
  /// Zero-initialized network.
  explicit Mlp(std::vector<int> widths);
  /// Glorot-uniform weights, zero biases.
  static Mlp random(std::vector<int> widths, Rng& rng);

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  int layer_count() const { return static_cast<int>(widths_.size()) - 1; }
  const std::vector<int>& widths() const { return widths_; }
  Eigen::Index param_count() const { return params_.size(); }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  void set_params(const Vector& p);

  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<Vector> bias(int layer);
  Eigen::Map<const Vector> bias(int layer) const;

  Vector forward(const Vector& input) const;
  Matrix forward(const Matrix& inputs) const;
  Matrix forward(const Matrix& inputs, Tape& tape) const;

  /// Backpropagates `output_grad` (one column per batch column) through the
  /// recorded pass. Adds d<output, output_grad>/dparams into `param_grad`
  /// when it is non-null and returns the gradient with respect to the inputs.
  Matrix backward(const Tape& tape, const Matrix& output_grad, Vector* param_grad) const;

  /// Single-sample convenience: gradients of output . output_grad.
  Gradient backward(const Vector& input, const Vector& output_grad) const;

  /// Jacobian d output / d input at one point, (output_dim x input_dim).
  Matrix input_jacobian(const Vector& input) const;

 private:
  std::vector<int> widths_;
  std::vector<Eigen::Index> weight_offset_;
  std::vector<Eigen::Index> bias_offset_;
  Vector params_;
};

}  // namespace cgdp
