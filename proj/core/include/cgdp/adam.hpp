#pragma once

#include "cgdp/linalg.hpp"

namespace cgdp {

struct AdamState {
  AdamState() = default;
  AdamState(Eigen::Index size, double learning_rate);

  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  Vector m;
  Vector v;
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(Vector& params, const Vector& grad, AdamState& state);

}  // namespace cgdp
