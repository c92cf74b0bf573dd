#include "cgdp/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace cgdp {

AdamState::AdamState(Eigen::Index size, double learning_rate)
    : lr(learning_rate), m(Vector::Zero(size)), v(Vector::Zero(size)) {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("AdamState: learning rate must be >= 0");
}

void adam_step(Vector& params, const Vector& grad, AdamState& state) {
  if (grad.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: moment/parameter shape mismatch");
  }
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  if (state.lr == 0.0) return;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.lr * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + state.epsilon);
}

}  // namespace cgdp
