#include "cgdp/diffusion.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cgdp {

namespace {

constexpr double kMinAlphaBar = 1e-8;

double clamped_alpha_bar(double value) {
  static std::atomic<bool> warned{false};
  if (value >= kMinAlphaBar) return value;
  if (!warned.exchange(true)) {
    std::cerr << "warning: alpha_bar below " << kMinAlphaBar << " clamped in ddim_step\n";
  }
  return kMinAlphaBar;
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int> split(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("make_schedule: need K >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.steps = steps;
  s.beta = Vector::Zero(steps + 1);
  s.alpha = Vector::Ones(steps + 1);
  s.alpha_bar = Vector::Ones(steps + 1);
  for (int k = 1; k <= steps; ++k) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(k - 1) / (steps - 1);
    s.beta(k) = beta_start + (beta_end - beta_start) * frac;
    s.alpha(k) = 1.0 - s.beta(k);
    s.alpha_bar(k) = s.alpha_bar(k - 1) * s.alpha(k);
  }
  return s;
}

std::vector<int> stride_steps(int total, int count) {
  if (total < 1 || count < 1 || count > total) {
    throw std::invalid_argument("stride_steps: need 1 <= count <= total");
  }
  std::vector<int> ks;
  for (int i = 0; i <= count; ++i) {
    ks.push_back(static_cast<int>(std::lround(static_cast<double>(total) * (count - i) / count)));
  }
  return ks;
}

Corrupted forward_corrupt(const DiffusionSchedule& schedule, const Vector& a0, int k, Rng& rng) {
  if (k < 0 || k > schedule.steps) throw std::invalid_argument("forward_corrupt: step out of range");
  Corrupted out;
  out.noise = rng.normal_vector(a0.size());
  if (k == 0) {
    out.a_k = a0;
  } else {
    const double ab = schedule.alpha_bar(k);
    out.a_k = std::sqrt(ab) * a0 + std::sqrt(1.0 - ab) * out.noise;
  }
  return out;
}

NoiseNet::NoiseNet(int state_dim, int action_dim, int steps, int hidden, int hidden_layers, Rng& rng)
    : state_dim_(state_dim), action_dim_(action_dim), steps_(steps) {
  if (state_dim < 1 || action_dim < 1 || steps < 1 || hidden < 1 || hidden_layers < 0) {
    throw std::invalid_argument("NoiseNet: invalid dimensions");
  }
  std::vector<int> widths{action_dim + state_dim + 1};
  for (int l = 0; l < hidden_layers; ++l) widths.push_back(hidden);
  widths.push_back(action_dim);
  net_ = Mlp::random(widths, rng);
}

NoiseNet::NoiseNet(int state_dim, int action_dim, int steps, Mlp net)
    : state_dim_(state_dim), action_dim_(action_dim), steps_(steps), net_(std::move(net)) {
  if (net_.input_dim() != action_dim + state_dim + 1 || net_.output_dim() != action_dim) {
    throw std::invalid_argument("NoiseNet: network shape does not match (a, s, k)");
  }
}

Vector NoiseNet::input(const Vector& a_k, const Vector& s, int k) const {
  if (a_k.size() != action_dim_ || s.size() != state_dim_) {
    throw std::invalid_argument("NoiseNet: input dimension mismatch");
  }
  Vector x(action_dim_ + state_dim_ + 1);
  x << a_k, s, static_cast<double>(k) / steps_;
  return x;
}

Vector NoiseNet::predict(const Vector& a_k, const Vector& s, int k) const {
  return net_.forward(input(a_k, s, k));
}

Checkpoint NoiseNet::to_checkpoint() const {
  Checkpoint ck("noise-net");
  ck.put_meta("state_dim", std::to_string(state_dim_));
  ck.put_meta("action_dim", std::to_string(action_dim_));
  ck.put_meta("steps", std::to_string(steps_));
  ck.put_meta("widths", join(net_.widths()));
  ck.put_vector("params", net_.params());
  return ck;
}

NoiseNet NoiseNet::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind() != "noise-net") throw std::runtime_error("checkpoint is not a noise net");
  Mlp net(split(ck.meta("widths")));
  net.set_params(ck.get_vector("params"));
  return NoiseNet(std::stoi(ck.meta("state_dim")), std::stoi(ck.meta("action_dim")),
                  std::stoi(ck.meta("steps")), std::move(net));
}

Matrix SamplerGuidance::correction_jacobian(const Vector& a_k, const Vector& eps_raw, int k,
                                            int k_prev) {
  const Eigen::Index d = a_k.size();
  Matrix jac(d, d);
  const double h = 1e-5;
  for (Eigen::Index j = 0; j < d; ++j) {
    Vector plus = a_k;
    Vector minus = a_k;
    plus(j) += h;
    minus(j) -= h;
    jac.col(j) = (correction(plus, eps_raw, k, k_prev) - correction(minus, eps_raw, k, k_prev)) / (2 * h);
  }
  return jac;
}

std::vector<TrainBatchItem> draw_denoise_batch(std::size_t dataset_size, int batch, int steps,
                                               int action_dim, Rng& rng) {
  if (dataset_size == 0) throw std::invalid_argument("denoising batch from an empty dataset");
  std::vector<TrainBatchItem> items(batch);
  for (TrainBatchItem& item : items) {
    item.index = rng.index(dataset_size);
    item.k = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(steps)));
    item.noise = rng.normal_vector(action_dim);
  }
  return items;
}

double denoise_loss_grad(const NoiseNet& net, const DiffusionSchedule& schedule,
                         const Dataset& data, const std::vector<TrainBatchItem>& batch,
                         const std::vector<Vector>& targets, Vector* grad) {
  const int b = static_cast<int>(batch.size());
  if (b == 0) return 0.0;
  Matrix inputs(net.net().input_dim(), b);
  Matrix target(net.action_dim(), b);
  for (int i = 0; i < b; ++i) {
    const TrainBatchItem& item = batch[i];
    const Transition& t = data.at(item.index);
    const double ab = schedule.alpha_bar(item.k);
    const Vector a_k = std::sqrt(ab) * t.a + std::sqrt(1.0 - ab) * item.noise;
    inputs.col(i) = net.input(a_k, t.s, item.k);
    target.col(i) = targets[i];
  }
  Mlp::Tape tape;
  const Matrix err = net.net().forward(inputs, tape) - target;
  if (grad) net.net().backward(tape, err * (2.0 / b), grad);
  return err.squaredNorm() / b;
}

TrainTrace train_noise_net(NoiseNet& net, const Dataset& data, const DiffusionSchedule& schedule,
                           AdamState& opt, int steps, int batch, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("train_noise_net: empty dataset");
  if (steps < 0 || batch < 1) throw std::invalid_argument("train_noise_net: need steps >= 0, batch >= 1");
  TrainTrace trace;
  for (int step = 0; step < steps; ++step) {
    const std::vector<TrainBatchItem> items =
        draw_denoise_batch(data.size(), batch, schedule.steps, net.action_dim(), rng);
    std::vector<Vector> targets;
    targets.reserve(items.size());
    for (const TrainBatchItem& item : items) targets.push_back(item.noise);
    Vector grad = Vector::Zero(net.net().param_count());
    trace.loss.push_back(denoise_loss_grad(net, schedule, data, items, targets, &grad));
    adam_step(net.net().params(), grad, opt);
  }
  return trace;
}

double evaluate_denoise_loss(const NoiseNet& net, const Dataset& data,
                             const DiffusionSchedule& schedule, int samples, Rng& rng) {
  const std::vector<TrainBatchItem> items =
      draw_denoise_batch(data.size(), samples, schedule.steps, net.action_dim(), rng);
  std::vector<Vector> targets;
  for (const TrainBatchItem& item : items) targets.push_back(item.noise);
  return denoise_loss_grad(net, schedule, data, items, targets, nullptr);
}

Vector ddpm_sample(const NoisePredictor& net, const DiffusionSchedule& schedule, const Vector& s,
                   Rng& rng, SamplerGuidance* guidance) {
  Vector a = rng.normal_vector(net.action_dim());
  for (int k = schedule.steps; k >= 1; --k) {
    const Vector eps_raw = net.predict(a, s, k);
    Vector eps = eps_raw;
    if (guidance) eps -= guidance->correction(a, eps_raw, k, k - 1);
    const double beta = schedule.beta(k);
    Vector mean = (a - (beta / std::sqrt(1.0 - schedule.alpha_bar(k))) * eps) / std::sqrt(schedule.alpha(k));
    if (k > 1) {
      a = mean + std::sqrt(beta) * rng.normal_vector(a.size());
    } else {
      a = std::move(mean);
    }
  }
  return a;
}

DdimStep ddim_step(const NoisePredictor& net, const DiffusionSchedule& schedule, const Vector& a_k,
                   const Vector& s, int k, SamplerGuidance* guidance, int k_prev) {
  if (k < 1 || k > schedule.steps) throw std::invalid_argument("ddim_step: step out of range");
  if (k_prev < 0) k_prev = k - 1;
  if (k_prev >= k) throw std::invalid_argument("ddim_step: k_prev must be below k");
  const Vector eps_raw = net.predict(a_k, s, k);
  DdimStep out;
  out.eps_hat = eps_raw;
  if (guidance) out.eps_hat -= guidance->correction(a_k, eps_raw, k, k_prev);
  const double ab = clamped_alpha_bar(schedule.alpha_bar(k));
  const double ab_prev = schedule.alpha_bar(k_prev);
  out.a0_hat = (a_k - std::sqrt(1.0 - ab) * out.eps_hat) / std::sqrt(ab);
  out.a_prev = std::sqrt(ab_prev) * out.a0_hat + std::sqrt(1.0 - ab_prev) * out.eps_hat;
  return out;
}

Vector ddim_sample(const NoisePredictor& net, const DiffusionSchedule& schedule, const Vector& s,
                   int count, Rng& rng, SamplerGuidance* guidance) {
  const std::vector<int> ks = stride_steps(schedule.steps, count);
  Vector a = rng.normal_vector(net.action_dim());
  for (std::size_t i = 0; i + 1 < ks.size(); ++i) {
    a = ddim_step(net, schedule, a, s, ks[i], guidance, ks[i + 1]).a_prev;
  }
  return a;
}

Vector score_from_noise(const Vector& eps, double alpha_bar) {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0)) throw std::invalid_argument("score_from_noise: alpha_bar outside (0, 1)");
  return -eps / std::sqrt(1.0 - alpha_bar);
}

Vector noise_from_score(const Vector& score, double alpha_bar) {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0)) throw std::invalid_argument("noise_from_score: alpha_bar outside (0, 1)");
  return -score * std::sqrt(1.0 - alpha_bar);
}

}  // namespace cgdp
