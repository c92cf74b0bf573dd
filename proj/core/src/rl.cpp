#include "cgdp/rl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cgdp {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (storage_.size() < capacity_) {
    storage_.push_back(std::move(t));
    return;
  }
  storage_[cursor_] = std::move(t);
  cursor_ = (cursor_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= storage_.size()) throw std::out_of_range("ReplayBuffer::at");
  return storage_[(cursor_ + i) % storage_.size()];
}

Dataset ReplayBuffer::window(std::size_t count) const {
  count = std::min(count, storage_.size());
  Dataset out;
  out.reserve(count);
  for (std::size_t i = storage_.size() - count; i < storage_.size(); ++i) out.push_back(at(i));
  return out;
}

CriticPair CriticPair::create(int state_dim, int action_dim, int hidden, int hidden_layers, Rng& rng) {
  if (state_dim < 1 || action_dim < 1 || hidden < 1 || hidden_layers < 0) {
    throw std::invalid_argument("CriticPair: invalid dimensions");
  }
  std::vector<int> widths{state_dim + action_dim};
  for (int l = 0; l < hidden_layers; ++l) widths.push_back(hidden);
  widths.push_back(1);
  CriticPair c;
  c.q1 = Mlp::random(widths, rng);
  c.q2 = Mlp::random(widths, rng);
  c.target1 = c.q1;
  c.target2 = c.q2;
  return c;
}

void CriticPair::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("critics: tau must lie in (0, 1]");
  if (!(discount >= 0.0 && discount < 1.0)) throw std::invalid_argument("critics: discount must lie in [0, 1)");
  if (q1.param_count() != target1.param_count() || q2.param_count() != target2.param_count()) {
    throw std::invalid_argument("critics: target shapes differ from online shapes");
  }
}

Checkpoint CriticPair::to_checkpoint() const {
  Checkpoint ck("critics");
  std::string widths;
  for (std::size_t i = 0; i < q1.widths().size(); ++i) widths += (i ? "," : "") + std::to_string(q1.widths()[i]);
  ck.put_meta("widths", widths);
  ck.put_meta("tau", format_exact(tau));
  ck.put_meta("discount", format_exact(discount));
  ck.put_vector("q1", q1.params());
  ck.put_vector("q2", q2.params());
  ck.put_vector("target1", target1.params());
  ck.put_vector("target2", target2.params());
  return ck;
}

CriticPair CriticPair::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind() != "critics") throw std::runtime_error("checkpoint is not a critic pair");
  std::vector<int> widths;
  std::string item;
  for (char ch : ck.meta("widths") + ",") {
    if (ch == ',') {
      widths.push_back(std::stoi(item));
      item.clear();
    } else {
      item += ch;
    }
  }
  CriticPair c;
  c.q1 = Mlp(widths);
  c.q2 = Mlp(widths);
  c.target1 = Mlp(widths);
  c.target2 = Mlp(widths);
  c.q1.set_params(ck.get_vector("q1"));
  c.q2.set_params(ck.get_vector("q2"));
  c.target1.set_params(ck.get_vector("target1"));
  c.target2.set_params(ck.get_vector("target2"));
  c.tau = parse_real(ck.meta("tau"));
  c.discount = parse_real(ck.meta("discount"));
  c.validate();
  return c;
}

Vector critic_input(const Vector& s, const Vector& a) {
  Vector x(s.size() + a.size());
  x << s, a;
  return x;
}

double td_target(const CriticPair& critics, double r, const Vector& s_next, const Vector& a_next,
                 bool done) {
  if (done) return r;
  const Vector x = critic_input(s_next, a_next);
  const double q = std::min(critics.target1.forward(x)(0), critics.target2.forward(x)(0));
  return r + critics.discount * q;
}

void TrainerConfig::validate() const {
  if (!(lr >= 0.0) || !(critic_lr >= 0.0)) throw std::invalid_argument("trainer: learning rates must be >= 0");
  if (!(eta >= 0.0)) throw std::invalid_argument("trainer: eta must be >= 0");
  if (batch < 1) throw std::invalid_argument("trainer: batch must be >= 1");
  if (hidden < 1 || hidden_layers < 0) throw std::invalid_argument("trainer: invalid network shape");
  if (act_steps < 1 || act_steps > diffusion_steps || actor_steps < 1 || actor_steps > diffusion_steps) {
    throw std::invalid_argument("trainer: sampler step counts must lie in [1, diffusion steps]");
  }
  if (offline_steps < 0 || episodes < 0 || mask_refresh < 0 || refresh_window < 30) {
    throw std::invalid_argument("trainer: invalid stage lengths");
  }
  if (replay_capacity == 0) throw std::invalid_argument("trainer: replay capacity must be positive");
  if (!(discount >= 0.0 && discount < 1.0)) throw std::invalid_argument("trainer: discount must lie in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("trainer: tau must lie in (0, 1]");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw std::invalid_argument("trainer: flip_prob must lie in [0, 1]");
  guidance.validate();
  notears.validate();
  make_schedule(diffusion_steps, beta_start, beta_end);
}

DiffusionSchedule TrainerConfig::schedule() const {
  return make_schedule(diffusion_steps, beta_start, beta_end);
}

Artifacts offline_stage(const Dataset& data, const TrainerConfig& cfg, Rng& rng) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("offline_stage: empty dataset");
  const int n = static_cast<int>(data.front().s.size());
  const int d = static_cast<int>(data.front().a.size());
  const DiscoveryResult disc = discover(data, cfg.notears);
  Artifacts art;
  art.discovered_w = disc.w;
  art.masks = disc.masks;
  if (cfg.flip_prob > 0.0) {
    Rng corrupt = Rng::derive(cfg.seed, "corrupt");
    art.masks = corrupt_masks(art.masks, cfg.flip_prob, corrupt);
  }
  art.dyn = fit_dynamics(data, art.masks, cfg.dynamics, rng);
  const DiffusionSchedule schedule = cfg.schedule();
  art.net = NoiseNet(n, d, cfg.diffusion_steps, cfg.hidden, cfg.hidden_layers, rng);
  AdamState opt(art.net.net().param_count(), cfg.lr);
  train_noise_net(art.net, data, schedule, opt, cfg.offline_steps, cfg.batch, rng);
  if (cfg.r_star_from_data) {
    art.r_star = data.front().r;
    for (const Transition& t : data) art.r_star = std::max(art.r_star, t.r);
  } else {
    art.r_star = cfg.guidance.r_star;
  }
  return art;
}

namespace {

Matrix net_inputs(const Matrix& actions, const Matrix& states, int k, int steps) {
  Matrix x(actions.rows() + states.rows() + 1, actions.cols());
  x.topRows(actions.rows()) = actions;
  x.middleRows(actions.rows(), states.rows()) = states;
  x.bottomRows(1).setConstant(static_cast<double>(k) / steps);
  return x;
}

GuidanceConfig acting_guidance(const GuidanceConfig& base) {
  GuidanceConfig g = base;
  g.use_r_star = true;
  return g;
}

std::vector<CausalGuidanceHook> acting_hooks(const CausalDynamics& dyn, const GuidanceConfig& cfg,
                                             const DiffusionSchedule& schedule, const Matrix& states,
                                             KlAccumulator* kl) {
  std::vector<CausalGuidanceHook> hooks;
  hooks.reserve(states.cols());
  const GuidanceConfig g = acting_guidance(cfg);
  for (Eigen::Index b = 0; b < states.cols(); ++b) {
    hooks.emplace_back(dyn, g, schedule, states.col(b), std::nullopt, std::nullopt, kl);
  }
  return hooks;
}

double clamp_box(double x) { return std::clamp(x, -1.0, 1.0); }

}  // namespace

Matrix sample_actions(const NoiseNet& net, const DiffusionSchedule& schedule, const Matrix& states,
                      int count, Rng& rng, const CausalDynamics* dyn, const GuidanceConfig* guidance,
                      KlAccumulator* kl) {
  const int d = net.action_dim();
  const Eigen::Index batch = states.cols();
  Matrix a(d, batch);
  for (Eigen::Index b = 0; b < batch; ++b) a.col(b) = rng.normal_vector(d);
  const bool guided = dyn && guidance && guidance->active();
  std::vector<CausalGuidanceHook> hooks;
  if (guided) hooks = acting_hooks(*dyn, *guidance, schedule, states, kl);
  const std::vector<int> ks = stride_steps(schedule.steps, count);
  for (std::size_t i = 0; i + 1 < ks.size(); ++i) {
    const int k = ks[i];
    const int k_prev = ks[i + 1];
    Matrix eps = net.net().forward(net_inputs(a, states, k, schedule.steps));
    if (guided) {
      for (Eigen::Index b = 0; b < batch; ++b) {
        eps.col(b) -= hooks[b].correction(a.col(b), eps.col(b), k, k_prev);
      }
    }
    const double ab = schedule.alpha_bar(k);
    const double ab_prev = schedule.alpha_bar(k_prev);
    const Matrix a0 = (a - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    a = std::sqrt(ab_prev) * a0 + std::sqrt(1.0 - ab_prev) * eps;
  }
  return a.unaryExpr([](double x) { return clamp_box(x); });
}

double critic_update(CriticPair& critics, const Dataset& batch,
                     const std::function<Matrix(const Matrix& next_states)>& policy,
                     AdamState& opt1, AdamState& opt2) {
  critics.validate();
  if (batch.empty()) throw std::invalid_argument("critic_update: empty batch");
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index n = batch.front().s.size();
  const Eigen::Index d = batch.front().a.size();
  Matrix next_states(n, b);
  Matrix inputs(n + d, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    next_states.col(i) = batch[i].s_next;
    inputs.col(i) << batch[i].s, batch[i].a;
  }
  const Matrix next_actions = policy(next_states);
  Matrix next_inputs(n + d, b);
  next_inputs.topRows(n) = next_states;
  next_inputs.bottomRows(d) = next_actions;
  const Matrix t1 = critics.target1.forward(next_inputs);
  const Matrix t2 = critics.target2.forward(next_inputs);
  Matrix y(1, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    y(0, i) = batch[i].done ? batch[i].r : batch[i].r + critics.discount * std::min(t1(0, i), t2(0, i));
  }
  Mlp::Tape tape1;
  Mlp::Tape tape2;
  const Matrix err1 = critics.q1.forward(inputs, tape1) - y;
  const Matrix err2 = critics.q2.forward(inputs, tape2) - y;
  Vector g1 = Vector::Zero(critics.q1.param_count());
  Vector g2 = Vector::Zero(critics.q2.param_count());
  critics.q1.backward(tape1, err1 * (2.0 / b), &g1);
  critics.q2.backward(tape2, err2 * (2.0 / b), &g2);
  adam_step(critics.q1.params(), g1, opt1);
  adam_step(critics.q2.params(), g2, opt2);
  const double tau = critics.tau;
  critics.target1.params() = tau * critics.q1.params() + (1.0 - tau) * critics.target1.params();
  critics.target2.params() = tau * critics.q2.params() + (1.0 - tau) * critics.target2.params();
  return (err1.squaredNorm() + err2.squaredNorm()) / b;
}

ActorGradient actor_gradient(const NoiseNet& net, const CriticPair& critics,
                             const DiffusionSchedule& schedule, const Matrix& states,
                             const Matrix& start_noise, int count, const CausalDynamics* dyn,
                             const GuidanceConfig* guidance) {
  const int d = net.action_dim();
  const Eigen::Index batch = states.cols();
  if (start_noise.rows() != d || start_noise.cols() != batch) {
    throw std::invalid_argument("actor_gradient: start noise shape mismatch");
  }
  const bool guided = dyn && guidance && guidance->active();
  std::vector<CausalGuidanceHook> hooks;
  if (guided) hooks = acting_hooks(*dyn, *guidance, schedule, states, nullptr);

  struct StepRecord {
    Mlp::Tape tape;
    double c1 = 0.0;
    double c2 = 0.0;
    std::vector<Matrix> jac;
  };
  const std::vector<int> ks = stride_steps(schedule.steps, count);
  std::vector<StepRecord> records(ks.size() - 1);
  Matrix a = start_noise;
  for (std::size_t i = 0; i + 1 < ks.size(); ++i) {
    const int k = ks[i];
    const int k_prev = ks[i + 1];
    StepRecord& rec = records[i];
    const Matrix eps_raw = net.net().forward(net_inputs(a, states, k, schedule.steps), rec.tape);
    Matrix eps = eps_raw;
    if (guided) {
      rec.jac.reserve(batch);
      for (Eigen::Index b = 0; b < batch; ++b) {
        const Vector ab_col = a.col(b);
        const Vector e_col = eps_raw.col(b);
        eps.col(b) -= hooks[b].correction(ab_col, e_col, k, k_prev);
        rec.jac.push_back(hooks[b].correction_jacobian(ab_col, e_col, k, k_prev));
      }
    }
    const double ab = schedule.alpha_bar(k);
    const double ab_prev = schedule.alpha_bar(k_prev);
    // a_prev = c1 a + c2 eps_hat
    rec.c1 = std::sqrt(ab_prev) / std::sqrt(ab);
    rec.c2 = std::sqrt(1.0 - ab_prev) - std::sqrt(ab_prev) * std::sqrt(1.0 - ab) / std::sqrt(ab);
    a = rec.c1 * a + rec.c2 * eps;
  }

  ActorGradient out;
  out.actions = a.unaryExpr([](double x) { return clamp_box(x); });
  const Eigen::Index n = states.rows();
  Matrix q_inputs(n + d, batch);
  q_inputs.topRows(n) = states;
  q_inputs.bottomRows(d) = out.actions;
  Mlp::Tape q_tape;
  const Matrix q = critics.q1.forward(q_inputs, q_tape);
  out.q_objective = q.mean();
  const Matrix dq = critics.q1.backward(q_tape, Matrix::Ones(1, batch), nullptr);
  Matrix g = -dq.bottomRows(d) / static_cast<double>(batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int j = 0; j < d; ++j) {
      if (a(j, b) > 1.0 || a(j, b) < -1.0) g(j, b) = 0.0;
    }
  }
  out.grad = Vector::Zero(net.net().param_count());
  for (std::size_t i = records.size(); i-- > 0;) {
    const StepRecord& rec = records[i];
    const Matrix g_eps = rec.c2 * g;
    const Matrix input_grad = net.net().backward(rec.tape, g_eps, &out.grad);
    Matrix g_prev = rec.c1 * g + input_grad.topRows(d);
    if (guided) {
      for (Eigen::Index b = 0; b < batch; ++b) g_prev.col(b) -= rec.jac[b].transpose() * g_eps.col(b);
    }
    g = std::move(g_prev);
  }
  return out;
}

PolicyStep policy_update(NoiseNet& net, const CriticPair& critics, const CausalDynamics& dyn,
                         const Dataset& data, const TrainerConfig& cfg,
                         const DiffusionSchedule& schedule, AdamState& opt, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("policy_update: empty dataset");
  const std::vector<TrainBatchItem> items =
      draw_denoise_batch(data.size(), cfg.batch, schedule.steps, net.action_dim(), rng);
  const bool guided = cfg.guidance.active();
  std::vector<Vector> targets;
  targets.reserve(items.size());
  for (const TrainBatchItem& item : items) {
    if (!guided) {
      targets.push_back(item.noise);
      continue;
    }
    const Transition& t = data.at(item.index);
    const double ab = schedule.alpha_bar(item.k);
    const Vector a_k = std::sqrt(ab) * t.a + std::sqrt(1.0 - ab) * item.noise;
    GuidanceConfig replay = cfg.guidance;
    replay.use_r_star = false;
    const CausalGuidanceHook hook(dyn, replay, schedule, t.s, t.s_next, t.r);
    targets.push_back(guided_noise(item.noise, hook.causal_grad(a_k), cfg.guidance.lambda_at(item.k), ab));
  }
  Vector grad = Vector::Zero(net.net().param_count());
  PolicyStep out;
  out.denoise_loss = denoise_loss_grad(net, schedule, data, items, targets, &grad);
  if (cfg.eta > 0.0) {
    const Eigen::Index batch = static_cast<Eigen::Index>(items.size());
    const int n = net.state_dim();
    Matrix states(n, batch);
    for (Eigen::Index b = 0; b < batch; ++b) states.col(b) = data.at(items[b].index).s;
    Matrix z(net.action_dim(), batch);
    for (Eigen::Index b = 0; b < batch; ++b) z.col(b) = rng.normal_vector(net.action_dim());
    const ActorGradient actor =
        actor_gradient(net, critics, schedule, states, z, cfg.actor_steps, &dyn, &cfg.guidance);
    double scale = cfg.eta;
    if (cfg.q_normalize) {
      Matrix q_inputs(n + net.action_dim(), batch);
      q_inputs.topRows(n) = states;
      q_inputs.bottomRows(net.action_dim()) = actor.actions;
      const double mean_abs = critics.q2.forward(q_inputs).cwiseAbs().mean();
      scale /= std::max(mean_abs, 1e-6);
    }
    grad += scale * actor.grad;
    out.q_objective = actor.q_objective;
  }
  adam_step(net.net().params(), grad, opt);
  return out;
}

OnlineResult online_stage(const Environment& env, Artifacts& artifacts, const Dataset& offline_data,
                          const TrainerConfig& cfg, Rng& rng, const MetricsSink& sink) {
  cfg.validate();
  const DiffusionSchedule schedule = cfg.schedule();
  const int n = env.state_dim();
  const int d = env.action_dim();
  if (artifacts.net.state_dim() != n || artifacts.net.action_dim() != d) {
    throw std::invalid_argument("online_stage: artifacts do not match the environment");
  }
  OnlineResult result;
  if (cfg.episodes == 0) return result;

  ReplayBuffer buffer(cfg.replay_capacity);
  for (const Transition& t : offline_data) buffer.push(t);
  result.critics = CriticPair::create(n, d, cfg.hidden, cfg.hidden_layers, rng);
  result.critics.tau = cfg.tau;
  result.critics.discount = cfg.discount;
  CriticPair& critics = result.critics;
  AdamState policy_opt(artifacts.net.net().param_count(), cfg.lr);
  AdamState q1_opt(critics.q1.param_count(), cfg.critic_lr);
  AdamState q2_opt(critics.q2.param_count(), cfg.critic_lr);
  Rng env_rng = Rng::derive(cfg.seed, "env");
  Rng corrupt_rng = Rng::derive(cfg.seed, "corrupt-refresh");
  const bool guided = cfg.guidance.active();
  GuidanceConfig acting = cfg.guidance;
  double r_star = artifacts.r_star;
  long env_steps = 0;

  for (int episode = 1; episode <= cfg.episodes; ++episode) {
    EpisodeMetrics m;
    m.episode = episode;
    EnvState state = env.reset(env_rng);
    int updates = 0;
    int actions = 0;
    int step = 0;
    while (!state.done) {
      acting.r_star = r_star;
      KlAccumulator kl;
      const Matrix s(state.obs);
      const Vector a = sample_actions(artifacts.net, schedule, s, cfg.act_steps, rng, &artifacts.dyn,
                                      guided ? &acting : nullptr, &kl)
                           .col(0);
      m.kl_integral += kl.value;
      ++actions;
      StepOutcome outcome;
      try {
        outcome = env.step(state, a, env_rng);
      } catch (const std::exception& e) {
        throw std::runtime_error("environment fault at episode " + std::to_string(episode) + " step " +
                                 std::to_string(step) + ": " + e.what());
      }
      ++step;
      buffer.push({state.obs, a, outcome.reward, outcome.state.obs, outcome.done});
      if (cfg.r_star_from_data) r_star = std::max(r_star, outcome.reward);
      m.ret += outcome.reward;
      state = std::move(outcome.state);

      Dataset batch;
      batch.reserve(cfg.batch);
      for (int b = 0; b < cfg.batch; ++b) batch.push_back(buffer.storage()[rng.index(buffer.size())]);
      acting.r_star = r_star;
      auto policy = [&](const Matrix& next_states) {
        return sample_actions(artifacts.net, schedule, next_states, cfg.act_steps, rng, &artifacts.dyn,
                              guided ? &acting : nullptr);
      };
      m.q_loss += critic_update(critics, batch, policy, q1_opt, q2_opt);
      TrainerConfig step_cfg = cfg;
      step_cfg.guidance.r_star = r_star;
      const PolicyStep ps = policy_update(artifacts.net, critics, artifacts.dyn, buffer.storage(), step_cfg,
                                          schedule, policy_opt, rng);
      m.denoise_loss += ps.denoise_loss;
      ++updates;
      ++env_steps;

      if (guided && cfg.mask_refresh > 0 && env_steps % cfg.mask_refresh == 0) {
        const Dataset window = buffer.window(static_cast<std::size_t>(cfg.refresh_window));
        const DiscoveryResult disc = discover(window, cfg.notears, artifacts.discovered_w);
        artifacts.discovered_w = disc.w;
        artifacts.masks = disc.masks;
        if (cfg.flip_prob > 0.0) artifacts.masks = corrupt_masks(artifacts.masks, cfg.flip_prob, corrupt_rng);
        artifacts.dyn = fit_dynamics(window, artifacts.masks, cfg.dynamics, rng);
        m.mask_refresh = true;
      }
    }
    if (updates > 0) {
      m.denoise_loss /= updates;
      m.q_loss /= updates;
    }
    if (actions > 0) m.kl_integral /= actions;
    artifacts.r_star = r_star;
    result.episodes.push_back(m);
    if (sink) sink(m);
  }
  return result;
}

std::vector<double> evaluate_policy(const Environment& env, const Artifacts& artifacts,
                                    const TrainerConfig& cfg, int episodes, Rng& rng, bool guided) {
  const DiffusionSchedule schedule = cfg.schedule();
  Rng env_rng = Rng::derive(cfg.seed, "eval-env");
  GuidanceConfig acting = cfg.guidance;
  acting.r_star = artifacts.r_star;
  const bool use_guidance = guided && acting.active();
  std::vector<double> returns;
  for (int e = 0; e < episodes; ++e) {
    EnvState state = env.reset(env_rng);
    double ret = 0.0;
    while (!state.done) {
      const Matrix s(state.obs);
      const Vector a = sample_actions(artifacts.net, schedule, s, cfg.act_steps, rng, &artifacts.dyn,
                                      use_guidance ? &acting : nullptr)
                           .col(0);
      StepOutcome outcome = env.step(state, a, env_rng);
      ret += outcome.reward;
      state = std::move(outcome.state);
    }
    returns.push_back(ret);
  }
  return returns;
}

}  // namespace cgdp
