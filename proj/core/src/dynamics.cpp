#include "cgdp/dynamics.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "cgdp/adam.hpp"

namespace cgdp {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

std::string join_widths(const std::vector<int>& widths) {
  std::string out;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(widths[i]);
  }
  return out;
}

std::vector<int> split_widths(const std::string& text) {
  std::vector<int> widths;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) widths.push_back(std::stoi(item));
  return widths;
}

// Derivative of the gate: the mask value, with exact zeros kept exact.
Vector gate_derivative(const Vector& upstream, const Eigen::Ref<const Vector>& mask) {
  Vector out(upstream.size());
  for (Eigen::Index j = 0; j < upstream.size(); ++j) out(j) = mask(j) == 0.0 ? 0.0 : mask(j) * upstream(j);
  return out;
}

Vector concat(const Vector& x, const Vector& y) {
  Vector out(x.size() + y.size());
  out << x, y;
  return out;
}

}  // namespace

ModelKind parse_model_kind(const std::string& text) {
  if (text == "linear") return ModelKind::linear;
  if (text == "mlp") return ModelKind::mlp;
  throw std::invalid_argument("unknown model kind '" + text + "' (expected linear or mlp)");
}

std::string to_string(ModelKind kind) { return kind == ModelKind::linear ? "linear" : "mlp"; }

Vector gate(const Vector& x, const Eigen::Ref<const Vector>& mask) {
  if (x.size() != mask.size()) throw std::invalid_argument("gate: dimension mismatch");
  Vector out(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) out(j) = mask(j) == 0.0 ? 0.0 : mask(j) * x(j);
  return out;
}

MaskedFeatures apply_masks(const CausalMasks& masks, const Vector& s, const Vector& a,
                           const Vector& s_next) {
  masks.validate();
  const int n = masks.state_dim();
  if (s.size() != n || s_next.size() != n || a.size() != masks.action_dim()) {
    throw std::invalid_argument("apply_masks: dimension mismatch");
  }
  MaskedFeatures out;
  for (int i = 0; i < n; ++i) {
    out.state.push_back(gate(s, masks.c_ss.col(i)));
    out.action.push_back(gate(a, masks.c_as.col(i)));
  }
  out.reward_state = gate(s_next, masks.u_sr);
  out.reward_action = gate(a, masks.u_ar);
  return out;
}

void CausalDynamics::set_covariances(Matrix sigma_phi, double sigma_omega) {
  const int n = masks_.state_dim();
  if (sigma_phi.rows() != n || sigma_phi.cols() != n) {
    throw std::invalid_argument("CausalDynamics: sigma_phi must be n x n");
  }
  if (!(sigma_omega > 0.0) || !std::isfinite(sigma_omega)) {
    throw std::domain_error("CausalDynamics: sigma_omega must be positive");
  }
  sigma_chol_ = cholesky_lower(sigma_phi, "CausalDynamics sigma_phi");
  sigma_inv_ = sigma_chol_.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  sigma_inv_ = sigma_inv_.transpose() * sigma_inv_;
  sigma_logdet_ = 2.0 * sigma_chol_.diagonal().array().log().sum();
  sigma_phi_ = std::move(sigma_phi);
  sigma_omega_ = sigma_omega;
}

CausalDynamics CausalDynamics::linear(CausalMasks masks, Matrix f_s, Matrix f_a, Vector b_s,
                                      Vector b_a, Matrix sigma_phi, double sigma_omega) {
  masks.validate();
  const int n = masks.state_dim();
  const int d = masks.action_dim();
  if (f_s.rows() != n || f_s.cols() != n || f_a.rows() != n || f_a.cols() != d ||
      b_s.size() != n || b_a.size() != d) {
    throw std::invalid_argument("CausalDynamics::linear: operator shapes do not match masks");
  }
  CausalDynamics dyn;
  dyn.kind_ = ModelKind::linear;
  dyn.masks_ = std::move(masks);
  dyn.f_s_ = std::move(f_s);
  dyn.f_a_ = std::move(f_a);
  dyn.b_s_ = std::move(b_s);
  dyn.b_a_ = std::move(b_a);
  dyn.set_covariances(std::move(sigma_phi), sigma_omega);
  return dyn;
}

CausalDynamics CausalDynamics::mlp(CausalMasks masks, std::vector<Mlp> transition_nets,
                                   Mlp reward_net, Matrix sigma_phi, double sigma_omega) {
  masks.validate();
  const int n = masks.state_dim();
  const int d = masks.action_dim();
  if (static_cast<int>(transition_nets.size()) != n) {
    throw std::invalid_argument("CausalDynamics::mlp: need one transition net per state coordinate");
  }
  for (const Mlp& net : transition_nets) {
    if (net.input_dim() != n + d || net.output_dim() != 1) {
      throw std::invalid_argument("CausalDynamics::mlp: transition net must map n + d inputs to 1");
    }
  }
  if (reward_net.input_dim() != n + d || reward_net.output_dim() != 1) {
    throw std::invalid_argument("CausalDynamics::mlp: reward net must map n + d inputs to 1");
  }
  CausalDynamics dyn;
  dyn.kind_ = ModelKind::mlp;
  dyn.masks_ = std::move(masks);
  dyn.transition_nets_ = std::move(transition_nets);
  dyn.reward_net_ = std::move(reward_net);
  dyn.set_covariances(std::move(sigma_phi), sigma_omega);
  return dyn;
}

CausalDynamics CausalDynamics::from_scm(const GroundTruthScm& scm, const CausalMasks& masks) {
  scm.validate();
  return linear(masks, scm.f_s, scm.f_a, scm.b_s, scm.b_a, scm.sigma_phi, scm.sigma_omega);
}

const Matrix& CausalDynamics::f_s() const {
  if (kind_ != ModelKind::linear) throw std::logic_error("CausalDynamics: not a linear model");
  return f_s_;
}
const Matrix& CausalDynamics::f_a() const {
  if (kind_ != ModelKind::linear) throw std::logic_error("CausalDynamics: not a linear model");
  return f_a_;
}
const Vector& CausalDynamics::b_s() const {
  if (kind_ != ModelKind::linear) throw std::logic_error("CausalDynamics: not a linear model");
  return b_s_;
}
const Vector& CausalDynamics::b_a() const {
  if (kind_ != ModelKind::linear) throw std::logic_error("CausalDynamics: not a linear model");
  return b_a_;
}

Matrix CausalDynamics::effective_f_s() const {
  Matrix out = f_s();
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = gate(out.row(i).transpose(), masks_.c_ss.col(i)).transpose();
  return out;
}

Matrix CausalDynamics::effective_f_a() const {
  Matrix out = f_a();
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = gate(out.row(i).transpose(), masks_.c_as.col(i)).transpose();
  return out;
}

Vector CausalDynamics::effective_b_s() const { return gate(b_s(), masks_.u_sr); }
Vector CausalDynamics::effective_b_a() const { return gate(b_a(), masks_.u_ar); }

void CausalDynamics::check_dims(const Vector& s, const Vector& a) const {
  if (s.size() != state_dim() || a.size() != action_dim()) {
    throw std::invalid_argument("CausalDynamics: state/action dimension mismatch");
  }
}

Vector CausalDynamics::transition_mean(const Vector& s, const Vector& a) const {
  check_dims(s, a);
  const int n = state_dim();
  Vector mean(n);
  for (int i = 0; i < n; ++i) {
    const Vector gs = gate(s, masks_.c_ss.col(i));
    const Vector ga = gate(a, masks_.c_as.col(i));
    if (kind_ == ModelKind::linear) {
      mean(i) = f_s_.row(i).dot(gs) + f_a_.row(i).dot(ga);
    } else {
      mean(i) = transition_nets_[i].forward(concat(gs, ga))(0);
    }
  }
  return mean;
}

double CausalDynamics::reward_mean(const Vector& s_next, const Vector& a) const {
  check_dims(s_next, a);
  const Vector gs = gate(s_next, masks_.u_sr);
  const Vector ga = gate(a, masks_.u_ar);
  if (kind_ == ModelKind::linear) return b_s_.dot(gs) + b_a_.dot(ga);
  return reward_net_.forward(concat(gs, ga))(0);
}

Matrix CausalDynamics::transition_action_jacobian(const Vector& s, const Vector& a) const {
  check_dims(s, a);
  if (kind_ == ModelKind::linear) return effective_f_a();
  const int n = state_dim();
  const int d = action_dim();
  Matrix jac(n, d);
  Vector one = Vector::Ones(1);
  for (int i = 0; i < n; ++i) {
    const Vector input = concat(gate(s, masks_.c_ss.col(i)), gate(a, masks_.c_as.col(i)));
    const Vector g = transition_nets_[i].backward(input, one).input;
    jac.row(i) = gate_derivative(g.tail(d), masks_.c_as.col(i)).transpose();
  }
  return jac;
}

Vector CausalDynamics::reward_action_gradient(const Vector& s_next, const Vector& a) const {
  check_dims(s_next, a);
  if (kind_ == ModelKind::linear) return effective_b_a();
  const Vector input = concat(gate(s_next, masks_.u_sr), gate(a, masks_.u_ar));
  const Vector g = reward_net_.backward(input, Vector::Ones(1)).input;
  return gate_derivative(g.tail(action_dim()), masks_.u_ar);
}

Vector CausalDynamics::reward_state_gradient(const Vector& s_next, const Vector& a) const {
  check_dims(s_next, a);
  if (kind_ == ModelKind::linear) return effective_b_s();
  const Vector input = concat(gate(s_next, masks_.u_sr), gate(a, masks_.u_ar));
  const Vector g = reward_net_.backward(input, Vector::Ones(1)).input;
  return gate_derivative(g.head(state_dim()), masks_.u_sr);
}

std::pair<Vector, double> CausalDynamics::sample(const Vector& s, const Vector& a, Rng& rng) const {
  Vector s_next = transition_mean(s, a) + sigma_chol_ * rng.normal_vector(state_dim());
  const double r = reward_mean(s_next, a) + std::sqrt(sigma_omega_) * rng.normal();
  return {std::move(s_next), r};
}

Checkpoint CausalDynamics::to_checkpoint() const {
  Checkpoint ck("dynamics");
  ck.put_meta("model", to_string(kind_));
  save_masks(ck, "mask", masks_);
  ck.put("sigma_phi", sigma_phi_);
  ck.put("sigma_omega", Matrix::Constant(1, 1, sigma_omega_));
  if (kind_ == ModelKind::linear) {
    ck.put("f_s", f_s_);
    ck.put("f_a", f_a_);
    ck.put_vector("b_s", b_s_);
    ck.put_vector("b_a", b_a_);
  } else {
    ck.put_meta("transition_widths", join_widths(transition_nets_.front().widths()));
    ck.put_meta("reward_widths", join_widths(reward_net_.widths()));
    for (std::size_t i = 0; i < transition_nets_.size(); ++i) {
      ck.put_vector("transition_net_" + std::to_string(i), transition_nets_[i].params());
    }
    ck.put_vector("reward_net", reward_net_.params());
  }
  return ck;
}

CausalDynamics CausalDynamics::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind() != "dynamics") throw std::runtime_error("checkpoint is not a dynamics model");
  const ModelKind kind = parse_model_kind(ck.meta("model"));
  CausalMasks masks = load_masks(ck, "mask");
  const double sigma_omega = ck.get("sigma_omega")(0, 0);
  if (kind == ModelKind::linear) {
    return linear(std::move(masks), ck.get("f_s"), ck.get("f_a"), ck.get_vector("b_s"),
                  ck.get_vector("b_a"), ck.get("sigma_phi"), sigma_omega);
  }
  const std::vector<int> tw = split_widths(ck.meta("transition_widths"));
  std::vector<Mlp> nets;
  for (int i = 0; i < masks.state_dim(); ++i) {
    Mlp net(tw);
    net.set_params(ck.get_vector("transition_net_" + std::to_string(i)));
    nets.push_back(std::move(net));
  }
  Mlp reward(split_widths(ck.meta("reward_widths")));
  reward.set_params(ck.get_vector("reward_net"));
  return mlp(std::move(masks), std::move(nets), std::move(reward), ck.get("sigma_phi"), sigma_omega);
}

namespace {

struct Regression {
  Vector coef;
  bool ridge = false;
};

Regression least_squares(const Matrix& x, const Vector& y, double ridge) {
  Regression out;
  if (x.cols() == 0) {
    out.coef = Vector(0);
    return out;
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() == x.cols()) {
    out.coef = qr.solve(y);
    return out;
  }
  const Matrix gram = x.transpose() * x + ridge * static_cast<double>(x.rows()) *
                                              Matrix::Identity(x.cols(), x.cols());
  out.coef = gram.ldlt().solve(x.transpose() * y);
  out.ridge = true;
  return out;
}

Matrix residual_covariance(const Matrix& resid, const DynamicsFitConfig& cfg) {
  const int n = static_cast<int>(resid.cols());
  const double count = static_cast<double>(resid.rows());
  Matrix cov;
  if (n <= cfg.full_covariance_max_dim) {
    cov = resid.transpose() * resid / count;
    cov = 0.5 * (cov + cov.transpose());
  } else {
    cov = (resid.colwise().squaredNorm() / count).asDiagonal();
  }
  cov.diagonal().array() += cfg.variance_floor;
  return cov;
}

CausalDynamics fit_linear(const Dataset& data, const CausalMasks& masks,
                          const DynamicsFitConfig& cfg, DynamicsFitReport* report) {
  const int n = masks.state_dim();
  const int d = masks.action_dim();
  const Eigen::Index count = static_cast<Eigen::Index>(data.size());
  if (count < 10 * (n + d)) {
    throw std::invalid_argument("fit_dynamics: linear kind needs at least 10 (n + d) transitions");
  }
  Matrix f_s = Matrix::Zero(n, n);
  Matrix f_a = Matrix::Zero(n, d);
  Vector b_s = Vector::Zero(n);
  Vector b_a = Vector::Zero(d);
  Matrix resid(count, n);
  Vector reward_resid(count);

  // One equation: regress target on the gated inputs whose mask is nonzero.
  auto solve = [&](int eq, const Eigen::Ref<const Vector>& state_mask, bool next_state,
                   const Eigen::Ref<const Vector>& action_mask, auto target, Eigen::Ref<Vector> sc,
                   Eigen::Ref<Vector> ac, Eigen::Ref<Vector> res) {
    std::vector<int> si;
    std::vector<int> ai;
    for (int j = 0; j < n; ++j) if (state_mask(j) != 0.0) si.push_back(j);
    for (int j = 0; j < d; ++j) if (action_mask(j) != 0.0) ai.push_back(j);
    const Eigen::Index p = static_cast<Eigen::Index>(si.size() + ai.size());
    Matrix x(count, p);
    Vector y(count);
    for (Eigen::Index k = 0; k < count; ++k) {
      const Transition& t = data[k];
      const Vector& st = next_state ? t.s_next : t.s;
      Eigen::Index c = 0;
      for (int j : si) x(k, c++) = state_mask(j) * st(j);
      for (int j : ai) x(k, c++) = action_mask(j) * t.a(j);
      y(k) = target(t);
    }
    const Regression reg = least_squares(x, y, cfg.ridge);
    if (reg.ridge && report) report->ridge_equations.push_back(eq);
    Eigen::Index c = 0;
    for (int j : si) sc(j) = reg.coef(c++);
    for (int j : ai) ac(j) = reg.coef(c++);
    res = p > 0 ? Vector(y - x * reg.coef) : y;
  };

  for (int i = 0; i < n; ++i) {
    Vector row_s = Vector::Zero(n);
    Vector row_a = Vector::Zero(d);
    solve(i, masks.c_ss.col(i), false, masks.c_as.col(i),
          [i](const Transition& t) { return t.s_next(i); }, row_s, row_a, resid.col(i));
    f_s.row(i) = row_s.transpose();
    f_a.row(i) = row_a.transpose();
  }
  solve(n, masks.u_sr, true, masks.u_ar, [](const Transition& t) { return t.r; }, b_s, b_a,
        reward_resid);

  Matrix sigma_phi = residual_covariance(resid, cfg);
  const double sigma_omega = reward_resid.squaredNorm() / static_cast<double>(count) + cfg.variance_floor;
  if (report) report->final_loss = resid.squaredNorm() / static_cast<double>(count);
  return CausalDynamics::linear(masks, f_s, f_a, b_s, b_a, std::move(sigma_phi), sigma_omega);
}

CausalDynamics fit_mlp(const Dataset& data, const CausalMasks& masks, const DynamicsFitConfig& cfg,
                       Rng& rng, DynamicsFitReport* report) {
  const int n = masks.state_dim();
  const int d = masks.action_dim();
  const Eigen::Index count = static_cast<Eigen::Index>(data.size());
  if (cfg.hidden < 1 || cfg.hidden_layers < 0 || cfg.steps < 0 || cfg.batch < 1) {
    throw std::invalid_argument("fit_dynamics: invalid MLP settings");
  }
  std::vector<int> widths{n + d};
  for (int l = 0; l < cfg.hidden_layers; ++l) widths.push_back(cfg.hidden);
  widths.push_back(1);

  // Gated inputs per equation, precomputed once.
  std::vector<Matrix> inputs(n + 1, Matrix(n + d, count));
  Matrix targets(n + 1, count);
  for (Eigen::Index k = 0; k < count; ++k) {
    const Transition& t = data[k];
    for (int i = 0; i < n; ++i) {
      inputs[i].col(k) << gate(t.s, masks.c_ss.col(i)), gate(t.a, masks.c_as.col(i));
      targets(i, k) = t.s_next(i);
    }
    inputs[n].col(k) << gate(t.s_next, masks.u_sr), gate(t.a, masks.u_ar);
    targets(n, k) = t.r;
  }

  std::vector<Mlp> nets;
  std::vector<AdamState> opts;
  for (int i = 0; i <= n; ++i) {
    nets.push_back(Mlp::random(widths, rng));
    opts.emplace_back(nets.back().param_count(), cfg.lr);
  }
  const int batch = static_cast<int>(std::min<Eigen::Index>(cfg.batch, count));
  Matrix xb(n + d, batch);
  Matrix yb(1, batch);
  std::vector<Eigen::Index> idx(batch);
  double loss = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    for (int b = 0; b < batch; ++b) idx[b] = static_cast<Eigen::Index>(rng.index(count));
    loss = 0.0;
    for (int i = 0; i <= n; ++i) {
      for (int b = 0; b < batch; ++b) {
        xb.col(b) = inputs[i].col(idx[b]);
        yb(0, b) = targets(i, idx[b]);
      }
      Mlp::Tape tape;
      const Matrix out = nets[i].forward(xb, tape);
      const Matrix err = out - yb;
      loss += err.squaredNorm() / batch;
      Vector grad = Vector::Zero(nets[i].param_count());
      nets[i].backward(tape, err * (2.0 / batch), &grad);
      adam_step(nets[i].params(), grad, opts[i]);
    }
  }

  Matrix resid(count, n);
  Vector reward_resid(count);
  for (int i = 0; i < n; ++i) resid.col(i) = (targets.row(i) - nets[i].forward(inputs[i])).transpose();
  reward_resid = (targets.row(n) - nets[n].forward(inputs[n])).transpose();
  DynamicsFitConfig diag = cfg;
  diag.full_covariance_max_dim = 0;
  Matrix sigma_phi = residual_covariance(resid, diag);
  const double sigma_omega = reward_resid.squaredNorm() / static_cast<double>(count) + cfg.variance_floor;
  if (report) report->final_loss = loss;
  Mlp reward = std::move(nets.back());
  nets.pop_back();
  return CausalDynamics::mlp(masks, std::move(nets), std::move(reward), std::move(sigma_phi), sigma_omega);
}

}  // namespace

CausalDynamics fit_dynamics(const Dataset& transitions, const CausalMasks& masks,
                            const DynamicsFitConfig& cfg, Rng& rng, DynamicsFitReport* report) {
  masks.validate();
  if (transitions.empty()) throw std::invalid_argument("fit_dynamics: no transitions");
  for (const Transition& t : transitions) {
    if (t.s.size() != masks.state_dim() || t.s_next.size() != masks.state_dim() ||
        t.a.size() != masks.action_dim()) {
      throw std::invalid_argument("fit_dynamics: transition dimensions do not match masks");
    }
  }
  if (report) *report = {};
  if (cfg.kind == ModelKind::linear) return fit_linear(transitions, masks, cfg, report);
  return fit_mlp(transitions, masks, cfg, rng, report);
}

LogDensity transition_logpdf_grad(const CausalDynamics& dyn, const Vector& s, const Vector& a,
                                  const Vector& s_next) {
  if (s_next.size() != dyn.state_dim()) throw std::invalid_argument("transition_logpdf_grad: bad s_next");
  const Vector resid = s_next - dyn.transition_mean(s, a);
  const Vector weighted = dyn.sigma_phi_inverse() * resid;
  LogDensity out;
  out.log_p = -0.5 * (dyn.state_dim() * kLog2Pi + dyn.sigma_phi_logdet() + resid.dot(weighted));
  out.grad = dyn.transition_action_jacobian(s, a).transpose() * weighted;
  return out;
}

LogDensity reward_logpdf_grad(const CausalDynamics& dyn, const Vector& s_next, const Vector& a,
                              double r) {
  const double resid = r - dyn.reward_mean(s_next, a);
  const double var = dyn.sigma_omega();
  LogDensity out;
  out.log_p = -0.5 * (kLog2Pi + std::log(var) + resid * resid / var);
  out.grad = dyn.reward_action_gradient(s_next, a) * (resid / var);
  return out;
}

LogDensity joint_logpdf_grad(const CausalDynamics& dyn, const Vector& s, const Vector& a,
                             const Vector& s_next, double r) {
  const LogDensity t = transition_logpdf_grad(dyn, s, a, s_next);
  const LogDensity w = reward_logpdf_grad(dyn, s_next, a, r);
  return {t.log_p + w.log_p, t.grad + w.grad};
}

Vector do_intervention_joint_grad(const CausalDynamics& dyn, const Vector& s, const Vector& a,
                                  const Vector& s_next, double r_target, double gamma,
                                  double beta_guid) {
  if (!std::isfinite(gamma) || !std::isfinite(beta_guid)) {
    throw std::invalid_argument("do_intervention_joint_grad: non-finite coefficient");
  }
  Vector grad = Vector::Zero(dyn.action_dim());
  if (gamma != 0.0) grad += gamma * transition_logpdf_grad(dyn, s, a, s_next).grad;
  if (beta_guid != 0.0) grad += beta_guid * reward_logpdf_grad(dyn, s_next, a, r_target).grad;
  return grad;
}

}  // namespace cgdp
