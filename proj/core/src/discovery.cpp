#include "cgdp/discovery.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgdp/checkpoint.hpp"

namespace cgdp {

void NotearsConfig::validate() const {
  if (!(lambda1 >= 0.0)) throw std::invalid_argument("NotearsConfig: lambda1 must be >= 0");
  if (!(rho_init > 0.0)) throw std::invalid_argument("NotearsConfig: rho must be > 0");
  if (!(rho_growth > 1.0)) throw std::invalid_argument("NotearsConfig: rho growth must be > 1");
  if (!(tolerance > 0.0)) throw std::invalid_argument("NotearsConfig: tolerance must be > 0");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("NotearsConfig: threshold must lie in (0, 1)");
  }
  if (max_outer < 1 || max_inner < 1) throw std::invalid_argument("NotearsConfig: iteration caps must be >= 1");
}

double acyclicity(const Matrix& w) {
  if (w.rows() != w.cols()) throw std::invalid_argument("acyclicity: matrix is not square");
  const Matrix e = mat_expm(w.cwiseProduct(w));
  return e.trace() - static_cast<double>(w.rows());
}

AcyclicityValue acyclicity_with_grad(const Matrix& w) {
  if (w.rows() != w.cols()) throw std::invalid_argument("acyclicity: matrix is not square");
  const Matrix e = mat_expm(w.cwiseProduct(w));
  return {e.trace() - static_cast<double>(w.rows()), e.transpose().cwiseProduct(2.0 * w)};
}

namespace {

Matrix centered(const Matrix& data) {
  const Eigen::RowVectorXd mean = data.colwise().mean();
  return data.rowwise() - mean;
}

struct Smooth {
  double value;
  Matrix grad;
  double h;
};

// Least squares through the sample covariance: (1/2n)||X - XW||^2 equals
// 0.5 tr((I - W)^T C (I - W)) with C = X^T X / n.
class NotearsProblem {
 public:
  NotearsProblem(Matrix cov, Matrix allowed, double lambda1)
      : cov_(std::move(cov)), allowed_(std::move(allowed)), lambda1_(lambda1) {}

  double least_squares(const Matrix& w) const {
    const Matrix r = Matrix::Identity(w.rows(), w.cols()) - w;
    return 0.5 * (r.transpose() * cov_ * r).trace();
  }

  Smooth smooth(const Matrix& w, double rho, double alpha, bool with_grad) const {
    const Matrix sq = w.cwiseProduct(w);
    const Matrix e = mat_expm(sq);
    const double h = e.trace() - static_cast<double>(w.rows());
    const Matrix r = Matrix::Identity(w.rows(), w.cols()) - w;
    const Matrix cr = cov_ * r;
    const double value = 0.5 * (r.transpose() * cr).trace() + 0.5 * rho * h * h + alpha * h;
    Smooth out{value, Matrix(), h};
    if (with_grad) {
      out.grad = -cr + (rho * h + alpha) * e.transpose().cwiseProduct(2.0 * w);
      out.grad = out.grad.cwiseProduct(allowed_);
    }
    return out;
  }

  Matrix prox(const Matrix& v, double step) const {
    const double shrink = step * lambda1_;
    Matrix out = v.unaryExpr([shrink](double x) {
      if (x > shrink) return x - shrink;
      if (x < -shrink) return x + shrink;
      return 0.0;
    });
    return out.cwiseProduct(allowed_);
  }

  double l1(const Matrix& w) const { return lambda1_ * w.cwiseAbs().sum(); }

  // Accelerated proximal gradient with backtracking and function-value restart.
  Matrix solve(const Matrix& start, double rho, double alpha, int max_iter, double& step) const {
    Matrix w = start;
    Matrix y = w;
    double theta = 1.0;
    double f_w = smooth(w, rho, alpha, false).value + l1(w);
    for (int it = 0; it < max_iter; ++it) {
      const Smooth sy = smooth(y, rho, alpha, true);
      Matrix w_next;
      double f_next = 0.0;
      for (int bt = 0; bt < 200; ++bt) {
        w_next = prox(y - step * sy.grad, step);
        const Matrix diff = w_next - y;
        f_next = smooth(w_next, rho, alpha, false).value;
        const double model = sy.value + sy.grad.cwiseProduct(diff).sum() +
                             diff.squaredNorm() / (2.0 * step);
        if (f_next <= model + 1e-12 * std::max(1.0, std::abs(model))) break;
        step *= 0.5;
      }
      const double big_f = f_next + l1(w_next);
      const double mapping = (w_next - y).cwiseAbs().maxCoeff() / step;
      if (big_f > f_w && theta > 1.0) {
        // Momentum overshot; restart from the last iterate.
        y = w;
        theta = 1.0;
        continue;
      }
      const double moved = (w_next - w).cwiseAbs().maxCoeff();
      const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
      y = w_next + ((theta - 1.0) / theta_next) * (w_next - w);
      w = std::move(w_next);
      f_w = big_f;
      theta = theta_next;
      step *= 1.1;
      if (mapping < 1e-7 || moved < 1e-12) break;
    }
    return w;
  }

 private:
  Matrix cov_;
  Matrix allowed_;
  double lambda1_;
};

}  // namespace

NotearsResult notears_fit(const Matrix& data, const NotearsConfig& cfg,
                          const std::optional<Matrix>& allowed,
                          const std::optional<Matrix>& warm_start) {
  cfg.validate();
  const Eigen::Index d = data.cols();
  if (data.rows() < 30) {
    throw std::invalid_argument("notears_fit: need at least 30 samples, got " +
                                std::to_string(data.rows()));
  }
  require_finite(data, "notears_fit data");
  Matrix allow = allowed.value_or(Matrix::Ones(d, d));
  if (allow.rows() != d || allow.cols() != d) throw std::invalid_argument("notears_fit: allowed mask shape");
  allow.diagonal().setZero();
  allow = (allow.array() != 0.0).cast<double>().matrix();

  const Matrix x = centered(data);
  const Matrix cov = (x.transpose() * x) / static_cast<double>(x.rows());
  NotearsProblem problem(cov, allow, cfg.lambda1);

  Matrix w = Matrix::Zero(d, d);
  if (warm_start) {
    if (warm_start->rows() != d || warm_start->cols() != d) {
      throw std::invalid_argument("notears_fit: warm start shape");
    }
    w = warm_start->cwiseProduct(allow);
  }
  double rho = cfg.rho_init;
  double alpha = cfg.alpha_init;
  double h = std::numeric_limits<double>::infinity();
  double step = 1.0;
  NotearsResult result;
  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    Matrix w_new;
    double h_new = 0.0;
    while (rho < cfg.rho_max) {
      w_new = problem.solve(w, rho, alpha, cfg.max_inner, step);
      h_new = acyclicity(w_new);
      if (h_new > 0.25 * h) {
        rho *= cfg.rho_growth;
        step = std::min(step, 1.0 / rho);
      } else {
        break;
      }
    }
    if (w_new.size() == 0) break;
    w = std::move(w_new);
    h = h_new;
    alpha += rho * h;
    result.outer_iterations = outer + 1;
    if (h <= cfg.tolerance || rho >= cfg.rho_max) break;
  }
  result.w = w;
  result.h = acyclicity(w);
  result.objective = problem.least_squares(w) + problem.l1(w);
  result.converged = result.h <= cfg.tolerance;
  return result;
}

Matrix threshold_weights(const Matrix& w, double tau) {
  return w.unaryExpr([tau](double x) { return std::abs(x) >= tau ? x : 0.0; });
}

Dag exhaustive_dag_oracle(const Matrix& data) {
  const int p = static_cast<int>(data.cols());
  if (p < 1 || p > 4) throw std::invalid_argument("exhaustive_dag_oracle: supports 1 to 4 variables");
  if (data.rows() <= p) throw std::invalid_argument("exhaustive_dag_oracle: too few samples");
  const Matrix x = centered(data);
  const double n = static_cast<double>(x.rows());
  const Matrix cov = (x.transpose() * x) / n;

  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < p; ++i) {
    for (int j = i + 1; j < p; ++j) pairs.emplace_back(i, j);
  }
  int total = 1;
  for (std::size_t k = 0; k < pairs.size(); ++k) total *= 3;

  double best_score = std::numeric_limits<double>::infinity();
  Matrix best_w = Matrix::Zero(p, p);
  for (int code = 0; code < total; ++code) {
    Matrix adj = Matrix::Zero(p, p);
    int c = code;
    int edges = 0;
    for (auto [i, j] : pairs) {
      const int state = c % 3;
      c /= 3;
      if (state == 1) adj(i, j) = 1.0;
      if (state == 2) adj(j, i) = 1.0;
      edges += state != 0;
    }
    try {
      make_dag(adj);
    } catch (const std::invalid_argument&) {
      continue;
    }
    Matrix w = Matrix::Zero(p, p);
    double rss = 0.0;
    for (int j = 0; j < p; ++j) {
      std::vector<int> parents;
      for (int i = 0; i < p; ++i) {
        if (adj(i, j) != 0.0) parents.push_back(i);
      }
      double resid = cov(j, j);
      if (!parents.empty()) {
        const int k = static_cast<int>(parents.size());
        Matrix cpp(k, k);
        Vector cpj(k);
        for (int a = 0; a < k; ++a) {
          cpj(a) = cov(parents[a], j);
          for (int b = 0; b < k; ++b) cpp(a, b) = cov(parents[a], parents[b]);
        }
        const Vector beta = cpp.ldlt().solve(cpj);
        resid -= cpj.dot(beta);
        for (int a = 0; a < k; ++a) w(parents[a], j) = beta(a);
      }
      rss += std::max(resid, 1e-300);
    }
    const double score = n * p * std::log(rss / p) + edges * std::log(n);
    if (score < best_score - 1e-9) {
      best_score = score;
      best_w = w;
    }
  }
  return make_dag(best_w);
}

int structural_hamming_distance(const Matrix& a, const Matrix& b, double threshold) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols()) {
    throw std::invalid_argument("structural_hamming_distance: shape mismatch");
  }
  int shd = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
      const bool a_ij = std::abs(a(i, j)) > threshold;
      const bool a_ji = std::abs(a(j, i)) > threshold;
      const bool b_ij = std::abs(b(i, j)) > threshold;
      const bool b_ji = std::abs(b(j, i)) > threshold;
      if (a_ij != b_ij || a_ji != b_ji) ++shd;
    }
  }
  return shd;
}

Matrix stack_transitions(const Dataset& transitions) {
  if (transitions.empty()) throw std::invalid_argument("stack_transitions: no transitions");
  const Eigen::Index n = transitions.front().s.size();
  const Eigen::Index d = transitions.front().a.size();
  Matrix x(static_cast<Eigen::Index>(transitions.size()), 2 * n + d + 1);
  for (std::size_t k = 0; k < transitions.size(); ++k) {
    const Transition& t = transitions[k];
    if (t.s.size() != n || t.a.size() != d || t.s_next.size() != n) {
      throw std::invalid_argument("stack_transitions: inconsistent transition dimensions");
    }
    const auto row = static_cast<Eigen::Index>(k);
    x.row(row).segment(0, n) = t.s.transpose();
    x.row(row).segment(n, d) = t.a.transpose();
    x.row(row).segment(n + d, n) = t.s_next.transpose();
    x(row, 2 * n + d) = t.r;
  }
  return x;
}

Matrix temporal_allowed_edges(int n, int d) {
  const int p = 2 * n + d + 1;
  const int later = n + d;
  const int reward = p - 1;
  Matrix allowed = Matrix::Zero(p, p);
  allowed.block(0, later, later, n).setOnes();
  allowed.block(0, reward, reward, 1).setOnes();
  return allowed;
}

CausalMasks masks_from_stacked(const Matrix& w, int n, int d, double tau) {
  const int next = n + d;
  const int reward = 2 * n + d;
  auto gate = [tau](double x) { return std::abs(x) >= tau ? 1.0 : 0.0; };
  CausalMasks masks = CausalMasks::zeros(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) masks.c_ss(j, i) = gate(w(j, next + i));
    for (int j = 0; j < d; ++j) masks.c_as(j, i) = gate(w(n + j, next + i));
    masks.u_sr(i) = gate(w(next + i, reward));
  }
  for (int j = 0; j < d; ++j) masks.u_ar(j) = gate(w(n + j, reward));
  return masks;
}

namespace {

// Least squares of each column on the parents selected in `support`.
Matrix refit_support(const Matrix& x, const Matrix& support) {
  const Eigen::Index p = x.cols();
  Matrix w = Matrix::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    std::vector<Eigen::Index> parents;
    for (Eigen::Index i = 0; i < p; ++i) {
      if (support(i, j) != 0.0) parents.push_back(i);
    }
    if (parents.empty()) continue;
    Matrix design(x.rows(), static_cast<Eigen::Index>(parents.size()));
    for (std::size_t k = 0; k < parents.size(); ++k) design.col(static_cast<Eigen::Index>(k)) = x.col(parents[k]);
    const Vector coef = design.colPivHouseholderQr().solve(x.col(j));
    for (std::size_t k = 0; k < parents.size(); ++k) w(parents[k], j) = coef(static_cast<Eigen::Index>(k));
  }
  return w;
}

}  // namespace

DiscoveryResult discover(const Dataset& transitions, const NotearsConfig& cfg,
                         const std::optional<Matrix>& warm_start) {
  if (transitions.empty()) throw std::invalid_argument("discover_masks: no transitions");
  const int n = static_cast<int>(transitions.front().s.size());
  const int d = static_cast<int>(transitions.front().a.size());
  // The fit runs on unit-variance columns so the l1 penalty treats small-
  // and large-spread variables alike; the selected support is then refit by
  // least squares in raw units, which removes the l1 shrinkage before the
  // threshold is applied.
  Matrix x = stack_transitions(transitions);
  x.rowwise() -= x.colwise().mean();
  const Eigen::Index p = x.cols();
  Vector sd = Vector::Ones(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double v = std::sqrt(x.col(j).squaredNorm() / static_cast<double>(x.rows()));
    if (v > 1e-12) sd(j) = v;
  }
  const Matrix xs = x * sd.cwiseInverse().asDiagonal();
  std::optional<Matrix> warm_std;
  if (warm_start) {
    if (warm_start->rows() != p || warm_start->cols() != p) {
      throw std::invalid_argument("discover: warm start has the wrong shape");
    }
    warm_std = sd.asDiagonal() * (*warm_start) * sd.cwiseInverse().asDiagonal();
  }
  const NotearsResult fit = notears_fit(xs, cfg, temporal_allowed_edges(n, d), warm_std);
  const Matrix w = refit_support(x, fit.w);
  DiscoveryResult out;
  out.w = w;
  out.h = acyclicity(w);
  out.objective = fit.objective;
  out.converged = fit.converged;
  out.threshold = cfg.threshold;
  out.masks = masks_from_stacked(w, n, d, cfg.threshold);
  return out;
}

CausalMasks discover_masks(const Dataset& transitions, const NotearsConfig& cfg) {
  return discover(transitions, cfg).masks;
}

CausalMasks corrupt_masks(const CausalMasks& masks, double flip_prob, Rng& rng) {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) {
    throw std::invalid_argument("corrupt_masks: flip_prob must lie in [0, 1]");
  }
  masks.validate();
  CausalMasks out = masks;
  auto flip = [&](auto& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (rng.uniform() < flip_prob) m(i, j) = 1.0 - m(i, j);
      }
    }
  };
  flip(out.c_ss);
  flip(out.c_as);
  flip(out.u_sr);
  flip(out.u_ar);
  return out;
}

void save_discovery(const std::string& path, const DiscoveryResult& result, int n, int d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  auto write_matrix = [&out](const char* name, const Matrix& m) {
    out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j > 0) out << ' ';
        out << format_exact(m(i, j));
      }
      out << '\n';
    }
  };
  out << "# stacked variables: s_t[" << n << "] a_t[" << d << "] s_next[" << n << "] r_t\n";
  write_matrix("W", result.w);
  out << "threshold " << format_exact(result.threshold) << '\n';
  out << "h " << format_exact(result.h) << '\n';
  write_matrix("C_ss", result.masks.c_ss);
  write_matrix("C_as", result.masks.c_as);
  write_matrix("U_sr", Matrix(result.masks.u_sr.transpose()));
  write_matrix("U_ar", Matrix(result.masks.u_ar.transpose()));
}

}  // namespace cgdp
