#include "cgdp/scm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cgdp/checkpoint.hpp"

namespace cgdp {

int Dag::edge_count(double threshold) const {
  int count = 0;
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < weights.cols(); ++j) {
      if (std::abs(weights(i, j)) > threshold) ++count;
    }
  }
  return count;
}

bool Dag::has_edge(int from, int to, double threshold) const {
  return std::abs(weights(from, to)) > threshold;
}

Dag make_dag(Matrix weights) {
  if (weights.rows() != weights.cols()) throw std::invalid_argument("make_dag: not square");
  require_finite(weights, "make_dag");
  const Eigen::Index n = weights.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (weights(i, i) != 0.0) throw std::invalid_argument("make_dag: nonzero diagonal");
  }
  // Kahn's algorithm.
  std::vector<int> indegree(n, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (weights(i, j) != 0.0) ++indegree[j];
    }
  }
  std::vector<Eigen::Index> ready;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push_back(i);
  }
  Eigen::Index visited = 0;
  while (!ready.empty()) {
    const Eigen::Index u = ready.back();
    ready.pop_back();
    ++visited;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (weights(u, j) != 0.0 && --indegree[j] == 0) ready.push_back(j);
    }
  }
  if (visited != n) throw std::invalid_argument("make_dag: graph has a cycle");
  return Dag{std::move(weights)};
}

CausalMasks CausalMasks::ones(int n, int d) {
  return {Matrix::Ones(n, n), Matrix::Ones(d, n), Vector::Ones(n), Vector::Ones(d)};
}

CausalMasks CausalMasks::zeros(int n, int d) {
  return {Matrix::Zero(n, n), Matrix::Zero(d, n), Vector::Zero(n), Vector::Zero(d)};
}

void CausalMasks::validate() const {
  const Eigen::Index n = c_ss.rows();
  const Eigen::Index d = c_as.rows();
  if (c_ss.cols() != n || c_as.cols() != n || u_sr.size() != n || u_ar.size() != d) {
    throw std::invalid_argument("CausalMasks: inconsistent shapes");
  }
  auto in_unit = [](const auto& m) {
    return m.allFinite() && (m.array() >= 0.0).all() && (m.array() <= 1.0).all();
  };
  if (!in_unit(c_ss) || !in_unit(c_as) || !in_unit(u_sr) || !in_unit(u_ar)) {
    throw std::invalid_argument("CausalMasks: entries must lie in [0, 1]");
  }
}

int CausalMasks::entry_count() const {
  return static_cast<int>(c_ss.size() + c_as.size() + u_sr.size() + u_ar.size());
}

bool CausalMasks::operator==(const CausalMasks& o) const {
  return c_ss == o.c_ss && c_as == o.c_as && u_sr == o.u_sr && u_ar == o.u_ar;
}

int mask_difference(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("mask_difference: shape mismatch");
  }
  return static_cast<int>(((a.array() >= 0.5) != (b.array() >= 0.5)).count());
}

void GroundTruthScm::validate() const {
  if (n < 1 || d < 1) throw std::invalid_argument("GroundTruthScm: dimensions must be >= 1");
  if (f_s.rows() != n || f_s.cols() != n || f_a.rows() != n || f_a.cols() != d ||
      b_s.size() != n || b_a.size() != d || sigma_phi.rows() != n || sigma_phi.cols() != n) {
    throw std::invalid_argument("GroundTruthScm: operator shapes do not match (n, d)");
  }
  require_finite(f_s, "GroundTruthScm.f_s");
  require_finite(f_a, "GroundTruthScm.f_a");
  require_finite(b_s, "GroundTruthScm.b_s");
  require_finite(b_a, "GroundTruthScm.b_a");
  if (!(sigma_omega >= 0.0) || !std::isfinite(sigma_omega)) {
    throw std::domain_error("GroundTruthScm: reward variance must be >= 0");
  }
  psd_factor(sigma_phi, "GroundTruthScm.sigma_phi");
}

ScmNoise scm_noise(const GroundTruthScm& scm) {
  scm.validate();
  return {psd_factor(scm.sigma_phi, "GroundTruthScm.sigma_phi"), std::sqrt(scm.sigma_omega)};
}

std::pair<Vector, double> scm_step(const GroundTruthScm& scm, const ScmNoise& noise,
                                   const Vector& s, const Vector& a, Rng& rng) {
  if (s.size() != scm.n || a.size() != scm.d) {
    throw std::invalid_argument("scm_step: state/action dimension mismatch");
  }
  const Vector z = rng.normal_vector(scm.n);
  const double zr = rng.normal();
  Vector s_next = scm.f_s * s + scm.f_a * a + noise.state_factor * z;
  const double r = scm.b_s.dot(s_next) + scm.b_a.dot(a) + noise.reward_scale * zr;
  return {std::move(s_next), r};
}

Matrix draw_behavior_gain(int n, int d, Rng& rng) {
  Matrix k(d, n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < d; ++i) k(i, j) = 0.3 * rng.normal();
  }
  return k;
}

Dataset generate_dataset(const GroundTruthScm& scm, int episodes, int horizon,
                         double behavior_noise, Rng& rng) {
  if (episodes < 0 || horizon < 1) {
    throw std::invalid_argument("generate_dataset: need episodes >= 0 and horizon >= 1");
  }
  if (!(behavior_noise >= 0.0)) throw std::invalid_argument("generate_dataset: behavior_noise < 0");
  const ScmNoise noise = scm_noise(scm);
  const Matrix gain = draw_behavior_gain(scm.n, scm.d, rng);
  Dataset data;
  data.reserve(static_cast<std::size_t>(episodes) * horizon);
  for (int e = 0; e < episodes; ++e) {
    Vector s = rng.normal_vector(scm.n);
    for (int t = 0; t < horizon; ++t) {
      const Vector z = rng.normal_vector(scm.d);
      Vector a = (gain * s + behavior_noise * z).cwiseMax(-1.0).cwiseMin(1.0);
      auto [s_next, r] = scm_step(scm, noise, s, a, rng);
      data.push_back({s, a, r, s_next, t + 1 == horizon});
      s = std::move(s_next);
    }
  }
  return data;
}

CausalMasks exact_masks(const GroundTruthScm& scm) {
  scm.validate();
  auto nonzero = [](const auto& m) {
    return (m.array() != 0.0).template cast<double>().matrix().eval();
  };
  CausalMasks masks;
  masks.c_ss = nonzero(scm.f_s).transpose();
  masks.c_as = nonzero(scm.f_a).transpose();
  masks.u_sr = nonzero(scm.b_s);
  masks.u_ar = nonzero(scm.b_a);
  return masks;
}

Dag stacked_adjacency(const GroundTruthScm& scm) {
  scm.validate();
  const int n = scm.n;
  const int d = scm.d;
  const int next = n + d;
  const int reward = 2 * n + d;
  Matrix w = Matrix::Zero(reward + 1, reward + 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) w(j, next + i) = scm.f_s(i, j);
    for (int j = 0; j < d; ++j) w(n + j, next + i) = scm.f_a(i, j);
    w(next + i, reward) = scm.b_s(i);
  }
  for (int j = 0; j < d; ++j) w(n + j, reward) = scm.b_a(j);
  return make_dag(std::move(w));
}

void write_dataset(std::ostream& out, int n, int d, const Dataset& data) {
  out << n << ' ' << d << ' ' << data.size() << '\n';
  for (const Transition& t : data) {
    if (t.s.size() != n || t.a.size() != d || t.s_next.size() != n) {
      throw std::invalid_argument("write_dataset: transition dimension mismatch");
    }
    for (int i = 0; i < n; ++i) out << format_exact(t.s(i)) << ' ';
    for (int i = 0; i < d; ++i) out << format_exact(t.a(i)) << ' ';
    out << format_exact(t.r) << ' ';
    for (int i = 0; i < n; ++i) out << format_exact(t.s_next(i)) << ' ';
    out << (t.done ? 1 : 0) << '\n';
  }
}

DatasetFile read_dataset(std::istream& in) {
  DatasetFile file;
  long long count = -1;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_dataset: missing header");
  {
    std::istringstream header(line);
    if (!(header >> file.n >> file.d >> count) || file.n < 1 || file.d < 1 || count < 0) {
      throw std::runtime_error("read_dataset: malformed header '" + line + "'");
    }
  }
  file.data.reserve(static_cast<std::size_t>(count));
  std::string tok;
  for (long long k = 0; k < count; ++k) {
    if (!std::getline(in, line)) throw std::runtime_error("read_dataset: truncated file");
    std::istringstream ls(line);
    auto next = [&]() {
      if (!(ls >> tok)) {
        throw std::runtime_error("read_dataset: short line " + std::to_string(k + 2));
      }
      return parse_real(tok);
    };
    Transition t;
    t.s.resize(file.n);
    t.a.resize(file.d);
    t.s_next.resize(file.n);
    for (int i = 0; i < file.n; ++i) t.s(i) = next();
    for (int i = 0; i < file.d; ++i) t.a(i) = next();
    t.r = next();
    for (int i = 0; i < file.n; ++i) t.s_next(i) = next();
    if (!(ls >> tok) || (tok != "0" && tok != "1")) {
      throw std::runtime_error("read_dataset: bad done flag on line " + std::to_string(k + 2));
    }
    t.done = tok == "1";
    if (ls >> tok) throw std::runtime_error("read_dataset: trailing data on line " + std::to_string(k + 2));
    file.data.push_back(std::move(t));
  }
  return file;
}

void save_dataset(const std::string& path, int n, int d, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset to " + path);
  write_dataset(out, n, d, data);
  if (!out) throw std::runtime_error("write failed for " + path);
}

DatasetFile load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  return read_dataset(in);
}

void save_masks(Checkpoint& ck, const std::string& prefix, const CausalMasks& masks) {
  ck.put(prefix + "c_ss", masks.c_ss);
  ck.put(prefix + "c_as", masks.c_as);
  ck.put_vector(prefix + "u_sr", masks.u_sr);
  ck.put_vector(prefix + "u_ar", masks.u_ar);
}

CausalMasks load_masks(const Checkpoint& ck, const std::string& prefix) {
  CausalMasks masks{ck.get(prefix + "c_ss"), ck.get(prefix + "c_as"),
                    ck.get_vector(prefix + "u_sr"), ck.get_vector(prefix + "u_ar")};
  masks.validate();
  return masks;
}

}  // namespace cgdp
