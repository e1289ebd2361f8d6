#include "mgrid/consensus.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "mgrid/common.hpp"

namespace mgrid {

std::vector<std::pair<int, int>> CommTopology::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (s(a, b) != 0.0) out.emplace_back(a, b);
  return out;
}

Eigen::MatrixXd build_laplacian(const Eigen::MatrixXd& s) {
  if (s.rows() != s.cols()) throw Error(ErrorCode::invalid_argument, "adjacency must be square");
  const int n = static_cast<int>(s.rows());
  for (int i = 0; i < n; ++i) {
    if (s(i, i) != 0.0) throw Error(ErrorCode::invalid_argument, "adjacency has nonzero diagonal");
    for (int j = 0; j < n; ++j)
      if (s(i, j) != s(j, i))
        throw Error(ErrorCode::invalid_argument, "adjacency is not symmetric");
  }
  Eigen::MatrixXd l = -s;
  for (int i = 0; i < n; ++i) l(i, i) = s.row(i).sum();
  return l;
}

double lambda2_of(const Eigen::MatrixXd& laplacian, const Eigen::VectorXd& g) {
  Eigen::MatrixXd m = laplacian;
  m.diagonal() += g;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success)
    throw Error(ErrorCode::numeric, "eigensolver failed on (L + G)");
  const double lambda = solver.eigenvalues()(0);
  const Eigen::VectorXd v = solver.eigenvectors().col(0);
  const double residual = (m * v - lambda * v).norm();
  if (residual > 1e-9)
    throw Error(ErrorCode::numeric, "eigenpair residual " + std::to_string(residual));
  return lambda;
}

double min_consensus_gain(const CommTopology& topo) {
  if (topo.lambda2 <= 0.0)
    throw Error(ErrorCode::invalid_argument,
                "topology has lambda2 <= 0 (unpinned or disconnected)");
  return 1.0 / (2.0 * topo.lambda2);
}

namespace {

bool connected(const Eigen::MatrixXd& s) {
  const int n = static_cast<int>(s.rows());
  if (n == 0) return false;
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (int v = 0; v < n; ++v) {
      if (s(u, v) != 0.0 && !seen[v]) {
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == n;
}

CommTopology make_topology(int n, const std::vector<std::pair<int, int>>& edges,
                           const Eigen::VectorXd& g) {
  CommTopology t;
  t.n = n;
  t.s = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [a, b] : edges) {
    t.s(a, b) = 1.0;
    t.s(b, a) = 1.0;
  }
  t.g = g;
  t.laplacian = build_laplacian(t.s);
  t.lambda2 = lambda2_of(t.laplacian, g);
  return t;
}

/// Decode a Pruefer sequence into the tree's edge list.
std::vector<std::pair<int, int>> pruefer_decode(const std::vector<int>& seq, int n) {
  std::vector<int> degree(n, 1);
  for (int v : seq) ++degree[v];
  std::vector<std::pair<int, int>> edges;
  edges.reserve(n - 1);
  std::vector<char> used(n, 0);
  for (int v : seq) {
    for (int leaf = 0; leaf < n; ++leaf) {
      if (degree[leaf] == 1 && !used[leaf]) {
        edges.emplace_back(std::min(leaf, v), std::max(leaf, v));
        used[leaf] = 1;
        --degree[v];
        if (degree[v] == 1) used[v] = 0;  // may become a leaf again
        break;
      }
    }
  }
  // the two remaining degree-1 nodes
  int a = -1;
  for (int v = 0; v < n; ++v) {
    if (degree[v] == 1 && !used[v]) {
      if (a < 0)
        a = v;
      else
        edges.emplace_back(a, v);
    }
  }
  return edges;
}

}  // namespace

bool validate_topology(const Eigen::MatrixXd& s, const Eigen::VectorXd& g) {
  const int n = static_cast<int>(s.rows());
  if (n == 0 || s.cols() != n || g.size() != n) return false;
  for (int i = 0; i < n; ++i) {
    if (s(i, i) != 0.0) return false;
    for (int j = 0; j < n; ++j)
      if (s(i, j) != s(j, i)) return false;
  }
  if (g.maxCoeff() <= 0.0) return false;
  return connected(s);
}

std::vector<CommTopology> enumerate_topologies(int n, const Eigen::VectorXd& g) {
  if (n < 2 || n > 8)
    throw Error(ErrorCode::config, "topology enumeration supports 2..8 DGs, got " +
                                       std::to_string(n));
  if (g.size() != n) throw Error(ErrorCode::config, "pinning vector size mismatch");

  std::vector<std::vector<std::pair<int, int>>> edge_lists;
  if (n == 2) {
    edge_lists.push_back({{0, 1}});
  } else {
    const int len = n - 2;
    std::vector<int> seq(len, 0);
    while (true) {
      edge_lists.push_back(pruefer_decode(seq, n));
      int i = len - 1;
      while (i >= 0 && seq[i] == n - 1) seq[i--] = 0;
      if (i < 0) break;
      ++seq[i];
    }
  }
  for (auto& e : edge_lists) std::sort(e.begin(), e.end());
  std::sort(edge_lists.begin(), edge_lists.end());

  std::vector<CommTopology> out;
  out.reserve(edge_lists.size());
  for (const auto& e : edge_lists) {
    CommTopology t = make_topology(n, e, g);
    t.id = static_cast<int>(out.size());
    out.push_back(std::move(t));
  }
  return out;
}

int count_spanning_trees_bruteforce(int n) {
  std::vector<std::pair<int, int>> all_edges;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) all_edges.emplace_back(a, b);
  const int m = static_cast<int>(all_edges.size());
  int count = 0;
  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    if (std::popcount(mask) != static_cast<unsigned>(n - 1)) continue;
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < m; ++i) {
      if (mask & (1u << i)) {
        s(all_edges[i].first, all_edges[i].second) = 1.0;
        s(all_edges[i].second, all_edges[i].first) = 1.0;
      }
    }
    if (connected(s)) ++count;
  }
  return count;
}

ConsensusRates consensus_rates(std::span<const ReceivedTuple> received, double own_omega,
                               double own_mpp, double own_nqq, double g_k, double k1, double k2,
                               double omega_n) {
  double omega_sum = 0.0;
  double mpp_sum = 0.0;
  double nqq_sum = 0.0;
  for (const ReceivedTuple& r : received) {
    omega_sum += r.omega - own_omega;
    mpp_sum += r.mpp - own_mpp;
    nqq_sum += r.nqq - own_nqq;
  }
  ConsensusRates rates;
  rates.delta_omega_dot = k1 * (omega_sum + g_k * (omega_n - own_omega) + mpp_sum);
  rates.delta_v_dot = k2 * nqq_sum;
  return rates;
}

ConvergenceReport lyapunov_diagnostic(std::span<const LyapunovSample> window, double omega_n,
                                      const Eigen::VectorXd& g) {
  if (window.size() < 2)
    throw Error(ErrorCode::invalid_argument, "lyapunov window needs >= 2 samples");
  ConvergenceReport rep;
  const int n = static_cast<int>(window[0].y.size());

  auto v_of = [&](const LyapunovSample& s) {
    if (s.v_mean >= 0.0) return s.v_mean;
    double v = 0.0;
    for (double y : s.y) v += 0.5 * y * y;
    return v;
  };
  auto y_pin_of = [&](const LyapunovSample& s) {
    // fixed point of the pinned consensus: omega_n + pinning-weighted m_P*P
    double num = 0.0, den = 0.0;
    for (int k = 0; k < n; ++k) {
      num += g(k) * s.mpp[k];
      den += g(k);
    }
    return omega_n + (den > 0.0 ? num / den : 0.0);
  };
  auto v_sync_of = [&](const LyapunovSample& s) {
    if (s.v_sync_mean >= 0.0) return s.v_sync_mean;
    const double pin = y_pin_of(s);
    double v = 0.0;
    for (double y : s.y) v += 0.5 * (y - pin) * (y - pin);
    return v;
  };

  for (const LyapunovSample& s : window) {
    for (int k = 0; k < n; ++k) {
      rep.max_freq_dev = std::max(rep.max_freq_dev, std::abs(s.omega[k] - omega_n));
      for (int l = k + 1; l < n; ++l) {
        rep.max_mpp_mismatch = std::max(rep.max_mpp_mismatch, std::abs(s.mpp[k] - s.mpp[l]));
        rep.max_nqq_mismatch = std::max(rep.max_nqq_mismatch, std::abs(s.nqq[k] - s.nqq[l]));
      }
    }
  }

  const LyapunovSample& last = window[window.size() - 1];
  const LyapunovSample& prev = window[window.size() - 2];
  const double dt = last.t - prev.t;
  if (dt <= 0.0) throw Error(ErrorCode::invalid_argument, "lyapunov window not time-ordered");
  rep.y = last.y;
  rep.v = v_of(last);
  rep.v_dot = (v_of(last) - v_of(prev)) / dt;
  rep.v_sync = v_sync_of(last);
  rep.v_sync_dot = (v_sync_of(last) - v_sync_of(prev)) / dt;
  return rep;
}

std::string topology_set_json(const std::vector<CommTopology>& topos) {
  nlohmann::json j;
  j["count"] = topos.size();
  j["topologies"] = nlohmann::json::array();
  for (const CommTopology& t : topos) {
    nlohmann::json jt;
    jt["id"] = t.id;
    jt["edges"] = nlohmann::json::array();
    for (const auto& [a, b] : t.edges()) jt["edges"].push_back({a, b});
    jt["lambda2"] = t.lambda2;
    jt["k_min"] = 1.0 / (2.0 * t.lambda2);
    nlohmann::json jg = nlohmann::json::array();
    for (int i = 0; i < t.n; ++i) jg.push_back(t.g(i));
    jt["pinning"] = jg;
    j["topologies"].push_back(std::move(jt));
  }
  return j.dump(2);
}

}  // namespace mgrid
