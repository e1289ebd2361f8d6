#ifndef MGRID_CONSENSUS_HPP
#define MGRID_CONSENSUS_HPP

#include <Eigen/Dense>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mgrid {

/// One secondary-control communication graph. `s` is a symmetric 0/1
/// adjacency over the DGs, `g` the diagonal pinning gains. `lambda2` is the
/// smallest eigenvalue of (L + G); with at least one pinned node it is
/// strictly positive and sets the lower bound on the consensus gains.
struct CommTopology {
  int n = 0;
  Eigen::MatrixXd s;
  Eigen::VectorXd g;
  Eigen::MatrixXd laplacian;
  double lambda2 = 0.0;
  int id = -1;

  /// Undirected edge list, (a, b) with a < b, sorted.
  std::vector<std::pair<int, int>> edges() const;
};

/// L = D - S. Throws on an asymmetric adjacency.
Eigen::MatrixXd build_laplacian(const Eigen::MatrixXd& s);

/// Smallest eigenvalue of (L + diag(g)), with an eigenpair residual check.
double lambda2_of(const Eigen::MatrixXd& laplacian, const Eigen::VectorXd& g);

/// K1 = K2 >= 1 / (2 lambda2). Throws when lambda2 <= 0 (unpinned or
/// disconnected graph).
double min_consensus_gain(const CommTopology& topo);

/// Connected, symmetric, and pinned somewhere.
bool validate_topology(const Eigen::MatrixXd& s, const Eigen::VectorXd& g);

/// All labeled spanning trees on n nodes (Cayley: n^(n-2) of them) with the
/// given pinning vector, ordered lexicographically by edge list so that ids
/// are stable action indices. Guarded to 2 <= n <= 8.
std::vector<CommTopology> enumerate_topologies(int n, const Eigen::VectorXd& g);

/// Independent spanning-tree count by brute force over all edge subsets;
/// test oracle for the enumeration (practical for n <= 5).
int count_spanning_trees_bruteforce(int n);

/// Data received over one live incoming link, possibly manipulated in
/// transit: frequency, m_P*P and n_Q*Q of the sender.
struct ReceivedTuple {
  int from = -1;
  double omega = 0.0;
  double mpp = 0.0;
  double nqq = 0.0;
};

struct ConsensusRates {
  double delta_omega_dot = 0.0;
  double delta_v_dot = 0.0;
};

/// Single-integrator secondary control update rates for one DG given the
/// tuples that actually arrived this tick. `received` must already reflect
/// link liveness (dead or dropped links are simply absent).
ConsensusRates consensus_rates(std::span<const ReceivedTuple> received, double own_omega,
                               double own_mpp, double own_nqq, double g_k, double k1, double k2,
                               double omega_n);

/// One trajectory sample for the convergence diagnostics. `y` holds
/// omega_star + m_P*P per DG. When the producer has a finer time series
/// available it can pre-average the candidate over the window into v_mean /
/// v_sync_mean (negative means absent); time averaging suppresses ring-phase
/// aliasing near the floor.
struct LyapunovSample {
  double t = 0.0;
  std::vector<double> omega;
  std::vector<double> mpp;
  std::vector<double> nqq;
  std::vector<double> y;
  double v_mean = -1.0;
  double v_sync_mean = -1.0;
};

struct ConvergenceReport {
  double max_freq_dev = 0.0;       // max |omega_k - omega_n| over the window
  double max_mpp_mismatch = 0.0;   // max pairwise |m_P*P_k - m_P*P_l|
  double max_nqq_mismatch = 0.0;   // max pairwise |n_Q*Q_k - n_Q*Q_l|
  std::vector<double> y;           // last sample
  double v = 0.0;                  // 0.5 * sum y_k^2, last sample
  double v_dot = 0.0;              // finite difference of v over the last two samples
  double v_sync = 0.0;             // 0.5 * sum (y_k - y_pin)^2, the decreasing residual form
  double v_sync_dot = 0.0;
};

/// Window must span at least two samples. `y_pin` is the pinned-consensus
/// fixed point of y used for the residual form (omega_n plus the pinning-
/// weighted mean of m_P*P).
ConvergenceReport lyapunov_diagnostic(std::span<const LyapunovSample> window, double omega_n,
                                      const Eigen::VectorXd& g);

/// Audit export: edge lists, lambda2 and K_min per topology.
std::string topology_set_json(const std::vector<CommTopology>& topos);

}  // namespace mgrid

#endif
