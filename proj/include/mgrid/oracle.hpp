#ifndef MGRID_ORACLE_HPP
#define MGRID_ORACLE_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace mgrid {

/// Reduced abstraction of the security game used to cross-check the learner
/// against exact dynamic programming: 3 DGs, 3 tree topologies,
/// deterministic surrogate rewards over the compromise set, and a
/// deterministic clean-up transition (the lowest compromised DG is scanned
/// each step).
class SurrogateGame {
 public:
  static constexpr int kDgs = 3;
  static constexpr int kTopologies = 3;
  static constexpr int kStates = (1 << kDgs) * kTopologies;

  static int state_index(int theta_mask, int topology);
  static int theta_of(int state);
  static int topology_of(int state);

  /// Reward for taking `action` (next topology) in `state`.
  double reward(int state, int action) const;
  /// Deterministic successor.
  int next_state(int state, int action) const;

  /// Exact optimal Q via value iteration.
  std::vector<std::vector<double>> optimal_q(double gamma, double tol = 1e-12) const;
  /// Set of optimal actions per state (within tie tolerance).
  std::vector<std::vector<int>> optimal_actions(double gamma, double tie_tol = 1e-9) const;
};

struct OracleReport {
  int states = 0;
  int matches = 0;
  double match_fraction = 0.0;
  int episodes = 0;
  double elapsed_s = 0.0;
  double final_loss = 0.0;
};

/// Train the from-scratch Q-learner on the surrogate for the given number of
/// episodes and report how often its greedy action is optimal.
OracleReport run_oracle_check(std::uint64_t seed, int episodes);

std::string oracle_report_json(const OracleReport& r);

}  // namespace mgrid

#endif
