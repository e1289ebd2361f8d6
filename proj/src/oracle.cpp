#include "mgrid/oracle.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"
#include "mgrid/defense.hpp"

namespace mgrid {

namespace {

// per-DG, per-topology exposure weights; distinct optima for every nonempty
// compromise set, margin >= 0.2
constexpr double kExposure[SurrogateGame::kDgs][SurrogateGame::kTopologies] = {
    {0.9, 0.1, 0.3},
    {0.2, 0.8, 0.4},
    {0.5, 0.3, 0.7},
};
constexpr double kLinkCost = 0.04;  // rho * N_l equivalent, equal across trees

}  // namespace

int SurrogateGame::state_index(int theta_mask, int topology) {
  return theta_mask * kTopologies + topology;
}

int SurrogateGame::theta_of(int state) { return state / kTopologies; }

int SurrogateGame::topology_of(int state) { return state % kTopologies; }

double SurrogateGame::reward(int state, int action) const {
  const int theta = theta_of(state);
  double damage = 0.0;
  for (int k = 0; k < kDgs; ++k)
    if (theta & (1 << k)) damage += kExposure[k][action];
  return -damage - kLinkCost;
}

int SurrogateGame::next_state(int state, int action) const {
  int theta = theta_of(state);
  if (theta != 0) theta &= theta - 1;  // scan clears the lowest compromised DG
  return state_index(theta, action);
}

std::vector<std::vector<double>> SurrogateGame::optimal_q(double gamma, double tol) const {
  std::vector<double> v(kStates, 0.0);
  std::vector<std::vector<double>> q(kStates, std::vector<double>(kTopologies, 0.0));
  for (int iter = 0; iter < 100000; ++iter) {
    double delta = 0.0;
    for (int s = 0; s < kStates; ++s) {
      double best = -1e300;
      for (int a = 0; a < kTopologies; ++a) {
        q[s][a] = reward(s, a) + gamma * v[next_state(s, a)];
        best = std::max(best, q[s][a]);
      }
      delta = std::max(delta, std::abs(best - v[s]));
      v[s] = best;
    }
    if (delta < tol) break;
  }
  return q;
}

std::vector<std::vector<int>> SurrogateGame::optimal_actions(double gamma, double tie_tol) const {
  const auto q = optimal_q(gamma);
  std::vector<std::vector<int>> out(kStates);
  for (int s = 0; s < kStates; ++s) {
    double best = q[s][0];
    for (int a = 1; a < kTopologies; ++a) best = std::max(best, q[s][a]);
    for (int a = 0; a < kTopologies; ++a)
      if (q[s][a] >= best - tie_tol) out[s].push_back(a);
  }
  return out;
}

namespace {

std::vector<double> encode_surrogate(int state) {
  std::vector<double> f(SurrogateGame::kDgs + SurrogateGame::kTopologies, 0.0);
  const int theta = SurrogateGame::theta_of(state);
  for (int k = 0; k < SurrogateGame::kDgs; ++k)
    if (theta & (1 << k)) f[k] = 1.0;
  f[SurrogateGame::kDgs + SurrogateGame::topology_of(state)] = 1.0;
  return f;
}

}  // namespace

OracleReport run_oracle_check(std::uint64_t seed, int episodes) {
  const auto t0 = std::chrono::steady_clock::now();
  const SurrogateGame game;
  const double gamma = 0.95;

  AgentConfig cfg;
  cfg.gamma = gamma;
  cfg.lambda_decay = 0.002;
  cfg.batch = 32;
  cfg.replay_capacity = 5000;
  cfg.target_freeze = 50;
  cfg.learning_rate = 2e-3;
  DqnAgent agent(SurrogateGame::kDgs + SurrogateGame::kTopologies, SurrogateGame::kTopologies,
                 cfg, seed);
  Rng starts(seed ^ 0x9e3779b97f4a7c15ull);

  OracleReport report;
  report.episodes = episodes;
  for (int ep = 0; ep < episodes; ++ep) {
    int state = SurrogateGame::state_index(
        static_cast<int>(starts.uniform_below(1 << SurrogateGame::kDgs)),
        static_cast<int>(starts.uniform_below(SurrogateGame::kTopologies)));
    // roll until the compromise set drains, plus a couple of benign steps
    for (int step = 0; step < 8; ++step) {
      const std::vector<double> f = encode_surrogate(state);
      const int action = agent.act(f);
      const double r = game.reward(state, action);
      const int next = game.next_state(state, action);
      const bool terminal = step == 7;
      Experience e;
      e.state = f;
      e.action = action;
      e.reward = r;
      e.next_state = encode_surrogate(next);
      e.terminal = terminal;
      const TrainStats stats = agent.observe(std::move(e));
      report.final_loss = stats.loss;
      state = next;
    }
  }

  const auto optimal = game.optimal_actions(gamma);
  report.states = SurrogateGame::kStates;
  for (int s = 0; s < SurrogateGame::kStates; ++s) {
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(encode_surrogate(s).data(),
                                                          SurrogateGame::kDgs +
                                                              SurrogateGame::kTopologies);
    const int greedy = argmax_action(agent.online().forward(x));
    for (int a : optimal[s]) {
      if (a == greedy) {
        ++report.matches;
        break;
      }
    }
  }
  report.match_fraction = static_cast<double>(report.matches) / report.states;
  report.elapsed_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string oracle_report_json(const OracleReport& r) {
  nlohmann::json j;
  j["states"] = r.states;
  j["matches"] = r.matches;
  j["match_fraction"] = r.match_fraction;
  j["episodes"] = r.episodes;
  j["elapsed_s"] = r.elapsed_s;
  j["final_loss"] = r.final_loss;
  return j.dump(2);
}

}  // namespace mgrid
