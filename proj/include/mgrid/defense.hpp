#ifndef MGRID_DEFENSE_HPP
#define MGRID_DEFENSE_HPP

#include <deque>
#include <optional>
#include <vector>

#include "mgrid/game.hpp"
#include "mgrid/neuralnet.hpp"

namespace mgrid {

/// One transition: observable state encoding, chosen topology index, reward
/// and the successor encoding.
struct Experience {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  bool terminal = false;
};

/// Bounded ring with uniform sampling.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity);

  void push(Experience e);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Experience& at(std::size_t i) const { return items_[i]; }

  /// Uniform over current contents, with replacement.
  std::vector<const Experience*> sample(std::size_t batch, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Experience> items_;
};

struct AgentConfig {
  double b0 = 1.0;             // initial exploration threshold
  double lambda_decay = 0.01;  // per agent step
  double gamma = 0.95;
  int batch = 32;
  int replay_capacity = 10000;
  int target_freeze = 50;      // train steps between target syncs
  double drop_fraction = 0.2;  // reward drop triggering discounted exploration
  int trailing_window = 10;
  double b_r = 0.3;            // exploration threshold after a retrain reset
  double retrain_scale_floor = 0.05;   // reward scale floor for the drop rule
  double learning_rate = 1e-3;
  std::vector<int> hidden{24, 24};

  void validate() const;
};

/// Observable proxy of the game state: anomaly flags, burned flags and the
/// one-hot current topology. Length 2N + #topologies.
std::vector<double> encode_state(const GameState& gs, int num_topologies);

/// B_t = B_0 exp(-lambda t).
double exploration_threshold(double t, double b0, double lambda_decay);

/// Epsilon-greedy over the Q head; ties resolved toward the lowest index.
int select_action(const Mlp& net, const std::vector<double>& features, double b_t, Rng& rng);

int argmax_action(const Eigen::VectorXd& q);

struct TrainStats {
  double loss = 0.0;
};

/// One minibatch TD step: targets from the frozen network, gradient through
/// the online network only; terminal transitions use the raw reward.
TrainStats train_step(Mlp& online, const Mlp& frozen,
                      const std::vector<const Experience*>& batch, double gamma,
                      AdamState& optimizer);

/// Clone online into target iff step is a multiple of the freeze period.
void sync_target(const Mlp& online, Mlp& target, std::int64_t step, int freeze_period);

/// True when the newest reward sits drop_fraction below the trailing mean
/// (relative to max(|mean|, scale floor)). Flat reward streams never fire.
bool maybe_retrain(std::span<const double> trailing, double current, const AgentConfig& cfg);

/// The adaptive defender: pretrained Q-network plus online discounted
/// retraining when rewards collapse.
class DqnAgent {
 public:
  DqnAgent(int state_dim, int num_actions, AgentConfig cfg, std::uint64_t seed);

  void load_weights(const Mlp& net);
  const Mlp& online() const { return online_; }
  const AgentConfig& config() const { return cfg_; }

  double current_threshold() const;
  int act(const std::vector<double>& features);
  /// Record a transition, train once, maintain the target network, and run
  /// the unexpected-reward rule.
  TrainStats observe(Experience e);

  std::int64_t steps() const { return steps_; }
  int retrain_events() const { return retrain_events_; }
  double last_loss() const { return last_loss_; }

 private:
  AgentConfig cfg_;
  Mlp online_;
  Mlp target_;
  AdamState opt_;
  ReplayMemory replay_;
  Rng rng_;
  std::int64_t steps_ = 0;       // action steps, drives exploration decay
  std::int64_t train_steps_ = 0;
  double decay_origin_ = 0.0;    // step at the last exploration reset
  double b_start_ = 1.0;
  std::deque<double> trailing_;
  int retrain_events_ = 0;
  double last_loss_ = 0.0;
};

}  // namespace mgrid

#endif
