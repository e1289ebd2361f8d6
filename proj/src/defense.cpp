#include "mgrid/defense.hpp"

#include <algorithm>
#include <cmath>

namespace mgrid {

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw Error(ErrorCode::invalid_argument, "replay capacity must be > 0");
  items_.reserve(capacity);
}

void ReplayMemory::push(Experience e) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(e));
  } else {
    items_[next_] = std::move(e);
    next_ = (next_ + 1) % capacity_;
  }
}

std::vector<const Experience*> ReplayMemory::sample(std::size_t batch, Rng& rng) const {
  if (items_.empty()) throw Error(ErrorCode::invalid_argument, "sampling an empty replay memory");
  std::vector<const Experience*> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i)
    out.push_back(&items_[rng.uniform_below(items_.size())]);
  return out;
}

void AgentConfig::validate() const {
  if (!(b0 > 0.0 && b0 <= 1.0)) throw_config("b0 must be in (0, 1]");
  if (lambda_decay < 0.0) throw_config("lambda_decay must be >= 0");
  if (!(gamma > 0.0 && gamma < 1.0)) throw_config("gamma must be in (0, 1)");
  if (batch < 1) throw_config("batch must be >= 1");
  if (replay_capacity < batch) throw_config("replay capacity must hold at least one batch");
  if (target_freeze < 1) throw_config("target freeze period must be >= 1");
  if (!(b_r <= b0)) throw_config("b_r must be <= b0");
  if (trailing_window < 1) throw_config("trailing window must be >= 1");
}

std::vector<double> encode_state(const GameState& gs, int num_topologies) {
  std::vector<double> f;
  f.reserve(gs.theta.size() * 2 + num_topologies);
  for (std::uint8_t a : gs.anomaly) f.push_back(a ? 1.0 : 0.0);
  for (std::uint8_t b : gs.burned) f.push_back(b ? 1.0 : 0.0);
  for (int i = 0; i < num_topologies; ++i) f.push_back(i == gs.topology_id ? 1.0 : 0.0);
  return f;
}

double exploration_threshold(double t, double b0, double lambda_decay) {
  if (t < 0.0) throw Error(ErrorCode::invalid_argument, "exploration_threshold needs t >= 0");
  return b0 * std::exp(-lambda_decay * t);
}

int argmax_action(const Eigen::VectorXd& q) {
  int best = 0;
  for (int i = 1; i < q.size(); ++i)
    if (q(i) > q(best)) best = i;  // ties keep the lowest index
  return best;
}

int select_action(const Mlp& net, const std::vector<double>& features, double b_t, Rng& rng) {
  if (b_t < 0.0 || b_t > 1.0)
    throw Error(ErrorCode::invalid_argument, "exploration threshold outside [0, 1]");
  const int n_actions = net.output_dim();
  if (b_t > 0.0 && rng.uniform01() < b_t)
    return static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n_actions)));
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(features.data(), features.size());
  return argmax_action(net.forward(x));
}

TrainStats train_step(Mlp& online, const Mlp& frozen,
                      const std::vector<const Experience*>& batch, double gamma,
                      AdamState& optimizer) {
  if (batch.empty()) throw Error(ErrorCode::invalid_argument, "empty training batch");
  Mlp::Gradients grads = online.zero_gradients();
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const Experience* e : batch) {
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(e->state.data(), e->state.size());
    Mlp::Tape tape;
    const Eigen::VectorXd q = online.forward(x, tape);
    double target = e->reward;
    if (!e->terminal) {
      Eigen::VectorXd xn =
          Eigen::Map<const Eigen::VectorXd>(e->next_state.data(), e->next_state.size());
      target += gamma * frozen.forward(xn).maxCoeff();
    }
    const double td = q(e->action) - target;
    loss += td * td * inv_b;
    Eigen::VectorXd upstream = Eigen::VectorXd::Zero(q.size());
    upstream(e->action) = 2.0 * td * inv_b;
    grads.add(online.backward(tape, upstream));
  }
  adam_step(online, grads, optimizer);
  return {loss};
}

void sync_target(const Mlp& online, Mlp& target, std::int64_t step, int freeze_period) {
  if (freeze_period < 1) throw Error(ErrorCode::invalid_argument, "freeze period must be >= 1");
  if (step % freeze_period == 0) target = online.clone();
}

bool maybe_retrain(std::span<const double> trailing, double current, const AgentConfig& cfg) {
  if (trailing.empty()) return false;
  double mean = 0.0;
  for (double r : trailing) mean += r;
  mean /= static_cast<double>(trailing.size());
  const double scale = std::max(std::abs(mean), cfg.retrain_scale_floor);
  return current < mean - cfg.drop_fraction * scale;
}

DqnAgent::DqnAgent(int state_dim, int num_actions, AgentConfig cfg, std::uint64_t seed)
    : cfg_(cfg),
      online_((cfg.validate(), Mlp())),
      target_(),
      opt_(),
      replay_(static_cast<std::size_t>(cfg.replay_capacity)),
      rng_(seed),
      b_start_(cfg.b0) {
  online_ = Mlp(state_dim, cfg_.hidden, num_actions, rng_);
  target_ = online_.clone();
  opt_ = AdamState::for_network(online_, cfg_.learning_rate);
}

void DqnAgent::load_weights(const Mlp& net) {
  if (!net.same_shape(online_))
    throw Error(ErrorCode::config, "checkpoint shape does not match the agent architecture");
  online_ = net.clone();
  target_ = net.clone();
  opt_ = AdamState::for_network(online_, cfg_.learning_rate);
}

double DqnAgent::current_threshold() const {
  return exploration_threshold(static_cast<double>(steps_) - decay_origin_, b_start_,
                               cfg_.lambda_decay);
}

int DqnAgent::act(const std::vector<double>& features) {
  const int action = select_action(online_, features, current_threshold(), rng_);
  steps_ += 1;
  return action;
}

TrainStats DqnAgent::observe(Experience e) {
  const double reward = e.reward;
  replay_.push(std::move(e));

  TrainStats stats;
  if (replay_.size() >= static_cast<std::size_t>(cfg_.batch)) {
    sync_target(online_, target_, train_steps_, cfg_.target_freeze);
    stats = train_step(online_, target_, replay_.sample(cfg_.batch, rng_), cfg_.gamma, opt_);
    train_steps_ += 1;
    last_loss_ = stats.loss;
  }

  if (static_cast<int>(trailing_.size()) >= cfg_.trailing_window) trailing_.pop_front();
  const bool retrain =
      maybe_retrain(std::vector<double>(trailing_.begin(), trailing_.end()), reward, cfg_);
  trailing_.push_back(reward);
  if (retrain) {
    // discounted exploration phase: reset the decay clock at a lower start
    b_start_ = cfg_.b_r;
    decay_origin_ = static_cast<double>(steps_);
    retrain_events_ += 1;
  }
  return stats;
}

}  // namespace mgrid
