#ifndef MGRID_GAME_HPP
#define MGRID_GAME_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgrid/dynamics.hpp"
#include "mgrid/threat.hpp"

namespace mgrid {

struct GameConfig {
  double sigma_unit = 3.0;        // reveal cost per newly exposed DG
  double rho = 0.001;             // link-cost weight, << 1
  int n_channels = 3;             // monitored per-DG channels: omega, v_od, m_P*P
  double gamma = 0.95;            // discount factor
  double epoch = 0.1;             // decision epoch (s)
  double oscillation_window = 0.1;
  double warmup_time = 1.5;       // deviation terms and detectors armed after this
  double anomaly_threshold = 0.01;
  int scan_epochs = 2;            // flag persistence before the malware scan fires
  double power_channel_floor = 0.05;  // fraction of delta_omega_th flooring the p_n of m_P*P

  void validate() const;
};

/// Every term of the per-epoch utility accounting. Channel layout per DG:
/// 0 = frequency, 1 = d-axis voltage, 2 = m_P*P.
struct UtilityBreakdown {
  double sum_delta = 0.0;                       // sum_k |d_omega|/omega_n + |d_v|/v_odn
  std::vector<std::array<double, 3>> z;         // oscillation count per DG x channel
  std::vector<std::array<double, 3>> p_a;       // mean peak-to-peak per DG x channel
  std::vector<std::array<double, 3>> p_c;       // epoch-mean magnitude per DG x channel
  std::array<double, 3> p_n{0.0, 0.0, 0.0};     // channel nominals used this epoch
  std::vector<std::array<double, 3>> p_r;       // relative errors per DG x channel
  int n_l = 0;                                  // active directed links
  int n_c = 0;                                  // compromised DG count
  int c_c = 0;                                  // compromised link count, N_c (N - 1)
  double sigma = 0.0;                           // reveal cost charged this epoch
  double u_r = 0.0;
  double u_d = 0.0;
};

double relative_error(double p_c, double p_n);

struct OscillationStats {
  int z = 0;
  double p_a = 0.0;
};

/// Detrended mean-crossing oscillation count and mean peak-to-peak amplitude
/// over the window. Flat and monotone signals give (0, 0).
OscillationStats count_oscillations(std::span<const double> samples);

struct LinkCounts {
  int n_l = 0, n_c = 0, c_c = 0;
};

LinkCounts link_counts(const CommTopology& topo, std::span<const std::uint8_t> theta);

/// U_R per the stage accounting; defender_utility is its exact negation, so
/// the zero-sum identity holds bitwise.
double attacker_utility(const UtilityBreakdown& b, const GameConfig& cfg);
double defender_utility(const UtilityBreakdown& b, const GameConfig& cfg);

enum class DefenderMode { static_rules, dqn };

struct StaticDetectorConfig {
  std::array<double, 3> thresholds{0.06, 0.06, 0.06};  // fraction of channel scale
};

/// One received tuple on a directed link plus the receiver's reference view.
struct LinkMeasurement {
  int from = -1, to = -1;
  std::array<double, 3> received{0, 0, 0};
  std::array<double, 3> reference{0, 0, 0};
};

/// Rule-based per-link flags: a link is flagged when any channel deviates
/// from the reference by more than the threshold fraction of that channel's
/// scale. Flagged links are dropped from the consensus sum for the epoch;
/// nothing else happens (no scan, no topology change).
std::vector<std::uint8_t> static_detect(std::span<const LinkMeasurement> links,
                                        const std::array<double, 3>& scales,
                                        const StaticDetectorConfig& cfg);

/// Markov state of the security game as both players see it.
struct GameState {
  std::vector<std::uint8_t> theta;
  std::vector<std::uint8_t> burned;
  std::vector<std::uint8_t> anomaly;   // latched until the scan clears them
  std::vector<int> anomaly_age;
  int topology_id = 0;
  int epoch = 0;
};

struct Event {
  double t = 0.0;
  std::string kind;
  std::string detail;
};

struct EnvironmentConfig {
  std::vector<DgParams> dg_params;
  ControlGains gains;             // k1 == 0 requests derivation from the topology set
  NetworkModel network;
  SimTiming timing;
  Eigen::VectorXd pinning;
  GameConfig game;
  AttackSchedule schedule;
  StealthBounds bounds;
  DefenderMode defender_mode = DefenderMode::static_rules;
  StaticDetectorConfig static_detector;
  double duration = 12.0;
  bool early_terminate = false;
  int initial_topology = 0;
  double consensus_rate_target = 4.5;  // slowest closed-loop consensus mode (1/s)
  double delta_omega_th = 1.0;         // channel scales for shared data
  double delta_v_th = 1.0;
};

struct LogRow {
  double t = 0;
  int dg = 0;
  double omega = 0, v_od = 0, v_oq = 0, p = 0, q = 0, delta_omega = 0, delta_v = 0;
};

/// The coupled co-simulation: physical plant, communication layer with the
/// threat in the middle, per-epoch utility scoring, anomaly latching and the
/// automatic malware scan. One instance per thread; stepping is
/// deterministic in (config, action sequence).
class Environment {
 public:
  explicit Environment(EnvironmentConfig cfg);

  int n_dgs() const { return plant_.n_dg(); }
  int num_actions() const { return static_cast<int>(topologies_.size()); }
  const std::vector<CommTopology>& topologies() const { return topologies_; }
  const GameState& state() const { return state_; }
  const MicrogridPlant& plant() const { return plant_; }
  const AttackDriver& attack() const { return attack_; }
  double time() const { return plant_.time(); }
  double epoch_length() const { return cfg_.game.epoch; }
  int max_epochs() const { return max_epochs_; }
  double consensus_k() const { return plant_.gains().k1; }
  DefenderMode defender_mode() const { return cfg_.defender_mode; }
  int static_flag_count() const { return static_flags_total_; }

  bool terminal() const;

  struct StepResult {
    double u_d = 0.0;
    UtilityBreakdown breakdown;
    std::optional<ConvergenceReport> report;  // present from the second epoch on
    bool terminal = false;
  };

  /// Advance one decision epoch under the given defender topology.
  StepResult step(int action);

  const std::vector<Event>& events() const { return events_; }
  void set_log_sink(std::function<void(const LogRow&)> sink) { log_sink_ = std::move(sink); }

  std::string snapshot_json() const;
  void restore_json(const std::string& snapshot);

 private:
  void exchange_tick();
  UtilityBreakdown score_epoch(int reveals, bool warmed);
  void update_anomaly(bool warmed);
  void run_scans();
  LyapunovSample collect_epoch_sample() const;

  EnvironmentConfig cfg_;
  std::vector<CommTopology> topologies_;
  MicrogridPlant plant_;
  AttackDriver attack_;
  GameState state_;
  std::vector<Event> events_;
  std::function<void(const LogRow&)> log_sink_;

  std::array<double, 3> shared_scales_{1.0, 1.0, 1.0};
  int steps_per_tick_ = 0;
  int ticks_per_epoch_ = 0;
  int log_every_steps_ = 0;
  int max_epochs_ = 0;
  int static_flags_total_ = 0;
  int reveals_pending_ = 0;

  // per-epoch sample buffers, reset each epoch
  std::vector<std::vector<double>> buf_omega_, buf_vod_, buf_mpp_, buf_nqq_;
  std::vector<std::vector<double>> buf_dw_, buf_dv_;
  std::vector<double> buf_v_, buf_vsync_;  // per-sample Lyapunov candidates
  std::vector<double> disagreement_max_;   // per DG, over the epoch
  std::optional<LyapunovSample> prev_epoch_sample_;
};

}  // namespace mgrid

#endif
