#ifndef MGRID_SCENARIO_HPP
#define MGRID_SCENARIO_HPP

#include <optional>
#include <string>
#include <vector>

#include "mgrid/defense.hpp"
#include "mgrid/game.hpp"

namespace mgrid {

struct DefenderConfig {
  DefenderMode mode = DefenderMode::static_rules;
  StaticDetectorConfig static_detector;
  AgentConfig agent;
  std::string checkpoint;  // optional path, resolved against the scenario dir
};

struct PretrainConfig {
  int episodes = 60;
  double episode_length = 6.0;
  double benign_fraction = 0.3;
  double min_offset_fraction = 0.3;   // of the stealth bound
  double max_offset_fraction = 0.95;
  double earliest_attack = 1.6;
  double latest_attack = 3.0;
};

/// Everything one run needs, assembled from the scenario file plus optional
/// override patch.
struct ScenarioConfig {
  std::string name;
  std::string scenario_dir;

  std::vector<DgParams> dg_params;
  ControlGains gains;
  NetworkModel network;
  SimTiming timing;
  Eigen::VectorXd pinning;
  double consensus_rate_target = 4.5;
  double delta_omega_th = 1.0;
  double delta_v_th = 1.0;

  GameConfig game;
  AttackSchedule schedule;
  StealthBounds bounds;
  DefenderConfig defender;
  PretrainConfig pretrain;

  double duration = 12.0;
  std::uint64_t seed = 1;
  bool early_terminate = false;
  int initial_topology = 0;

  EnvironmentConfig environment() const;
};

/// Load a scenario file, apply an optional RFC 7386 merge patch (CLI
/// overrides), and validate. Throws Error(config) with location context.
ScenarioConfig load_scenario(const std::string& path, const std::string& overrides_json = "");

/// Parse from an in-memory JSON text (tests); `dir` anchors relative paths.
ScenarioConfig parse_scenario(const std::string& text, const std::string& dir,
                              const std::string& overrides_json = "");

struct RunSummary {
  std::string scenario;
  std::string defender;
  std::uint64_t seed = 0;
  double duration = 0.0;
  int epochs = 0;
  double u_d_cum = 0.0;
  double u_r_cum = 0.0;
  double max_freq_dev_rad = 0.0;  // post-warmup, epoch-mean based
  double max_freq_dev_hz = 0.0;
  double max_power_mismatch = 0.0;  // fraction of delta_omega_th
  double final_freq_dev_rad = 0.0;
  double final_power_mismatch = 0.0;
  double final_q_mismatch = 0.0;  // fraction of delta_v_th
  int scan_events = 0;
  int topology_switches = 0;
  int static_flags = 0;
  int retrain_events = 0;
  int anomaly_events = 0;
  std::vector<int> burned_dgs;  // 1-based
  bool objectives_met = false;

  std::string to_json() const;
  static RunSummary from_json(const std::string& text);
};

/// Execute a scenario, writing trajectory.csv, metrics.json, events.jsonl
/// and summary.json into out_dir (skipped when out_dir is empty).
RunSummary run_scenario(const ScenarioConfig& cfg, const std::string& out_dir);

/// Side-by-side comparison of two run summaries: JSON plus a rendered text
/// table under the "table" key.
std::string compare_summaries(const RunSummary& a, const RunSummary& b);

struct PretrainReport {
  int episodes = 0;
  std::int64_t agent_steps = 0;
  double first_loss = 0.0;       // mean over the first quarter of train steps
  double last_loss = 0.0;        // mean over the last quarter
  double elapsed_s = 0.0;
  std::string checkpoint_path;

  std::string to_json() const;
};

/// Build the experience corpus from benign plus randomized single-DG
/// injection episodes, train to a plateau, and write the checkpoint.
PretrainReport pretrain(const ScenarioConfig& cfg, const std::string& checkpoint_path);

}  // namespace mgrid

#endif
