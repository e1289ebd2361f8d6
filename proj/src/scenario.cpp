#include "mgrid/scenario.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "mgrid/common.hpp"

namespace mgrid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::config, "cannot open config file: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config, path + ": " + e.what());
  }
}

json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::config, what + ": " + e.what());
  }
}

double get_num(const json& j, const std::string& key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw Error(ErrorCode::config, "key '" + key + "' must be a number");
  return j.at(key).get<double>();
}

int get_int(const json& j, const std::string& key, int fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<int>();
}

std::string resolve_path(const std::string& dir, const std::string& path) {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_absolute()) return path;
  const fs::path anchored = fs::path(dir) / p;
  if (fs::exists(anchored)) return anchored.string();
  return path;
}

std::array<double, 3> get_triplet(const json& j, const std::string& key,
                                  std::array<double, 3> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3)
    throw Error(ErrorCode::config, "key '" + key + "' must be an array of three numbers");
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

void parse_system(const json& sys, ScenarioConfig& cfg) {
  const double omega_n = get_num(sys, "omega_n", 2.0 * M_PI * 50.0);
  const double v_odn = get_num(sys, "v_odn", 380.0);
  const double v_dc = get_num(sys, "v_dc", 1000.0);
  const double f_sw = get_num(sys, "f_sw", 1e4);
  cfg.delta_omega_th = get_num(sys, "delta_omega_th", 1.0);
  cfg.delta_v_th = get_num(sys, "delta_v_th", 1.0);

  if (!sys.contains("dgs") || !sys.at("dgs").is_array() || sys.at("dgs").empty())
    throw Error(ErrorCode::config, "system config needs a non-empty 'dgs' array");
  std::vector<double> ratings;
  for (const auto& jd : sys.at("dgs")) ratings.push_back(get_num(jd, "s_rating", 1e4));
  const auto [m_p, n_q] = compute_droop_coeffs(cfg.delta_omega_th, cfg.delta_v_th, ratings);

  cfg.dg_params.clear();
  int idx = 0;
  for (const auto& jd : sys.at("dgs")) {
    DgParams p;
    p.r_f = get_num(jd, "r_f", 0.1);
    p.l_f = get_num(jd, "l_f", 4e-3);
    p.c_f = get_num(jd, "c_f", 200e-6);
    p.r_c = get_num(jd, "r_c", 0.1);
    p.l_c = get_num(jd, "l_c", 1.5e-3);
    p.s_rating = ratings[idx];
    p.m_p = get_num(jd, "m_p", m_p[idx]);
    p.n_q = get_num(jd, "n_q", n_q[idx]);
    p.omega_n = omega_n;
    p.v_odn = v_odn;
    p.v_dc = v_dc;
    p.f_sw = f_sw;
    p.bus = get_int(jd, "bus", idx + 1) - 1;
    p.validate();
    cfg.dg_params.push_back(p);
    ++idx;
  }

  if (!sys.contains("network")) throw Error(ErrorCode::config, "system config needs 'network'");
  const json& net = sys.at("network");
  cfg.network = NetworkModel{};
  cfg.network.n_bus = get_int(net, "buses", static_cast<int>(cfg.dg_params.size()));
  for (const auto& jl : net.value("lines", json::array())) {
    Line ln;
    ln.from_bus = jl.at("from").get<int>() - 1;
    ln.to_bus = jl.at("to").get<int>() - 1;
    ln.r = jl.at("r").get<double>();
    ln.l = jl.at("l").get<double>();
    cfg.network.lines.push_back(ln);
  }
  for (const auto& jl : net.value("loads", json::array())) {
    Load ld;
    ld.bus = jl.at("bus").get<int>() - 1;
    ld.r = jl.at("r").get<double>();
    ld.l = jl.at("l").get<double>();
    cfg.network.loads.push_back(ld);
  }
  for (const DgParams& p : cfg.dg_params) cfg.network.dg_bus.push_back(p.bus);
  cfg.network.validate();

  const json gains = sys.value("gains", json::object());
  cfg.gains.k_pv = get_num(gains, "k_pv", 1.0);
  cfg.gains.k_iv = get_num(gains, "k_iv", 400.0);
  cfg.gains.k_pi = get_num(gains, "k_pi", 30.0);
  cfg.gains.k_ii = get_num(gains, "k_ii", 20000.0);

  const json cons = sys.value("consensus", json::object());
  cfg.gains.k1 = get_num(cons, "k1", 0.0);  // 0 requests derivation
  cfg.gains.k2 = get_num(cons, "k2", cfg.gains.k1);
  cfg.consensus_rate_target = get_num(cons, "rate_target", 4.5);
  const int pinned = get_int(cons, "pinned_dg", 1);
  if (pinned < 1 || pinned > static_cast<int>(cfg.dg_params.size()))
    throw Error(ErrorCode::config, "pinned_dg out of range");
  cfg.pinning = Eigen::VectorXd::Zero(static_cast<int>(cfg.dg_params.size()));
  cfg.pinning(pinned - 1) = get_num(cons, "pinning_gain", 1.0);

  const json timing = sys.value("timing", json::object());
  cfg.timing.dt = get_num(timing, "dt", 5e-5);
  cfg.timing.consensus_period = get_num(timing, "consensus_period", 0.01);
  cfg.timing.log_interval = get_num(timing, "log_interval", 1e-3);
  cfg.timing.soft_start = get_num(timing, "soft_start", 0.25);
  cfg.timing.power_filter_cutoff = get_num(timing, "power_filter_cutoff", 31.4);
  cfg.timing.validate();
}

void parse_attack(const json& j, ScenarioConfig& cfg) {
  const double fraction = get_num(j, "bounds_fraction", 0.05);
  const std::array<double, 3> scales{cfg.delta_omega_th, cfg.delta_omega_th, cfg.delta_v_th};
  for (int c = 0; c < 3; ++c) {
    cfg.bounds.lo[c] = -fraction * scales[c];
    cfg.bounds.hi[c] = fraction * scales[c];
  }
  cfg.schedule = AttackSchedule{};
  cfg.schedule.neutralize_window = get_num(j, "neutralize_window", 0.5);
  for (const auto& js : j.value("stages", json::array())) {
    AttackStage st;
    if (js.contains("at")) {
      st.trigger = AttackStage::Trigger::at_time;
      st.at = js.at("at").get<double>();
    } else if (js.contains("after_stage")) {
      st.trigger = AttackStage::Trigger::on_neutralized;
      st.watch_stage = js.at("after_stage").get<int>();
      st.delay = get_num(js, "delay", 0.0);
    } else {
      throw Error(ErrorCode::config, "attack stage needs 'at' or 'after_stage'");
    }
    if (!js.contains("dgs") || js.at("dgs").empty())
      throw Error(ErrorCode::config, "attack stage needs a non-empty 'dgs' list");
    for (const auto& jd : js.at("dgs")) st.dgs.push_back(jd.get<int>() - 1);
    const std::array<double, 3> frac =
        get_triplet(js, "offsets_fraction", {0.049, 0.049, 0.049});
    for (int c = 0; c < 3; ++c) st.offsets[c] = frac[c] * scales[c];
    cfg.schedule.stages.push_back(std::move(st));
  }
}

void parse_defender(const json& j, ScenarioConfig& cfg) {
  const std::string mode = j.value("mode", "static");
  if (mode == "static")
    cfg.defender.mode = DefenderMode::static_rules;
  else if (mode == "dqn")
    cfg.defender.mode = DefenderMode::dqn;
  else
    throw Error(ErrorCode::config, "defender mode must be 'static' or 'dqn', got '" + mode + "'");
  cfg.defender.static_detector.thresholds =
      get_triplet(j, "static_thresholds", {0.06, 0.06, 0.06});
  cfg.defender.checkpoint = j.value("checkpoint", "");

  const json agent = j.value("agent", json::object());
  AgentConfig& a = cfg.defender.agent;
  a.b0 = get_num(agent, "b0", 0.3);
  a.lambda_decay = get_num(agent, "lambda_decay", 0.01);
  a.gamma = cfg.game.gamma;
  a.batch = get_int(agent, "batch", 32);
  a.replay_capacity = get_int(agent, "replay_capacity", 10000);
  a.target_freeze = get_int(agent, "target_freeze", 50);
  a.drop_fraction = get_num(agent, "drop_fraction", 0.2);
  a.trailing_window = get_int(agent, "trailing_window", 10);
  a.b_r = get_num(agent, "b_r", 0.3);
  a.retrain_scale_floor = get_num(agent, "retrain_scale_floor", 0.05);
  a.learning_rate = get_num(agent, "learning_rate", 1e-3);
  if (agent.contains("hidden")) {
    a.hidden.clear();
    for (const auto& h : agent.at("hidden")) a.hidden.push_back(h.get<int>());
  }
  a.validate();
}

}  // namespace

EnvironmentConfig ScenarioConfig::environment() const {
  EnvironmentConfig e;
  e.dg_params = dg_params;
  e.gains = gains;
  e.network = network;
  e.timing = timing;
  e.pinning = pinning;
  e.game = game;
  e.schedule = schedule;
  e.bounds = bounds;
  e.defender_mode = defender.mode;
  e.static_detector = defender.static_detector;
  e.duration = duration;
  e.early_terminate = early_terminate;
  e.initial_topology = initial_topology;
  e.consensus_rate_target = consensus_rate_target;
  e.delta_omega_th = delta_omega_th;
  e.delta_v_th = delta_v_th;
  return e;
}

ScenarioConfig parse_scenario(const std::string& text, const std::string& dir,
                              const std::string& overrides_json) {
  json j = parse_json_text(text, "scenario");
  if (!overrides_json.empty()) {
    const json patch = parse_json_text(overrides_json, "overrides");
    j.merge_patch(patch);
  }

  ScenarioConfig cfg;
  cfg.scenario_dir = dir;
  cfg.name = j.value("name", "scenario");

  if (!j.contains("system")) throw Error(ErrorCode::config, "scenario needs 'system'");
  if (j.at("system").is_string()) {
    const std::string sys_path = resolve_path(dir, j.at("system").get<std::string>());
    if (!fs::exists(sys_path))
      throw Error(ErrorCode::config, "referenced system config does not exist: " + sys_path);
    parse_system(parse_json_file(sys_path), cfg);
  } else {
    parse_system(j.at("system"), cfg);
  }

  const json game = j.value("game", json::object());
  cfg.game.sigma_unit = get_num(game, "sigma_unit", 3.0);
  cfg.game.rho = get_num(game, "rho", 0.001);
  cfg.game.gamma = get_num(game, "gamma", 0.95);
  cfg.game.epoch = get_num(game, "epoch", 0.1);
  cfg.game.oscillation_window = get_num(game, "oscillation_window", cfg.game.epoch);
  cfg.game.warmup_time = get_num(game, "warmup_time", 1.5);
  cfg.game.anomaly_threshold = get_num(game, "anomaly_threshold", 0.01);
  cfg.game.scan_epochs = get_int(game, "scan_epochs", 2);
  cfg.game.power_channel_floor = get_num(game, "power_channel_floor", 0.05);
  cfg.game.validate();

  parse_attack(j.value("attack", json::object()), cfg);
  parse_defender(j.value("defender", json::object()), cfg);
  if (!cfg.defender.checkpoint.empty())
    cfg.defender.checkpoint = resolve_path(dir, cfg.defender.checkpoint);

  const json pre = j.value("pretrain", json::object());
  cfg.pretrain.episodes = get_int(pre, "episodes", 60);
  cfg.pretrain.episode_length = get_num(pre, "episode_length", 6.0);
  cfg.pretrain.benign_fraction = get_num(pre, "benign_fraction", 0.3);
  cfg.pretrain.min_offset_fraction = get_num(pre, "min_offset_fraction", 0.3);
  cfg.pretrain.max_offset_fraction = get_num(pre, "max_offset_fraction", 0.95);
  cfg.pretrain.earliest_attack = get_num(pre, "earliest_attack", 1.6);
  cfg.pretrain.latest_attack = get_num(pre, "latest_attack", 3.0);

  cfg.duration = get_num(j, "duration", 12.0);
  if (!(cfg.duration > 0.0)) throw Error(ErrorCode::config, "duration must be > 0");
  cfg.seed = j.value("seed", 1ull);
  cfg.early_terminate = j.value("early_terminate", false);
  cfg.initial_topology = get_int(j, "initial_topology", 0);

  for (const AttackStage& st : cfg.schedule.stages)
    for (int dg : st.dgs)
      if (dg < 0 || dg >= static_cast<int>(cfg.dg_params.size()))
        throw Error(ErrorCode::config, "attack stage DG index out of range");

  return cfg;
}

ScenarioConfig load_scenario(const std::string& path, const std::string& overrides_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::config, "cannot open scenario file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ScenarioConfig cfg =
      parse_scenario(text, fs::path(path).parent_path().string(), overrides_json);
  if (cfg.name == "scenario") cfg.name = fs::path(path).stem().string();
  return cfg;
}

// ---- summaries and artifacts -------------------------------------------

std::string RunSummary::to_json() const {
  json j;
  j["scenario"] = scenario;
  j["defender"] = defender;
  j["seed"] = seed;
  j["duration"] = duration;
  j["epochs"] = epochs;
  j["u_d_cum"] = u_d_cum;
  j["u_r_cum"] = u_r_cum;
  j["max_freq_dev_rad"] = max_freq_dev_rad;
  j["max_freq_dev_hz"] = max_freq_dev_hz;
  j["max_power_mismatch"] = max_power_mismatch;
  j["final_freq_dev_rad"] = final_freq_dev_rad;
  j["final_power_mismatch"] = final_power_mismatch;
  j["final_q_mismatch"] = final_q_mismatch;
  j["scan_events"] = scan_events;
  j["topology_switches"] = topology_switches;
  j["static_flags"] = static_flags;
  j["retrain_events"] = retrain_events;
  j["anomaly_events"] = anomaly_events;
  j["burned_dgs"] = burned_dgs;
  j["objectives_met"] = objectives_met;
  return j.dump(2);
}

RunSummary RunSummary::from_json(const std::string& text) {
  const json j = parse_json_text(text, "run summary");
  RunSummary s;
  s.scenario = j.value("scenario", "");
  s.defender = j.value("defender", "");
  s.seed = j.value("seed", 0ull);
  s.duration = j.value("duration", 0.0);
  s.epochs = j.value("epochs", 0);
  s.u_d_cum = j.value("u_d_cum", 0.0);
  s.u_r_cum = j.value("u_r_cum", 0.0);
  s.max_freq_dev_rad = j.value("max_freq_dev_rad", 0.0);
  s.max_freq_dev_hz = j.value("max_freq_dev_hz", 0.0);
  s.max_power_mismatch = j.value("max_power_mismatch", 0.0);
  s.final_freq_dev_rad = j.value("final_freq_dev_rad", 0.0);
  s.final_power_mismatch = j.value("final_power_mismatch", 0.0);
  s.final_q_mismatch = j.value("final_q_mismatch", 0.0);
  s.scan_events = j.value("scan_events", 0);
  s.topology_switches = j.value("topology_switches", 0);
  s.static_flags = j.value("static_flags", 0);
  s.retrain_events = j.value("retrain_events", 0);
  s.anomaly_events = j.value("anomaly_events", 0);
  s.burned_dgs = j.value("burned_dgs", std::vector<int>{});
  s.objectives_met = j.value("objectives_met", false);
  return s;
}

namespace {

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) {
    if (path.empty()) return;
    file_ = std::fopen(path.c_str(), "wb");
    if (!file_) throw Error(ErrorCode::io, "cannot write trajectory csv: " + path);
    std::fputs("t,dg,omega,v_od,v_oq,P,Q,delta_omega,delta_v\n", file_);
  }
  ~CsvWriter() {
    if (file_) std::fclose(file_);
  }
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void row(const LogRow& r) {
    if (!file_) return;
    std::fprintf(file_, "%.6f,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.t, r.dg, r.omega,
                 r.v_od, r.v_oq, r.p, r.q, r.delta_omega, r.delta_v);
  }

 private:
  std::FILE* file_ = nullptr;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  out << text;
}

}  // namespace

RunSummary run_scenario(const ScenarioConfig& cfg, const std::string& out_dir) {
  if (!out_dir.empty()) fs::create_directories(out_dir);

  Environment env(cfg.environment());
  const int n = env.n_dgs();

  std::optional<CsvWriter> csv;
  if (!out_dir.empty()) {
    csv.emplace((fs::path(out_dir) / "trajectory.csv").string());
    env.set_log_sink([&](const LogRow& r) { csv->row(r); });
  }

  std::optional<DqnAgent> agent;
  if (cfg.defender.mode == DefenderMode::dqn) {
    agent.emplace(2 * n + env.num_actions(), env.num_actions(), cfg.defender.agent, cfg.seed);
    if (!cfg.defender.checkpoint.empty())
      agent->load_weights(Mlp::load_file(cfg.defender.checkpoint));
  }

  RunSummary summary;
  summary.scenario = cfg.name;
  summary.defender = cfg.defender.mode == DefenderMode::dqn ? "dqn" : "static";
  summary.seed = cfg.seed;
  summary.duration = cfg.duration;

  json epochs_json = json::array();
  const double omega_n = cfg.dg_params[0].omega_n;

  while (!env.terminal()) {
    int action = env.state().topology_id;
    std::vector<double> features;
    if (agent) {
      features = encode_state(env.state(), env.num_actions());
      action = agent->act(features);
    }
    const Environment::StepResult res = env.step(action);

    if (agent) {
      Experience e;
      e.state = features;
      e.action = action;
      e.reward = res.u_d;
      e.next_state = encode_state(env.state(), env.num_actions());
      e.terminal = res.terminal;
      agent->observe(std::move(e));
    }

    summary.epochs += 1;
    summary.u_d_cum += res.u_d;
    summary.u_r_cum += res.breakdown.u_r;

    // epoch-mean deviation metrics once the startup transient has passed
    double dev = 0.0, mismatch = 0.0;
    for (int k = 0; k < n; ++k) {
      dev = std::max(dev, std::abs(res.breakdown.p_c[k][0] - omega_n));
      for (int l = k + 1; l < n; ++l)
        mismatch = std::max(mismatch,
                            std::abs(res.breakdown.p_c[k][2] - res.breakdown.p_c[l][2]));
    }
    if (env.time() > cfg.game.warmup_time) {
      summary.max_freq_dev_rad = std::max(summary.max_freq_dev_rad, dev);
      summary.max_power_mismatch =
          std::max(summary.max_power_mismatch, mismatch / cfg.delta_omega_th);
    }
    summary.final_freq_dev_rad = dev;
    summary.final_power_mismatch = mismatch / cfg.delta_omega_th;
    if (res.report)
      summary.final_q_mismatch = res.report->max_nqq_mismatch / cfg.delta_v_th;

    json je;
    je["epoch"] = env.state().epoch;
    je["t_end"] = env.time();
    je["u_d"] = res.u_d;
    je["u_r"] = res.breakdown.u_r;
    je["sigma"] = res.breakdown.sigma;
    je["n_l"] = res.breakdown.n_l;
    je["n_c"] = res.breakdown.n_c;
    je["c_c"] = res.breakdown.c_c;
    je["sum_delta"] = res.breakdown.sum_delta;
    je["topology"] = env.state().topology_id;
    je["freq_dev"] = dev;
    je["power_mismatch"] = mismatch / cfg.delta_omega_th;
    if (res.report) {
      je["v"] = res.report->v;
      je["v_sync"] = res.report->v_sync;
      je["v_sync_dot"] = res.report->v_sync_dot;
    }
    epochs_json.push_back(std::move(je));
  }

  summary.max_freq_dev_hz = summary.max_freq_dev_rad / (2.0 * M_PI);
  for (const Event& e : env.events()) {
    if (e.kind == "malware_scan") summary.scan_events += 1;
    if (e.kind == "topology_switch") summary.topology_switches += 1;
    if (e.kind == "anomaly_flagged") summary.anomaly_events += 1;
  }
  summary.static_flags = env.static_flag_count();
  if (agent) summary.retrain_events = agent->retrain_events();
  for (int k = 0; k < n; ++k)
    if (env.state().burned[k]) summary.burned_dgs.push_back(k + 1);
  summary.objectives_met = summary.final_freq_dev_rad < 1e-3 &&
                           summary.final_power_mismatch < 0.01 &&
                           summary.final_q_mismatch < 0.01;

  if (!out_dir.empty()) {
    json metrics;
    metrics["scenario"] = cfg.name;
    metrics["seed"] = cfg.seed;
    metrics["epochs"] = std::move(epochs_json);
    metrics["u_d_cum"] = summary.u_d_cum;
    metrics["u_r_cum"] = summary.u_r_cum;
    json scans = json::array(), switches = json::array();
    for (const Event& e : env.events()) {
      if (e.kind == "malware_scan") scans.push_back({{"t", e.t}, {"detail", e.detail}});
      if (e.kind == "topology_switch") switches.push_back({{"t", e.t}, {"detail", e.detail}});
    }
    metrics["scan_events"] = std::move(scans);
    metrics["topology_switches"] = std::move(switches);
    write_text((fs::path(out_dir) / "metrics.json").string(), metrics.dump(2));

    std::string events_text;
    for (const Event& e : env.events()) {
      json je;
      je["t"] = e.t;
      je["kind"] = e.kind;
      je["detail"] = e.detail;
      events_text += je.dump();
      events_text += '\n';
    }
    write_text((fs::path(out_dir) / "events.jsonl").string(), events_text);
    write_text((fs::path(out_dir) / "summary.json").string(), summary.to_json());
  }
  return summary;
}

std::string compare_summaries(const RunSummary& a, const RunSummary& b) {
  json j;
  j["a"] = json::parse(a.to_json());
  j["b"] = json::parse(b.to_json());
  json d;
  d["u_d_cum"] = b.u_d_cum - a.u_d_cum;
  d["u_r_cum"] = b.u_r_cum - a.u_r_cum;
  d["max_freq_dev_rad"] = b.max_freq_dev_rad - a.max_freq_dev_rad;
  d["max_power_mismatch"] = b.max_power_mismatch - a.max_power_mismatch;
  d["scan_events"] = b.scan_events - a.scan_events;
  d["topology_switches"] = b.topology_switches - a.topology_switches;
  j["delta_b_minus_a"] = std::move(d);

  char buf[256];
  std::string table;
  auto row = [&](const char* name, double va, double vb) {
    std::snprintf(buf, sizeof buf, "%-24s %16.6g %16.6g\n", name, va, vb);
    table += buf;
  };
  std::snprintf(buf, sizeof buf, "%-24s %16s %16s\n", "metric", a.scenario.c_str(),
                b.scenario.c_str());
  table += buf;
  row("u_d_cum", a.u_d_cum, b.u_d_cum);
  row("u_r_cum", a.u_r_cum, b.u_r_cum);
  row("max_freq_dev_rad", a.max_freq_dev_rad, b.max_freq_dev_rad);
  row("max_power_mismatch", a.max_power_mismatch, b.max_power_mismatch);
  row("scan_events", a.scan_events, b.scan_events);
  row("topology_switches", a.topology_switches, b.topology_switches);
  std::snprintf(buf, sizeof buf, "%-24s %16s %16s\n", "objectives_met",
                a.objectives_met ? "yes" : "no", b.objectives_met ? "yes" : "no");
  table += buf;
  j["table"] = table;
  return j.dump(2);
}

std::string PretrainReport::to_json() const {
  json j;
  j["episodes"] = episodes;
  j["agent_steps"] = agent_steps;
  j["first_loss"] = first_loss;
  j["last_loss"] = last_loss;
  j["elapsed_s"] = elapsed_s;
  j["checkpoint"] = checkpoint_path;
  return j.dump(2);
}

PretrainReport pretrain(const ScenarioConfig& cfg, const std::string& checkpoint_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = static_cast<int>(cfg.dg_params.size());

  ScenarioConfig base = cfg;
  base.defender.mode = DefenderMode::dqn;
  base.defender.checkpoint.clear();
  base.duration = cfg.pretrain.episode_length;
  base.early_terminate = true;

  AgentConfig agent_cfg = cfg.defender.agent;
  agent_cfg.b0 = 1.0;  // explore from scratch

  // probe one environment for the action-space size
  {
    ScenarioConfig probe = base;
    probe.schedule.stages.clear();
    Environment env(probe.environment());
    DqnAgent agent(2 * n + env.num_actions(), env.num_actions(), agent_cfg, cfg.seed);

    Rng variation(cfg.seed ^ 0xa5a5a5a5deadbeefull);
    PretrainReport report;
    report.episodes = cfg.pretrain.episodes;
    std::vector<double> losses;

    const fs::path log_path =
        fs::path(checkpoint_path).parent_path() / "training_log.csv";
    std::FILE* log = std::fopen(log_path.string().c_str(), "wb");
    if (!log) throw Error(ErrorCode::io, "cannot write " + log_path.string());
    std::fputs("step,episode,loss,B_t,cum_reward\n", log);

    for (int ep = 0; ep < cfg.pretrain.episodes; ++ep) {
      ScenarioConfig episode = base;
      episode.schedule.stages.clear();
      const bool benign = variation.uniform01() < cfg.pretrain.benign_fraction;
      if (!benign) {
        AttackStage st;
        st.trigger = AttackStage::Trigger::at_time;
        st.at = variation.uniform(cfg.pretrain.earliest_attack, cfg.pretrain.latest_attack);
        st.dgs = {static_cast<int>(variation.uniform_below(n))};
        for (int c = 0; c < 3; ++c) {
          const double magnitude = variation.uniform(cfg.pretrain.min_offset_fraction,
                                                     cfg.pretrain.max_offset_fraction);
          const double sign = variation.uniform01() < 0.5 ? -1.0 : 1.0;
          st.offsets[c] = sign * magnitude * episode.bounds.hi[c];
        }
        episode.schedule.stages.push_back(std::move(st));
      }
      episode.initial_topology = static_cast<int>(variation.uniform_below(env.num_actions()));

      Environment ep_env(episode.environment());
      double cum_reward = 0.0;
      while (!ep_env.terminal()) {
        const std::vector<double> features = encode_state(ep_env.state(), ep_env.num_actions());
        const double b_t = agent.current_threshold();
        const int action = agent.act(features);
        const Environment::StepResult res = ep_env.step(action);
        cum_reward += res.u_d;
        Experience e;
        e.state = features;
        e.action = action;
        e.reward = res.u_d;
        e.next_state = encode_state(ep_env.state(), ep_env.num_actions());
        e.terminal = res.terminal;
        const TrainStats stats = agent.observe(std::move(e));
        if (stats.loss > 0.0) losses.push_back(stats.loss);
        std::fprintf(log, "%lld,%d,%.17g,%.17g,%.17g\n",
                     static_cast<long long>(agent.steps()), ep, stats.loss, b_t, cum_reward);
      }
    }
    std::fclose(log);

    if (!losses.empty()) {
      const std::size_t quarter = std::max<std::size_t>(1, losses.size() / 4);
      auto mean_of = [&](std::size_t begin, std::size_t end) {
        double sum = 0.0;
        for (std::size_t i = begin; i < end; ++i) sum += losses[i];
        return sum / static_cast<double>(end - begin);
      };
      report.first_loss = mean_of(0, quarter);
      report.last_loss = mean_of(losses.size() - quarter, losses.size());
    }

    if (!agent.online().all_finite())
      throw Error(ErrorCode::numeric, "pretraining produced non-finite weights");
    agent.online().save_file(checkpoint_path);
    report.agent_steps = agent.steps();
    report.checkpoint_path = checkpoint_path;
    report.elapsed_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
  }
}

}  // namespace mgrid
