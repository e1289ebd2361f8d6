#include "mgrid/game.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "mgrid/common.hpp"

namespace mgrid {

void GameConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw_config("discount factor must be in (0, 1)");
  if (!(rho > 0.0 && rho < 1.0)) throw_config("rho must be in (0, 1)");
  if (n_channels < 1) throw_config("n_channels must be >= 1");
  if (!(epoch > 0.0)) throw_config("decision epoch must be > 0");
  if (!(sigma_unit >= 0.0)) throw_config("sigma_unit must be >= 0");
  if (scan_epochs < 1) throw_config("scan_epochs must be >= 1");
}

double relative_error(double p_c, double p_n) {
  if (!(p_n > 0.0)) throw Error(ErrorCode::config, "relative_error needs p_n > 0");
  return std::abs(p_c - p_n) / p_n;
}

OscillationStats count_oscillations(std::span<const double> samples) {
  if (samples.empty()) throw Error(ErrorCode::invalid_argument, "empty oscillation window");
  OscillationStats out;
  const int n = static_cast<int>(samples.size());
  if (n < 3) return out;

  // least-squares line fit, then work on the residual
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sx += i;
    sy += samples[i];
    sxx += static_cast<double>(i) * i;
    sxy += i * samples[i];
  }
  const double denom = n * sxx - sx * sx;
  const double slope = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
  const double intercept = (sy - slope * sx) / n;

  std::vector<double> r(n);
  double max_abs_sample = 0.0;
  for (int i = 0; i < n; ++i) {
    r[i] = samples[i] - (intercept + slope * i);
    max_abs_sample = std::max(max_abs_sample, std::abs(samples[i]));
  }
  const double floor = 1e-7 * std::max(1.0, max_abs_sample);

  std::vector<int> crossings;
  int prev_sign = 0;
  for (int i = 0; i < n; ++i) {
    const int sign = r[i] > floor ? 1 : (r[i] < -floor ? -1 : 0);
    if (sign == 0) continue;
    if (prev_sign != 0 && sign != prev_sign) crossings.push_back(i);
    prev_sign = sign;
  }
  out.z = static_cast<int>(crossings.size()) / 2;
  if (out.z == 0) return out;

  // full cycle: crossing j to crossing j+2
  double total = 0.0;
  int cycles = 0;
  for (std::size_t j = 0; j + 2 < crossings.size(); j += 2) {
    double lo = r[crossings[j]], hi = r[crossings[j]];
    for (int i = crossings[j]; i <= crossings[j + 2]; ++i) {
      lo = std::min(lo, r[i]);
      hi = std::max(hi, r[i]);
    }
    total += hi - lo;
    ++cycles;
  }
  if (cycles > 0) {
    out.p_a = total / cycles;
  } else {
    double lo = r[0], hi = r[0];
    for (double v : r) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    out.p_a = hi - lo;
  }
  return out;
}

LinkCounts link_counts(const CommTopology& topo, std::span<const std::uint8_t> theta) {
  LinkCounts out;
  for (int a = 0; a < topo.n; ++a)
    for (int b = 0; b < topo.n; ++b)
      if (a != b && topo.s(a, b) != 0.0) ++out.n_l;
  const int bound = topo.n * topo.n - topo.n;
  if (out.n_l > bound) throw Error(ErrorCode::internal, "link count exceeds N^2 - N");
  for (std::uint8_t t : theta) out.n_c += t ? 1 : 0;
  out.c_c = out.n_c * (topo.n - 1);
  return out;
}

double attacker_utility(const UtilityBreakdown& b, const GameConfig& cfg) {
  double u = b.sum_delta;
  for (std::size_t k = 0; k < b.z.size(); ++k) {
    for (int c = 0; c < 3; ++c) {
      const double p_n = b.p_n[c];
      if (p_n > 0.0) u += b.z[k][c] * b.p_a[k][c] / p_n;
      u += b.p_r[k][c];
    }
  }
  u += cfg.rho * b.n_l;
  u -= b.sigma;
  return u;
}

double defender_utility(const UtilityBreakdown& b, const GameConfig& cfg) {
  return -attacker_utility(b, cfg);
}

std::vector<std::uint8_t> static_detect(std::span<const LinkMeasurement> links,
                                        const std::array<double, 3>& scales,
                                        const StaticDetectorConfig& cfg) {
  std::vector<std::uint8_t> flags(links.size(), 0);
  for (std::size_t i = 0; i < links.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      if (std::abs(links[i].received[c] - links[i].reference[c]) >
          cfg.thresholds[c] * scales[c]) {
        flags[i] = 1;
        break;
      }
    }
  }
  return flags;
}

// ---- Environment -------------------------------------------------------

namespace {

int round_ratio(double big, double small, const char* what) {
  const double ratio = big / small;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * ratio + 1e-12)
    throw Error(ErrorCode::config,
                std::string(what) + " must be an integer multiple of the smaller period");
  return static_cast<int>(rounded);
}

}  // namespace

Environment::Environment(EnvironmentConfig cfg)
    : cfg_(std::move(cfg)),
      topologies_(enumerate_topologies(static_cast<int>(cfg_.dg_params.size()), cfg_.pinning)),
      plant_(cfg_.dg_params, [&] {
        // k1 == 0 with a rate target requests derivation: place the slowest
        // closed-loop consensus mode at rate_target for the worst tree
        ControlGains g = cfg_.gains;
        if (g.k1 == 0.0 && g.k2 == 0.0 && cfg_.consensus_rate_target > 0.0) {
          double lmin = topologies_.front().lambda2;
          for (const CommTopology& t : topologies_) lmin = std::min(lmin, t.lambda2);
          g.k1 = g.k2 = cfg_.consensus_rate_target / lmin;
        }
        return g;
      }(), cfg_.network, cfg_.timing),
      attack_(cfg_.schedule, cfg_.bounds, static_cast<int>(cfg_.dg_params.size())) {
  cfg_.game.validate();
  const int n = plant_.n_dg();
  if (cfg_.initial_topology < 0 || cfg_.initial_topology >= num_actions())
    throw Error(ErrorCode::config, "initial topology id out of range");
  plant_.set_pinning(cfg_.pinning);

  // the derived gain must honor the formal bound on every selectable tree
  for (const CommTopology& t : topologies_) {
    const double k_min = min_consensus_gain(t);
    if (plant_.gains().k1 > 0.0 && plant_.gains().k1 < k_min)
      log_msg(LogLevel::warn, "consensus gain " + std::to_string(plant_.gains().k1) +
                                  " below bound " + std::to_string(k_min) + " for topology " +
                                  std::to_string(t.id));
  }

  shared_scales_ = {cfg_.delta_omega_th, cfg_.delta_omega_th, cfg_.delta_v_th};
  steps_per_tick_ = round_ratio(cfg_.timing.consensus_period, cfg_.timing.dt, "consensus period");
  ticks_per_epoch_ = round_ratio(cfg_.game.epoch, cfg_.timing.consensus_period, "decision epoch");
  log_every_steps_ = round_ratio(cfg_.timing.log_interval, cfg_.timing.dt, "log interval");
  max_epochs_ = round_ratio(cfg_.duration, cfg_.game.epoch, "duration");

  state_.theta.assign(n, 0);
  state_.burned.assign(n, 0);
  state_.anomaly.assign(n, 0);
  state_.anomaly_age.assign(n, 0);
  state_.topology_id = cfg_.initial_topology;
  state_.epoch = 0;

  buf_omega_.resize(n);
  buf_vod_.resize(n);
  buf_mpp_.resize(n);
  buf_nqq_.resize(n);
  buf_dw_.resize(n);
  buf_dv_.resize(n);
  disagreement_max_.assign(n, 0.0);
}

bool Environment::terminal() const {
  if (state_.epoch >= max_epochs_) return true;
  if (cfg_.early_terminate && attack_.exhausted() && !attack_.state().any_active() &&
      state_.epoch > 0)
    return true;
  return false;
}

void Environment::exchange_tick() {
  const int n = plant_.n_dg();
  const double now = plant_.time();
  const Eigen::MatrixXd& s = topologies_[state_.topology_id].s;

  reveals_pending_ += attack_.advance(
      now, s, [this](double t, const std::string& kind, const std::string& what) {
        events_.push_back({t, kind, what});
      });

  std::vector<std::array<double, 3>> tuples(n);
  for (int k = 0; k < n; ++k) tuples[k] = plant_.shared_tuple(k);

  const bool armed = now >= cfg_.game.warmup_time;

  for (int k = 0; k < n; ++k) {
    std::vector<ReceivedTuple> incoming;
    std::vector<LinkMeasurement> measurements;
    std::vector<int> senders;
    for (int l = 0; l < n; ++l) {
      if (l == k || s(l, k) == 0.0) continue;
      const std::array<double, 3> recv = inject(tuples[l], l, k, attack_.state(), s);
      LinkMeasurement m;
      m.from = l;
      m.to = k;
      m.received = recv;
      // residual-style reference: the monitoring estimate of the sender's
      // physical state, which tracks drift but not in-transit manipulation
      m.reference = tuples[l];
      measurements.push_back(m);
      senders.push_back(l);

      // sender-side disagreement feeds the monitoring framework
      double d = 0.0;
      for (int c = 0; c < 3; ++c) d += std::abs(recv[c] - tuples[l][c]) / shared_scales_[c];
      disagreement_max_[l] = std::max(disagreement_max_[l], d);
    }

    std::vector<std::uint8_t> drop(measurements.size(), 0);
    if (cfg_.defender_mode == DefenderMode::static_rules && armed) {
      drop = static_detect(measurements, shared_scales_, cfg_.static_detector);
      for (std::uint8_t f : drop) static_flags_total_ += f ? 1 : 0;
    }
    for (std::size_t i = 0; i < measurements.size(); ++i) {
      if (drop[i]) continue;
      ReceivedTuple r;
      r.from = senders[i];
      r.omega = measurements[i].received[0];
      r.mpp = measurements[i].received[1];
      r.nqq = measurements[i].received[2];
      incoming.push_back(r);
    }
    plant_.set_received(k, std::move(incoming));
  }
}

LyapunovSample Environment::collect_epoch_sample() const {
  const int n = plant_.n_dg();
  LyapunovSample s;
  s.t = plant_.time();
  s.omega.resize(n);
  s.mpp.resize(n);
  s.nqq.resize(n);
  s.y.resize(n);
  for (int k = 0; k < n; ++k) {
    auto mean = [](const std::vector<double>& v) {
      double sum = 0.0;
      for (double x : v) sum += x;
      return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
    };
    s.omega[k] = mean(buf_omega_[k]);
    s.mpp[k] = mean(buf_mpp_[k]);
    s.nqq[k] = mean(buf_nqq_[k]);
    // y = omega_star + m_P*P in per-unit of the nominal frequency; the droop
    // law makes omega_star the operating frequency, so epoch means compose
    s.y[k] = (s.omega[k] + s.mpp[k]) / cfg_.dg_params[0].omega_n;
  }
  auto mean_scalar = [](const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return v.empty() ? -1.0 : sum / static_cast<double>(v.size());
  };
  s.v_mean = mean_scalar(buf_v_);
  s.v_sync_mean = mean_scalar(buf_vsync_);
  return s;
}

UtilityBreakdown Environment::score_epoch(int reveals, bool warmed) {
  const int n = plant_.n_dg();
  UtilityBreakdown b;
  b.z.assign(n, {0.0, 0.0, 0.0});
  b.p_a.assign(n, {0.0, 0.0, 0.0});
  b.p_c.assign(n, {0.0, 0.0, 0.0});
  b.p_r.assign(n, {0.0, 0.0, 0.0});

  auto mean = [](const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
  };
  auto mean_abs = [](const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += std::abs(x);
    return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
  };

  double mpp_mean_all = 0.0;
  for (int k = 0; k < n; ++k) {
    b.p_c[k][0] = mean(buf_omega_[k]);
    b.p_c[k][1] = mean(buf_vod_[k]);
    b.p_c[k][2] = mean(buf_mpp_[k]);
    mpp_mean_all += b.p_c[k][2];
  }
  mpp_mean_all /= n;

  b.p_n[0] = cfg_.dg_params[0].omega_n;
  b.p_n[1] = cfg_.dg_params[0].v_odn;
  b.p_n[2] = std::max(mpp_mean_all, cfg_.game.power_channel_floor * cfg_.delta_omega_th);

  if (warmed) {
    for (int k = 0; k < n; ++k) {
      const OscillationStats so = count_oscillations(buf_omega_[k]);
      const OscillationStats sv = count_oscillations(buf_vod_[k]);
      const OscillationStats sp = count_oscillations(buf_mpp_[k]);
      b.z[k] = {static_cast<double>(so.z), static_cast<double>(sv.z), static_cast<double>(sp.z)};
      b.p_a[k] = {so.p_a, sv.p_a, sp.p_a};
      for (int c = 0; c < 3; ++c) b.p_r[k][c] = relative_error(b.p_c[k][c], b.p_n[c]);
      b.sum_delta += mean_abs(buf_dw_[k]) / cfg_.dg_params[k].omega_n +
                     mean_abs(buf_dv_[k]) / std::max(cfg_.dg_params[k].v_odn, 1.0);
    }
  }

  const LinkCounts lc = link_counts(topologies_[state_.topology_id], attack_.state().theta);
  b.n_l = lc.n_l;
  b.n_c = lc.n_c;
  b.c_c = lc.c_c;
  b.sigma = cfg_.game.sigma_unit * reveals;
  b.u_r = attacker_utility(b, cfg_.game);
  b.u_d = defender_utility(b, cfg_.game);
  return b;
}

void Environment::update_anomaly(bool warmed) {
  if (cfg_.defender_mode != DefenderMode::dqn) return;
  const int n = plant_.n_dg();
  auto mean_abs = [](const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += std::abs(x);
    return v.empty() ? 0.0 : sum / static_cast<double>(v.size());
  };
  for (int k = 0; k < n; ++k) {
    if (state_.anomaly[k]) {
      ++state_.anomaly_age[k];  // latched until the scan clears it
      continue;
    }
    if (!warmed) continue;
    const double residual = mean_abs(buf_dw_[k]) / cfg_.dg_params[k].omega_n +
                            mean_abs(buf_dv_[k]) / std::max(cfg_.dg_params[k].v_odn, 1.0) +
                            disagreement_max_[k];
    if (residual > cfg_.game.anomaly_threshold) {
      state_.anomaly[k] = 1;
      state_.anomaly_age[k] = 1;
      events_.push_back({plant_.time(), "anomaly_flagged",
                         "dg " + std::to_string(k + 1) + " residual " + std::to_string(residual)});
    }
  }
}

void Environment::run_scans() {
  if (cfg_.defender_mode != DefenderMode::dqn) return;
  const int n = plant_.n_dg();
  for (int k = 0; k < n; ++k) {
    if (state_.anomaly[k] && state_.anomaly_age[k] >= cfg_.game.scan_epochs) {
      remove_malware(attack_.state_mutable(), k);
      state_.anomaly[k] = 0;
      state_.anomaly_age[k] = 0;
      events_.push_back(
          {plant_.time(), "malware_scan", "dg " + std::to_string(k + 1) + " scanned and burned"});
    }
  }
}

Environment::StepResult Environment::step(int action) {
  if (action < 0 || action >= num_actions())
    throw Error(ErrorCode::invalid_argument, "action id out of range");
  if (terminal()) throw Error(ErrorCode::invalid_argument, "step on terminal environment");

  if (action != state_.topology_id) {
    events_.push_back({plant_.time(), "topology_switch",
                       std::to_string(state_.topology_id) + " -> " + std::to_string(action)});
    state_.topology_id = action;
  }

  const int n = plant_.n_dg();
  for (int k = 0; k < n; ++k) {
    buf_omega_[k].clear();
    buf_vod_[k].clear();
    buf_mpp_[k].clear();
    buf_nqq_[k].clear();
    buf_dw_[k].clear();
    buf_dv_[k].clear();
  }
  buf_v_.clear();
  buf_vsync_.clear();
  disagreement_max_.assign(n, 0.0);
  reveals_pending_ = 0;

  for (int tick = 0; tick < ticks_per_epoch_; ++tick) {
    exchange_tick();
    for (int step_i = 0; step_i < steps_per_tick_; ++step_i) {
      plant_.step();
      // sample at the logging cadence
      const long step_count =
          std::lround(plant_.time() / cfg_.timing.dt);
      if (step_count % log_every_steps_ == 0) {
        double v_inst = 0.0, vsync_inst = 0.0, pin_num = 0.0, pin_den = 0.0;
        for (int k = 0; k < n; ++k) {
          pin_num += cfg_.pinning(k) * cfg_.dg_params[k].m_p * plant_.dg(k).p;
          pin_den += cfg_.pinning(k);
        }
        const double omega_n = cfg_.dg_params[0].omega_n;
        const double y_pin = 1.0 + (pin_den > 0.0 ? pin_num / pin_den : 0.0) / omega_n;
        for (int k = 0; k < n; ++k) {
          const DgState& s = plant_.dg(k);
          const double omega = plant_.omega_of(k);
          // per-unit candidate so the decay diagnostic is dimensionless
          const double y = (omega + cfg_.dg_params[k].m_p * s.p) / omega_n;
          v_inst += 0.5 * y * y;
          vsync_inst += 0.5 * (y - y_pin) * (y - y_pin);
          buf_omega_[k].push_back(omega);
          buf_vod_[k].push_back(s.v_od);
          buf_mpp_[k].push_back(cfg_.dg_params[k].m_p * s.p);
          buf_nqq_[k].push_back(cfg_.dg_params[k].n_q * s.q);
          buf_dw_[k].push_back(s.delta_omega);
          buf_dv_[k].push_back(s.delta_v);
          if (log_sink_) {
            LogRow row;
            row.t = plant_.time();
            row.dg = k + 1;
            row.omega = omega;
            row.v_od = s.v_od;
            row.v_oq = s.v_oq;
            row.p = s.p;
            row.q = s.q;
            row.delta_omega = s.delta_omega;
            row.delta_v = s.delta_v;
            log_sink_(row);
          }
        }
        buf_v_.push_back(v_inst);
        buf_vsync_.push_back(vsync_inst);
      }
    }
  }

  const bool warmed = plant_.time() > cfg_.game.warmup_time;
  StepResult result;
  result.breakdown = score_epoch(reveals_pending_, warmed);
  result.u_d = result.breakdown.u_d;

  update_anomaly(warmed);
  run_scans();

  state_.theta = attack_.state().theta;
  state_.burned = attack_.state().burned;
  state_.epoch += 1;

  const LyapunovSample sample = collect_epoch_sample();
  if (prev_epoch_sample_) {
    const LyapunovSample window[2] = {*prev_epoch_sample_, sample};
    result.report = lyapunov_diagnostic(window, cfg_.dg_params[0].omega_n, cfg_.pinning);
  }
  prev_epoch_sample_ = sample;

  result.terminal = terminal();
  return result;
}

std::string Environment::snapshot_json() const {
  nlohmann::json j;
  j["plant"] = nlohmann::json::parse(plant_.snapshot_json());
  j["attack"] = nlohmann::json::parse(attack_.snapshot_json());
  j["theta"] = state_.theta;
  j["burned"] = state_.burned;
  j["anomaly"] = state_.anomaly;
  j["anomaly_age"] = state_.anomaly_age;
  j["topology_id"] = state_.topology_id;
  j["epoch"] = state_.epoch;
  j["static_flags_total"] = static_flags_total_;
  if (prev_epoch_sample_) {
    nlohmann::json js;
    js["t"] = double_to_hex(prev_epoch_sample_->t);
    auto dump = [](const std::vector<double>& v) {
      nlohmann::json a = nlohmann::json::array();
      for (double x : v) a.push_back(double_to_hex(x));
      return a;
    };
    js["omega"] = dump(prev_epoch_sample_->omega);
    js["mpp"] = dump(prev_epoch_sample_->mpp);
    js["nqq"] = dump(prev_epoch_sample_->nqq);
    js["y"] = dump(prev_epoch_sample_->y);
    j["prev_sample"] = std::move(js);
  }
  return j.dump();
}

void Environment::restore_json(const std::string& snapshot) {
  const nlohmann::json j = nlohmann::json::parse(snapshot);
  plant_.restore_json(j.at("plant").dump());
  attack_.restore_json(j.at("attack").dump());
  state_.theta = j.at("theta").get<std::vector<std::uint8_t>>();
  state_.burned = j.at("burned").get<std::vector<std::uint8_t>>();
  state_.anomaly = j.at("anomaly").get<std::vector<std::uint8_t>>();
  state_.anomaly_age = j.at("anomaly_age").get<std::vector<int>>();
  state_.topology_id = j.at("topology_id").get<int>();
  state_.epoch = j.at("epoch").get<int>();
  static_flags_total_ = j.at("static_flags_total").get<int>();
  prev_epoch_sample_.reset();
  if (j.contains("prev_sample")) {
    LyapunovSample s;
    const auto& js = j.at("prev_sample");
    s.t = double_from_hex(js.at("t").get<std::string>());
    auto load = [](const nlohmann::json& a) {
      std::vector<double> v;
      for (const auto& x : a) v.push_back(double_from_hex(x.get<std::string>()));
      return v;
    };
    s.omega = load(js.at("omega"));
    s.mpp = load(js.at("mpp"));
    s.nqq = load(js.at("nqq"));
    s.y = load(js.at("y"));
    prev_epoch_sample_ = s;
  }
  events_.clear();
}

}  // namespace mgrid
