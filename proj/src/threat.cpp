#include "mgrid/threat.hpp"

#include <cmath>

#include "json.hpp"
#include "mgrid/common.hpp"

namespace mgrid {

AttackState::AttackState(int n_dgs)
    : n(n_dgs),
      theta(n_dgs, 0),
      burned(n_dgs, 0),
      xi(Eigen::MatrixXi::Zero(n_dgs, n_dgs)),
      x_a(n_dgs, {0.0, 0.0, 0.0}) {}

bool AttackState::any_active() const {
  for (std::uint8_t t : theta)
    if (t) return true;
  return false;
}

void AttackState::check_invariants() const {
  for (int k = 0; k < n; ++k) {
    if (burned[k] && theta[k])
      throw Error(ErrorCode::internal, "burned DG still flagged active");
    if (!theta[k] && xi.row(k).any())
      throw Error(ErrorCode::internal, "injection links without active theta");
    if (theta[k] && !is_stealthy(x_a[k], bounds))
      throw Error(ErrorCode::internal, "active injection outside stealth bounds");
  }
}

bool is_stealthy(const std::array<double, 3>& x_a, const StealthBounds& bounds) {
  for (int c = 0; c < 3; ++c)
    if (!(x_a[c] > bounds.lo[c] && x_a[c] < bounds.hi[c])) return false;
  return true;
}

std::array<double, 3> clamp_stealthy(const std::array<double, 3>& x_a,
                                     const StealthBounds& bounds, bool* clamped) {
  std::array<double, 3> out = x_a;
  bool any = false;
  for (int c = 0; c < 3; ++c) {
    // pull violations just inside the open interval
    const double span = bounds.hi[c] - bounds.lo[c];
    const double margin = 1e-9 * span;
    if (out[c] >= bounds.hi[c]) {
      out[c] = bounds.hi[c] - margin;
      any = true;
    } else if (out[c] <= bounds.lo[c]) {
      out[c] = bounds.lo[c] + margin;
      any = true;
    }
  }
  if (clamped) *clamped = any;
  return out;
}

void activate_stage(AttackState& state, AttackStage& stage, const Eigen::MatrixXd& s_current,
                    double now, const EventSink& events) {
  stage.activated = true;
  stage.activated_at = now;
  stage.last_live = now;
  for (int dg : stage.dgs) {
    if (dg < 0 || dg >= state.n) throw Error(ErrorCode::config, "attack stage DG out of range");
    if (state.burned[dg]) {
      if (events)
        events(now, "stage_skipped",
               "dg " + std::to_string(dg + 1) + " already burned; vector unusable");
      continue;
    }
    bool clamped = false;
    state.x_a[dg] = clamp_stealthy(stage.offsets, state.bounds, &clamped);
    if (clamped && events)
      events(now, "offset_clamped",
             "dg " + std::to_string(dg + 1) + " injection pulled inside stealth bounds");
    state.theta[dg] = 1;
    // aim at the links this DG holds on the live topology right now
    for (int l = 0; l < state.n; ++l)
      state.xi(dg, l) = (l != dg && s_current(dg, l) != 0.0) ? 1 : 0;
    if (events) events(now, "stage_activated", "dg " + std::to_string(dg + 1) + " transmitting");
  }
}

std::array<double, 3> inject(const std::array<double, 3>& tuple, int from, int to,
                             const AttackState& state, const Eigen::MatrixXd& s_current) {
  if (from < 0 || from >= state.n || !state.theta[from]) return tuple;
  if (!state.xi(from, to)) return tuple;
  if (s_current(from, to) == 0.0) return tuple;  // injection path not live
  std::array<double, 3> out = tuple;
  for (int c = 0; c < 3; ++c) out[c] += state.x_a[from][c];
  return out;
}

void remove_malware(AttackState& state, int dg) {
  if (dg < 0 || dg >= state.n) return;
  state.theta[dg] = 0;
  state.burned[dg] = 1;
  state.xi.row(dg).setZero();
  state.xi.col(dg).setZero();
  state.x_a[dg] = {0.0, 0.0, 0.0};
}

AttackDriver::AttackDriver(AttackSchedule schedule, StealthBounds bounds, int n_dgs)
    : schedule_(std::move(schedule)), state_(n_dgs) {
  state_.bounds = bounds;
  double prev = 0.0;
  for (const AttackStage& st : schedule_.stages) {
    if (st.trigger == AttackStage::Trigger::at_time) {
      if (st.at < prev)
        throw Error(ErrorCode::config, "attack stage activation times must be nondecreasing");
      prev = st.at;
    } else if (st.watch_stage < 0 || st.watch_stage >= static_cast<int>(schedule_.stages.size())) {
      throw Error(ErrorCode::config, "attack stage watches an unknown stage");
    }
  }
}

int AttackDriver::advance(double now, const Eigen::MatrixXd& s_current, const EventSink& events) {
  // liveness and neutralization bookkeeping first
  for (auto& stage : schedule_.stages) {
    if (!stage.activated || stage.neutralized) continue;
    bool live = false;
    for (int dg : stage.dgs) {
      if (!state_.theta[dg]) continue;
      for (int l = 0; l < state_.n && !live; ++l)
        if (state_.xi(dg, l) && s_current(dg, l) != 0.0) live = true;
      if (live) break;
    }
    if (live) stage.last_live = now;
    if (!live && now - stage.last_live >= schedule_.neutralize_window) {
      stage.neutralized = true;
      if (events) events(now, "stage_neutralized", "injected channels dead for " +
                                                       std::to_string(schedule_.neutralize_window) +
                                                       " s");
    }
  }

  int revealed = 0;
  for (std::size_t i = 0; i < schedule_.stages.size(); ++i) {
    AttackStage& stage = schedule_.stages[i];
    if (stage.activated) continue;
    bool fire = false;
    // half-nanosecond slack absorbs accumulated rounding in the sim clock
    if (stage.trigger == AttackStage::Trigger::at_time) {
      fire = now >= stage.at - 1e-9;
    } else {
      const AttackStage& watched = schedule_.stages[stage.watch_stage];
      fire = watched.neutralized &&
             now >= watched.last_live + schedule_.neutralize_window + stage.delay - 1e-9;
    }
    if (!fire) continue;
    for (int dg : stage.dgs)
      if (!state_.burned[dg] && !state_.theta[dg]) ++revealed;
    activate_stage(state_, stage, s_current, now, events);
  }
  state_.check_invariants();
  return revealed;
}

bool AttackDriver::exhausted() const {
  if (schedule_.stages.empty()) return false;  // nothing to exhaust
  for (const AttackStage& stage : schedule_.stages) {
    if (!stage.activated) return false;
    for (int dg : stage.dgs)
      if (state_.theta[dg]) return false;
  }
  return true;
}

std::string AttackDriver::snapshot_json() const {
  nlohmann::json j;
  j["theta"] = state_.theta;
  j["burned"] = state_.burned;
  nlohmann::json jxi = nlohmann::json::array();
  for (int r = 0; r < state_.n; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < state_.n; ++c) row.push_back(state_.xi(r, c));
    jxi.push_back(std::move(row));
  }
  j["xi"] = std::move(jxi);
  nlohmann::json jxa = nlohmann::json::array();
  for (const auto& xa : state_.x_a)
    jxa.push_back({double_to_hex(xa[0]), double_to_hex(xa[1]), double_to_hex(xa[2])});
  j["x_a"] = std::move(jxa);
  nlohmann::json jst = nlohmann::json::array();
  for (const AttackStage& s : schedule_.stages)
    jst.push_back({{"activated", s.activated},
                   {"neutralized", s.neutralized},
                   {"activated_at", double_to_hex(s.activated_at)},
                   {"last_live", double_to_hex(s.last_live)}});
  j["stages"] = std::move(jst);
  return j.dump();
}

void AttackDriver::restore_json(const std::string& snapshot) {
  const nlohmann::json j = nlohmann::json::parse(snapshot);
  state_.theta = j.at("theta").get<std::vector<std::uint8_t>>();
  state_.burned = j.at("burned").get<std::vector<std::uint8_t>>();
  const auto& jxi = j.at("xi");
  for (int r = 0; r < state_.n; ++r)
    for (int c = 0; c < state_.n; ++c) state_.xi(r, c) = jxi[r][c].get<int>();
  const auto& jxa = j.at("x_a");
  for (int k = 0; k < state_.n; ++k)
    for (int c = 0; c < 3; ++c)
      state_.x_a[k][c] = double_from_hex(jxa[k][c].get<std::string>());
  const auto& jst = j.at("stages");
  if (jst.size() != schedule_.stages.size())
    throw Error(ErrorCode::config, "snapshot stage count mismatch");
  for (std::size_t i = 0; i < schedule_.stages.size(); ++i) {
    AttackStage& s = schedule_.stages[i];
    s.activated = jst[i].at("activated").get<bool>();
    s.neutralized = jst[i].at("neutralized").get<bool>();
    s.activated_at = double_from_hex(jst[i].at("activated_at").get<std::string>());
    s.last_live = double_from_hex(jst[i].at("last_live").get<std::string>());
  }
}

}  // namespace mgrid
