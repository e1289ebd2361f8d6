#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mgrid/common.hpp"
#include "mgrid/threat.hpp"

using namespace mgrid;

namespace {

Eigen::MatrixXd star_at(int center, int n) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    if (i != center) {
      s(center, i) = 1.0;
      s(i, center) = 1.0;
    }
  return s;
}

AttackStage stage_for(std::vector<int> dgs, double offset = 0.03) {
  AttackStage st;
  st.trigger = AttackStage::Trigger::at_time;
  st.at = 0.0;
  st.dgs = std::move(dgs);
  st.offsets = {offset, offset, offset};
  return st;
}

}  // namespace

TEST_CASE("stealth check is strict on the open interval") {
  StealthBounds b;  // +-0.05 on every channel
  CHECK(is_stealthy({0.0, 0.0, 0.0}, b));
  CHECK_FALSE(is_stealthy({0.05, 0.0, 0.0}, b));   // boundary excluded
  CHECK_FALSE(is_stealthy({0.0, -0.06, 0.0}, b));  // outside entirely
}

TEST_CASE("clamping pulls violations just inside the bounds") {
  StealthBounds b;
  bool clamped = false;
  const auto out = clamp_stealthy({0.2, -0.3, 0.01}, b, &clamped);
  CHECK(clamped);
  CHECK(is_stealthy(out, b));
  CHECK(out[2] == 0.01);
  bool untouched = true;
  const auto same = clamp_stealthy({0.01, 0.02, -0.03}, b, &untouched);
  CHECK_FALSE(untouched);
  CHECK(same[0] == 0.01);
}

TEST_CASE("initial game state has no compromised DGs") {
  AttackState st(4);
  CHECK_FALSE(st.any_active());
  for (int k = 0; k < 4; ++k) {
    CHECK(st.theta[k] == 0);
    CHECK(st.burned[k] == 0);
  }
}

TEST_CASE("activating a stage aims at the live links of the current topology") {
  AttackState st(4);
  AttackStage stage = stage_for({0});
  activate_stage(st, stage, star_at(0, 4), 2.0, nullptr);
  CHECK(st.theta[0] == 1);
  for (int l = 1; l < 4; ++l) CHECK(st.xi(0, l) == 1);
  CHECK(st.xi(1, 0) == 0);
}

TEST_CASE("activating a burned DG is skipped and logged") {
  AttackState st(4);
  remove_malware(st, 1);
  AttackStage stage = stage_for({1, 2});
  int skipped = 0;
  activate_stage(st, stage, star_at(0, 4), 2.0,
                 [&](double, const std::string& kind, const std::string&) {
                   if (kind == "stage_skipped") ++skipped;
                 });
  CHECK(skipped == 1);
  CHECK(st.theta[1] == 0);
  CHECK(st.theta[2] == 1);
}

TEST_CASE("simultaneous multi-DG activation matches the later-stage picture") {
  AttackState st(4);
  remove_malware(st, 0);
  AttackStage stage = stage_for({1, 2, 3});
  activate_stage(st, stage, star_at(1, 4), 3.0, nullptr);
  CHECK(st.theta == std::vector<std::uint8_t>{0, 1, 1, 1});
}

TEST_CASE("inject is identity with no compromise") {
  AttackState st(4);
  const std::array<double, 3> tuple{314.1, 0.2, 0.1};
  const auto out = inject(tuple, 0, 1, st, star_at(0, 4));
  CHECK(out == tuple);
}

TEST_CASE("inject offsets exactly the aimed link") {
  AttackState st(4);
  AttackStage stage = stage_for({0}, 0.03);
  const Eigen::MatrixXd s = star_at(0, 4);
  activate_stage(st, stage, s, 0.0, nullptr);
  const std::array<double, 3> tuple{314.1, 0.2, 0.1};
  const auto out = inject(tuple, 0, 1, st, s);
  CHECK(out[0] == doctest::Approx(314.13));
  CHECK(out[1] == doctest::Approx(0.23));
  CHECK(out[2] == doctest::Approx(0.13));
  // reverse direction not aimed
  CHECK(inject(tuple, 1, 0, st, s) == tuple);
}

TEST_CASE("manipulation requires the aimed link to be live on the topology") {
  AttackState st(4);
  AttackStage stage = stage_for({0});
  const Eigen::MatrixXd aim = star_at(0, 4);
  activate_stage(st, stage, aim, 0.0, nullptr);
  // defender switched to a tree where DG1 only talks to DG2 via DG2's star
  const Eigen::MatrixXd s_new = star_at(1, 4);
  const std::array<double, 3> tuple{314.1, 0.2, 0.1};
  // link (0,1) is in both the aim set and the new topology: still effective
  CHECK(inject(tuple, 0, 1, st, s_new)[0] == doctest::Approx(314.13));
  // link (0,2) was aimed but is no longer live
  CHECK(inject(tuple, 0, 2, st, s_new) == tuple);
}

TEST_CASE("malware removal burns permanently and is idempotent") {
  AttackState st(4);
  AttackStage stage = stage_for({0});
  activate_stage(st, stage, star_at(0, 4), 0.0, nullptr);
  remove_malware(st, 0);
  CHECK(st.theta == std::vector<std::uint8_t>{0, 0, 0, 0});
  CHECK(st.burned == std::vector<std::uint8_t>{1, 0, 0, 0});
  CHECK(st.xi.row(0).isZero());
  remove_malware(st, 0);
  CHECK(st.burned == std::vector<std::uint8_t>{1, 0, 0, 0});
  // re-activation attempt is a no-op
  AttackStage again = stage_for({0});
  activate_stage(st, again, star_at(0, 4), 1.0, nullptr);
  CHECK(st.theta[0] == 0);
}

TEST_CASE("driver activates stages on time and counts reveals") {
  AttackSchedule sched;
  sched.stages = {stage_for({0}), stage_for({1, 2})};
  sched.stages[0].at = 1.0;
  sched.stages[1].at = 2.0;
  AttackDriver driver(sched, StealthBounds{}, 4);
  const Eigen::MatrixXd s = star_at(0, 4);
  CHECK(driver.advance(0.5, s, nullptr) == 0);
  CHECK(driver.advance(1.0, s, nullptr) == 1);
  CHECK(driver.state().theta[0] == 1);
  CHECK(driver.advance(1.5, s, nullptr) == 0);
  CHECK(driver.advance(2.0, s, nullptr) == 2);
  CHECK_FALSE(driver.exhausted());
}

TEST_CASE("neutralization fires reactive stages after the quiet window") {
  AttackSchedule sched;
  sched.neutralize_window = 0.5;
  AttackStage first = stage_for({0});
  first.at = 1.0;
  AttackStage reactive = stage_for({1, 2, 3});
  reactive.trigger = AttackStage::Trigger::on_neutralized;
  reactive.watch_stage = 0;
  sched.stages = {first, reactive};
  AttackDriver driver(sched, StealthBounds{}, 4);
  const Eigen::MatrixXd s = star_at(0, 4);
  int revealed = 0;
  double fired_at = -1.0;
  for (int tick = 100; tick <= 250; ++tick) {
    const double t = 0.01 * tick;
    if (t > 1.199 && t < 1.201) remove_malware(driver.state_mutable(), 0);  // defender scan
    const int r = driver.advance(t, s, nullptr);
    if (r == 3 && fired_at < 0.0) fired_at = t;  // the reactive triple
    revealed += r;
  }
  CHECK(revealed == 4);  // DG 1 plus the three reactive DGs
  // last live tick before the burn is 1.19: the quiet window ends at 1.69
  CHECK(fired_at == doctest::Approx(1.69).epsilon(1e-6));
  CHECK(driver.state().theta == std::vector<std::uint8_t>{0, 1, 1, 1});
}

TEST_CASE("monotone burn and no resurrection over a whole schedule") {
  AttackSchedule sched;
  sched.stages = {stage_for({0}), stage_for({1})};
  sched.stages[0].at = 0.0;
  sched.stages[1].at = 1.0;
  AttackDriver driver(sched, StealthBounds{}, 4);
  const Eigen::MatrixXd s = star_at(0, 4);
  std::vector<std::uint8_t> burned_before;
  int activations = 0;
  for (double t = 0.0; t < 3.0; t += 0.1) {
    activations += driver.advance(t, s, nullptr);
    if (t > 0.4 && driver.state().theta[0]) remove_malware(driver.state_mutable(), 0);
    if (t > 1.4 && driver.state().theta[1]) remove_malware(driver.state_mutable(), 1);
    const auto& b = driver.state().burned;
    if (!burned_before.empty())
      for (int k = 0; k < 4; ++k) CHECK(b[k] >= burned_before[k]);
    burned_before = b;
    for (int k = 0; k < 4; ++k) {
      const bool active_and_burned = driver.state().theta[k] && b[k];
      CHECK_FALSE(active_and_burned);
    }
  }
  CHECK(activations == 2);
  CHECK(driver.exhausted());
}

TEST_CASE("schedule rejects decreasing activation times") {
  AttackSchedule sched;
  sched.stages = {stage_for({0}), stage_for({1})};
  sched.stages[0].at = 2.0;
  sched.stages[1].at = 1.0;
  CHECK_THROWS_AS(AttackDriver(sched, StealthBounds{}, 4), Error);
}

TEST_CASE("driver snapshot round-trips") {
  AttackSchedule sched;
  sched.stages = {stage_for({0}), stage_for({2})};
  sched.stages[0].at = 0.5;
  sched.stages[1].at = 1.5;
  AttackDriver a(sched, StealthBounds{}, 4);
  const Eigen::MatrixXd s = star_at(0, 4);
  a.advance(0.6, s, nullptr);
  remove_malware(a.state_mutable(), 0);
  const std::string snap = a.snapshot_json();
  AttackDriver b(sched, StealthBounds{}, 4);
  b.restore_json(snap);
  CHECK(b.snapshot_json() == snap);
  CHECK(b.state().burned[0] == 1);
}
