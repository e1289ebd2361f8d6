#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mgrid/common.hpp"
#include "mgrid/dynamics.hpp"
#include "test_helpers.hpp"

using namespace mgrid;
using namespace mgrid::testing;

TEST_CASE("droop setpoints at no load sit on the nominals") {
  DgParams p;
  const DroopSetpoints out = droop_setpoints(0.0, 0.0, p, 0.0, 0.0);
  CHECK(out.omega_star == doctest::Approx(2.0 * M_PI * 50.0).epsilon(1e-12));
  CHECK(out.v_od_star == doctest::Approx(p.v_odn));
}

TEST_CASE("droop pulls frequency down with real power") {
  DgParams p;
  p.m_p = 1e-4;
  const DroopSetpoints out = droop_setpoints(10000.0, 0.0, p, 0.0, 0.0);
  CHECK(out.omega_star == doctest::Approx(p.omega_n - 1.0).epsilon(1e-12));
  CHECK(out.omega_star == doctest::Approx(313.1592653589793).epsilon(1e-10));
}

TEST_CASE("secondary correction cancels the droop offset") {
  DgParams p;
  p.m_p = 1e-4;
  const DroopSetpoints out = droop_setpoints(10000.0, 0.0, p, 1.0, 0.0);
  CHECK(out.omega_star == doctest::Approx(p.omega_n).epsilon(1e-12));
}

TEST_CASE("droop coefficients invert the thresholds") {
  const std::vector<double> ratings{10000.0};
  const auto [m_p, n_q] = compute_droop_coeffs(1.0, 1.0, ratings);
  CHECK(m_p[0] == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(n_q[0] == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("equal ratings give equal coefficients, double rating halves them") {
  const std::vector<double> ratings{10000.0, 10000.0, 20000.0};
  const auto [m_p, n_q] = compute_droop_coeffs(1.0, 1.0, ratings);
  CHECK(m_p[0] == m_p[1]);
  CHECK(m_p[0] == doctest::Approx(2.0 * m_p[2]));
  CHECK(n_q[0] == doctest::Approx(2.0 * n_q[2]));
}

TEST_CASE("droop coefficients reject non-positive ratings") {
  const std::vector<double> ratings{10000.0, 0.0};
  CHECK_THROWS_AS(compute_droop_coeffs(1.0, 1.0, ratings), Error);
}

TEST_CASE("voltage loop zero-error case emits zero current reference") {
  DgParams p;
  ControlGains g = default_gains(1.0);
  DgState st;
  st.v_od = 380.0;
  const VoltageLoopOut out = voltage_loop(st, p.omega_n, 380.0, 0.0, g, p);
  CHECK(out.i_id_star == doctest::Approx(0.0));
  CHECK(out.phi_dot_d == doctest::Approx(0.0));
}

TEST_CASE("voltage loop integrator rate is the tracking error") {
  DgParams p;
  ControlGains g = default_gains(1.0);
  DgState st;
  st.v_od = 370.0;
  const VoltageLoopOut out = voltage_loop(st, p.omega_n, 380.0, 0.0, g, p);
  CHECK(out.phi_dot_d == doctest::Approx(10.0));
}

TEST_CASE("voltage loop carries the capacitive cross-coupling") {
  DgParams p;
  ControlGains g = default_gains(1.0);
  DgState st;
  st.v_oq = 5.0;
  DgState base;
  const double with_q = voltage_loop(st, p.omega_n, 0.0, 0.0, g, p).i_id_star;
  const double without = voltage_loop(base, p.omega_n, 0.0, 0.0, g, p).i_id_star;
  CHECK(with_q - without == doctest::Approx(-p.omega_n * p.c_f * 5.0));
}

TEST_CASE("current loop zero-error case feeds the output voltage forward") {
  DgParams p;
  ControlGains g = default_gains(1.0);
  DgState st;
  st.i_id = 3.0;
  st.v_od = 380.0;
  const CurrentLoopOut out = current_loop(st, p.omega_n, 3.0, 0.0, g, p);
  CHECK(out.v_id_star == doctest::Approx(380.0));
  CHECK(out.gamma_dot_d == doctest::Approx(0.0));
}

TEST_CASE("current loop integrator rate tracks the inverter current error") {
  DgParams p;
  ControlGains g = default_gains(1.0);
  DgState st;
  st.i_id = 1.0;
  const CurrentLoopOut out = current_loop(st, p.omega_n, 4.0, 0.0, g, p);
  CHECK(out.gamma_dot_d == doctest::Approx(3.0));
}

TEST_CASE("current loop carries the inductive cross-coupling") {
  DgParams p;
  ControlGains g = default_gains(1.0);
  DgState st;
  st.i_iq = 2.0;
  DgState base;
  const double with_q = current_loop(st, p.omega_n, 0.0, 0.0, g, p).v_id_star;
  const double without = current_loop(base, p.omega_n, 0.0, 0.0, g, p).v_id_star;
  CHECK(with_q - without == doctest::Approx(-p.omega_n * p.l_f * 2.0));
}

TEST_CASE("plant derivatives vanish on the zero state with zero inputs") {
  DgParams p;
  DgState st;
  const auto d = plant_derivatives(st, 0.0, 0.0, 0.0, 0.0, p.omega_n, p);
  for (double v : d) CHECK(v == 0.0);
}

TEST_CASE("filter coefficient equals -R_f/L_f") {
  DgParams p;  // 0.1 ohm, 4 mH
  DgState st;
  st.i_id = 1.0;
  const auto d = plant_derivatives(st, 0.0, 0.0, 0.0, 0.0, 0.0, p);
  CHECK(d[0] == doctest::Approx(-25.0));
}

TEST_CASE("derivative responds linearly to an inverter current perturbation") {
  DgParams p;
  DgState st;
  st.i_id = 0.7;
  st.v_od = 11.0;
  const auto base = plant_derivatives(st, 1.0, 2.0, 3.0, 4.0, p.omega_n, p);
  DgState bumped = st;
  bumped.i_id += 1.0;
  const auto bump = plant_derivatives(bumped, 1.0, 2.0, 3.0, 4.0, p.omega_n, p);
  CHECK(bump[0] - base[0] == doctest::Approx(-p.r_f / p.l_f).epsilon(1e-9));
}

TEST_CASE("power measurement decays to zero with no current") {
  auto [p1, q1] = measure_power(380.0, 0.0, 0.0, 0.0, 100.0, 50.0, 0.1, 31.4);
  CHECK(p1 < 100.0);
  CHECK(q1 < 50.0);
  CHECK(p1 == doctest::Approx(100.0 * std::exp(-3.14)));
  auto [p2, q2] = measure_power(380.0, 0.0, 0.0, 0.0, p1, q1, 10.0, 31.4);
  CHECK(p2 == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(q2 == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("steady power measurement matches the instantaneous formula") {
  double p = 0.0, q = 0.0;
  for (int i = 0; i < 400; ++i)
    std::tie(p, q) = measure_power(380.0, 0.0, 10.0, 0.0, p, q, 0.01, 31.4);
  CHECK(p == doctest::Approx(1.5 * 380.0 * 10.0).epsilon(1e-6));
  CHECK(q == doctest::Approx(0.0));
}

TEST_CASE("power filter settles within 2 percent after 4 time constants") {
  const double cutoff = 31.4;
  auto [p, q] = measure_power(380.0, 0.0, 10.0, 0.0, 0.0, 0.0, 4.0 / cutoff, cutoff);
  (void)q;
  const double target = 1.5 * 380.0 * 10.0;
  CHECK(std::abs(p - target) / target < 0.02);
}

TEST_CASE("network solve: zero injection gives zero bus voltages") {
  NetworkSolver solver(default_network(), 4);
  std::vector<std::complex<double>> cur(4, {0.0, 0.0});
  std::vector<double> ang(4, 0.0);
  const auto out = solver.solve(cur, ang, 314.159);
  for (int k = 0; k < 4; ++k) {
    CHECK(out.v_bd[k] == doctest::Approx(0.0));
    CHECK(out.v_bq[k] == doctest::Approx(0.0));
  }
}

TEST_CASE("network solve: single DG with a resistive load obeys Ohm's law") {
  NetworkModel net;
  net.n_bus = 1;
  net.loads = {{0, 12.5, 0.0}};
  net.dg_bus = {0};
  NetworkSolver solver(net, 1);
  std::vector<std::complex<double>> cur{{2.0, 0.0}};
  std::vector<double> ang{0.0};
  const auto out = solver.solve(cur, ang, 314.159);
  CHECK(out.v_bd[0] == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(out.v_bq[0] == doctest::Approx(0.0));
}

TEST_CASE("network current balance residual stays below 1e-9") {
  NetworkSolver solver(default_network(), 4);
  std::vector<std::complex<double>> cur{{3.0, -1.0}, {2.5, 0.5}, {1.0, 2.0}, {-0.5, 1.5}};
  std::vector<double> ang{0.0, 0.01, -0.02, 0.005};
  CHECK(solver.balance_residual(cur, ang, 314.159) < 1e-9);
}

TEST_CASE("network audit balances injection against load and losses") {
  NetworkSolver solver(default_network(), 4);
  std::vector<std::complex<double>> cur{{4.0, -0.5}, {3.5, 0.2}, {4.2, 0.1}, {3.8, -0.3}};
  std::vector<double> ang{0.0, 0.004, -0.003, 0.001};
  const auto audit = solver.audit(cur, ang, 314.159);
  CHECK(audit.dg_injection_w ==
        doctest::Approx(audit.load_w + audit.line_loss_w).epsilon(1e-9));
}

TEST_CASE("frame consistency: common rotation leaves local bus voltages unchanged") {
  NetworkSolver solver(default_network(), 4);
  std::vector<std::complex<double>> cur{{4.0, -0.5}, {3.5, 0.2}, {4.2, 0.1}, {3.8, -0.3}};
  std::vector<double> ang{0.0, 0.004, -0.003, 0.001};
  const auto base = solver.solve(cur, ang, 314.159);
  std::vector<double> shifted = ang;
  for (double& a : shifted) a += 0.77;
  const auto rolled = solver.solve(cur, shifted, 314.159);
  for (int k = 0; k < 4; ++k) {
    CHECK(rolled.v_bd[k] == doctest::Approx(base.v_bd[k]).epsilon(1e-9));
    CHECK(rolled.v_bq[k] == doctest::Approx(base.v_bq[k]).epsilon(1e-9));
  }
  const auto audit_a = solver.audit(cur, ang, 314.159);
  const auto audit_b = solver.audit(cur, shifted, 314.159);
  CHECK(audit_a.load_w == doctest::Approx(audit_b.load_w).epsilon(1e-9));
}

TEST_CASE("singular admittance is rejected at construction") {
  NetworkModel net;
  net.n_bus = 2;
  net.lines = {{0, 1, 0.1, 1e-3}};
  net.loads = {};  // no load anywhere
  net.dg_bus = {0, 1};
  CHECK_THROWS_AS(NetworkSolver(net, 2), Error);
}

namespace {

MicrogridPlant make_plant(double k = 30.0, SimTiming timing = SimTiming{}) {
  MicrogridPlant plant(default_dg_params(), default_gains(k), default_network(), timing);
  plant.set_pinning(default_pinning());
  for (int i = 0; i < 4; ++i) plant.set_received(i, {});
  return plant;
}

void exchange_all(MicrogridPlant& plant) {
  for (int k = 0; k < plant.n_dg(); ++k) {
    std::vector<ReceivedTuple> recv;
    for (int l = 0; l < plant.n_dg(); ++l)
      if (l != k) {
        const auto t = plant.shared_tuple(l);
        recv.push_back({l, t[0], t[1], t[2]});
      }
    plant.set_received(k, std::move(recv));
  }
}

}  // namespace

TEST_CASE("zero-dynamics fixed point maps to itself") {
  std::vector<DgParams> params = default_dg_params();
  for (DgParams& p : params) p.v_odn = 0.0;  // reference at the origin
  SimTiming timing;
  timing.soft_start = 0.0;
  MicrogridPlant plant(params, default_gains(10.0), default_network(), timing);
  plant.set_pinning(Eigen::VectorXd::Zero(4));
  for (int i = 0; i < 4; ++i) plant.set_received(i, {});
  plant.advance(50);
  for (int k = 0; k < 4; ++k) {
    double vals[DgState::kDim];
    plant.dg(k).to_array(vals);
    for (double v : vals) CHECK(v == 0.0);
  }
}

TEST_CASE("stepping is deterministic") {
  MicrogridPlant a = make_plant();
  MicrogridPlant b = make_plant();
  a.advance(4000);
  b.advance(4000);
  CHECK(a.snapshot_json() == b.snapshot_json());
}

TEST_CASE("snapshot round-trips bit-exactly") {
  MicrogridPlant a = make_plant();
  a.advance(3000);
  const std::string snap = a.snapshot_json();
  MicrogridPlant b = make_plant();
  b.restore_json(snap);
  CHECK(b.snapshot_json() == snap);
  a.advance(500);
  b.advance(500);
  CHECK(a.snapshot_json() == b.snapshot_json());
}

TEST_CASE("divergent state raises a time-stamped error") {
  MicrogridPlant plant = make_plant();
  plant.advance(10);
  plant.dg_mutable(0).v_od = 1e9;
  try {
    plant.advance(100);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::divergence);
    CHECK(e.sim_time() > 0.0);
  }
}

TEST_CASE("integration error shrinks at fourth order") {
  // probe mid-transient where the trajectory still has strong dynamic
  // content, right after a consensus exchange so the window is smooth
  MicrogridPlant warm = make_plant();
  for (int tick = 0; tick < 30; ++tick) {
    exchange_all(warm);
    warm.advance(200);  // 10 ms at dt = 5e-5
  }
  exchange_all(warm);
  const std::string snap = warm.snapshot_json();

  auto run_with_dt = [&](double dt, double horizon) {
    SimTiming t;
    t.dt = dt;
    MicrogridPlant p(default_dg_params(), default_gains(30.0), default_network(), t);
    p.set_pinning(default_pinning());
    p.restore_json(snap);
    p.advance(static_cast<int>(std::round(horizon / dt)));
    Eigen::VectorXd out(4 * DgState::kDim);
    for (int k = 0; k < 4; ++k) {
      double vals[DgState::kDim];
      p.dg(k).to_array(vals);
      for (int j = 0; j < DgState::kDim; ++j) out(k * DgState::kDim + j) = vals[j];
    }
    return out;
  };

  const double horizon = 5e-3;  // inside one consensus hold interval
  const Eigen::VectorXd x1 = run_with_dt(5e-5, horizon);
  const Eigen::VectorXd x2 = run_with_dt(2.5e-5, horizon);
  const Eigen::VectorXd ref = run_with_dt(3.125e-6, horizon);
  const double e1 = (x1 - ref).norm();
  const double e2 = (x2 - ref).norm();
  REQUIRE(e2 > 0.0);
  const double order = std::log2(e1 / e2);
  CHECK(order > 3.5);
  CHECK(order < 4.5);
}

TEST_CASE("nominal startup settles under the synchronization bounds within 2 s") {
  MicrogridPlant plant = make_plant(36.0);
  for (int tick = 0; tick < 200; ++tick) {  // 2 s of 10 ms ticks
    exchange_all(plant);
    plant.advance(200);
  }
  for (int k = 0; k < 4; ++k)
    CHECK(std::abs(plant.omega_of(k) - plant.params()[k].omega_n) < 1e-3);
  double lo = 1e9, hi = -1e9;
  for (int k = 0; k < 4; ++k) {
    const double mpp = plant.params()[k].m_p * plant.dg(k).p;
    lo = std::min(lo, mpp);
    hi = std::max(hi, mpp);
  }
  CHECK(hi - lo < 0.01);
}

TEST_CASE("droop shares power consistently without secondary control") {
  MicrogridPlant plant = make_plant(0.0);  // secondary disabled
  plant.advance(80000);                    // 4 s
  double lo = 1e9, hi = -1e9;
  for (int k = 0; k < 4; ++k) {
    const double mpp = plant.params()[k].m_p * plant.dg(k).p;
    lo = std::min(lo, mpp);
    hi = std::max(hi, mpp);
  }
  CHECK(hi - lo < 0.01 * std::abs(hi));  // within 1 percent of each other
  // residual droop persists: frequency sits off nominal
  CHECK(std::abs(plant.omega_of(0) - plant.params()[0].omega_n) > 1e-3);
}

TEST_CASE("steady-state power balances against load plus losses within 0.5 percent") {
  MicrogridPlant plant = make_plant(36.0);
  for (int tick = 0; tick < 300; ++tick) {
    exchange_all(plant);
    plant.advance(200);
  }
  double p_dg = 0.0, p_rc = 0.0;
  std::vector<std::complex<double>> cur(4);
  std::vector<double> ang(4);
  for (int k = 0; k < 4; ++k) {
    p_dg += plant.dg(k).p;
    const DgState& s = plant.dg(k);
    p_rc += 1.5 * (s.i_od * s.i_od + s.i_oq * s.i_oq) * plant.params()[k].r_c;
    cur[k] = {s.i_od, s.i_oq};
    ang[k] = s.delta_angle;
  }
  const auto audit = plant.network().audit(cur, ang, plant.omega_of(0));
  const double consumed = audit.load_w + audit.line_loss_w + p_rc;
  CHECK(std::abs(p_dg - consumed) / consumed < 0.005);
}
