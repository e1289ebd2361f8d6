#ifndef MGRID_DYNAMICS_HPP
#define MGRID_DYNAMICS_HPP

#include <array>
#include <complex>
#include <span>
#include <utility>
#include <vector>

#include "mgrid/consensus.hpp"

namespace mgrid {

/// Electrical parameters of one inverter-interfaced DG. f_sw is carried as
/// metadata only; the inverter is averaged, not switched.
struct DgParams {
  double r_f = 0.1;      // filter resistance (ohm)
  double l_f = 4e-3;     // filter inductance (H)
  double c_f = 200e-6;   // filter capacitance (F)
  double r_c = 0.1;      // coupling line resistance (ohm)
  double l_c = 1.5e-3;   // coupling line inductance (H)
  double m_p = 1e-4;     // frequency droop coefficient (rad/s per W)
  double n_q = 1e-4;     // voltage droop coefficient (V per var)
  double s_rating = 1e4; // apparent power rating (VA)
  double omega_n = 2.0 * 3.14159265358979323846 * 50.0;  // rad/s
  double v_odn = 380.0;  // nominal d-axis voltage (V)
  double v_dc = 1000.0;  // DC link voltage (V)
  double f_sw = 1e4;     // switching frequency (Hz), metadata
  int bus = 0;

  void validate() const;
};

struct ControlGains {
  double k_pv = 1.0;
  double k_iv = 400.0;
  double k_pi = 30.0;
  double k_ii = 20000.0;
  double k1 = 0.0;  // consensus gains; 0 means "derive at startup"
  double k2 = 0.0;

  void validate() const;
};

/// Continuous state of one DG: LC filter and coupling line currents and
/// voltages, control-loop integrators, filtered powers, secondary-control
/// corrections and the frame angle relative to the common reference.
struct DgState {
  double i_id = 0, i_iq = 0;
  double v_od = 0, v_oq = 0;
  double i_od = 0, i_oq = 0;
  double phi_d = 0, phi_q = 0;
  double gamma_d = 0, gamma_q = 0;
  double p = 0, q = 0;
  double delta_omega = 0, delta_v = 0;
  double delta_angle = 0;

  static constexpr int kDim = 15;
  void to_array(double* out) const;
  static DgState from_array(const double* in);
};

struct Line {
  int from_bus = 0, to_bus = 0;
  double r = 0, l = 0;
};

struct Load {
  int bus = 0;
  double r = 0, l = 0;
};

struct NetworkModel {
  int n_bus = 0;
  std::vector<Line> lines;
  std::vector<Load> loads;
  std::vector<int> dg_bus;  // bus index per DG

  void validate() const;
};

// ---- primary control and plant equations ------------------------------

struct DroopSetpoints {
  double omega_star = 0;
  double v_od_star = 0;
};

DroopSetpoints droop_setpoints(double p, double q, const DgParams& params, double delta_omega,
                               double delta_v);

/// Droop coefficients from deviation thresholds and power ratings:
/// m_P[k] * rating[k] == delta_omega_th for every k, likewise n_Q.
std::pair<std::vector<double>, std::vector<double>> compute_droop_coeffs(
    double delta_omega_th, double delta_v_th, std::span<const double> ratings);

struct VoltageLoopOut {
  double i_id_star = 0, i_iq_star = 0;
  double phi_dot_d = 0, phi_dot_q = 0;
};

VoltageLoopOut voltage_loop(const DgState& st, double omega, double v_od_star, double v_oq_star,
                            const ControlGains& gains, const DgParams& params);

struct CurrentLoopOut {
  double v_id_star = 0, v_iq_star = 0;
  double gamma_dot_d = 0, gamma_dot_q = 0;
};

CurrentLoopOut current_loop(const DgState& st, double omega, double i_id_star, double i_iq_star,
                            const ControlGains& gains, const DgParams& params);

/// d/dt of [i_id, i_iq, v_od, v_oq, i_od, i_oq].
std::array<double, 6> plant_derivatives(const DgState& st, double v_id, double v_iq, double v_bd,
                                        double v_bq, double omega, const DgParams& params);

/// First-order low-pass of the instantaneous powers, exact over dt.
std::pair<double, double> measure_power(double v_od, double v_oq, double i_od, double i_oq,
                                        double prev_p, double prev_q, double dt, double cutoff);

// ---- network ----------------------------------------------------------

/// Quasi-static phasor nodal solve at the common frequency. DG output
/// currents are injected in the common frame; the resulting bus voltage is
/// rotated back into each DG's local frame.
class NetworkSolver {
 public:
  NetworkSolver() = default;
  NetworkSolver(NetworkModel model, int n_dg);

  struct BusVoltages {
    std::vector<double> v_bd, v_bq;  // per DG, local frame
  };
  BusVoltages solve(std::span<const std::complex<double>> dg_currents_local,
                    std::span<const double> angles, double omega) const;

  /// Residual of the nodal current balance for the last admittance build,
  /// |Y v - i| per bus, normalized by injected current scale.
  double balance_residual(std::span<const std::complex<double>> dg_currents_local,
                          std::span<const double> angles, double omega) const;

  struct PowerAudit {
    double dg_injection_w = 0;  // power delivered into the buses by all DGs
    double load_w = 0;
    double line_loss_w = 0;
  };
  PowerAudit audit(std::span<const std::complex<double>> dg_currents_local,
                   std::span<const double> angles, double omega) const;

  const NetworkModel& model() const { return model_; }

 private:
  Eigen::MatrixXcd admittance(double omega) const;
  Eigen::VectorXcd injections(std::span<const std::complex<double>> dg_currents_local,
                              std::span<const double> angles) const;

  NetworkModel model_;
  int n_dg_ = 0;
};

// ---- full plant -------------------------------------------------------

struct SimTiming {
  double dt = 5e-5;
  double consensus_period = 0.01;
  double log_interval = 1e-3;
  double soft_start = 0.25;        // v_odn ramp-in time (s)
  double power_filter_cutoff = 31.4;
  double divergence_limit = 1e7;

  void validate() const;
};

/// The physical microgrid: N coupled DGs plus the quasi-static network,
/// advanced by fixed-step classical RK4. Neighbor data for the secondary
/// control is sampled externally every consensus tick and held between
/// ticks; own-state terms in the consensus rates stay continuous.
class MicrogridPlant {
 public:
  MicrogridPlant(std::vector<DgParams> params, ControlGains gains, NetworkModel network,
                 SimTiming timing);

  int n_dg() const { return static_cast<int>(params_.size()); }
  double time() const { return time_; }
  const DgState& dg(int k) const { return state_[k]; }
  DgState& dg_mutable(int k) { return state_[k]; }
  const std::vector<DgParams>& params() const { return params_; }
  const ControlGains& gains() const { return gains_; }
  const NetworkSolver& network() const { return network_; }
  const SimTiming& timing() const { return timing_; }

  /// Operating frequency of DG k given its current state.
  double omega_of(int k) const;
  /// True shared tuple (omega, m_P*P, n_Q*Q) of DG k.
  std::array<double, 3> shared_tuple(int k) const;

  void set_pinning(const Eigen::VectorXd& g) { pinning_ = g; }
  void set_consensus_gains(double k1, double k2);
  /// Replace the held neighbor data of DG k (already threat-filtered).
  void set_received(int k, std::vector<ReceivedTuple> tuples);

  /// One RK4 step of length timing().dt. Throws Error(divergence) with the
  /// simulation time when the state leaves the finite envelope.
  void step();
  /// Convenience: n steps.
  void advance(int n_steps);

  /// Instantaneous electrical output power (unfiltered), for audits.
  double instantaneous_p(int k) const;

  std::string snapshot_json() const;
  void restore_json(const std::string& snapshot);

 private:
  struct Derivative;
  void derivatives(const std::vector<DgState>& st, double t, std::vector<DgState>& out) const;
  double v_ref_ramp(double t) const;

  std::vector<DgParams> params_;
  ControlGains gains_;
  NetworkSolver network_;
  SimTiming timing_;
  Eigen::VectorXd pinning_;
  std::vector<DgState> state_;
  std::vector<std::vector<ReceivedTuple>> received_;
  double time_ = 0.0;
};

}  // namespace mgrid

#endif
