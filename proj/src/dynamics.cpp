#include "mgrid/dynamics.hpp"

#include <cmath>
#include <cstring>

#include "json.hpp"
#include "mgrid/common.hpp"

namespace mgrid {

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0)) throw Error(ErrorCode::config, std::string(name) + " must be > 0");
}

}  // namespace

void DgParams::validate() const {
  require_positive(r_f, "r_f");
  require_positive(l_f, "l_f");
  require_positive(c_f, "c_f");
  require_positive(r_c, "r_c");
  require_positive(l_c, "l_c");
  require_positive(m_p, "m_p");
  require_positive(n_q, "n_q");
  require_positive(s_rating, "s_rating");
  require_positive(omega_n, "omega_n");
  require_positive(v_dc, "v_dc");
  if (v_odn < 0.0) throw Error(ErrorCode::config, "v_odn must be >= 0");
}

void ControlGains::validate() const {
  require_positive(k_pv, "k_pv");
  require_positive(k_iv, "k_iv");
  require_positive(k_pi, "k_pi");
  require_positive(k_ii, "k_ii");
  if (k1 < 0.0) throw Error(ErrorCode::config, "k1 must be >= 0");
  if (k1 != k2) throw Error(ErrorCode::config, "consensus gains must satisfy k1 == k2");
}

void DgState::to_array(double* out) const {
  const double vals[kDim] = {i_id,    i_iq,    v_od,    v_oq,        i_od,
                             i_oq,    phi_d,   phi_q,   gamma_d,     gamma_q,
                             p,       q,       delta_omega, delta_v, delta_angle};
  std::memcpy(out, vals, sizeof vals);
}

DgState DgState::from_array(const double* in) {
  DgState s;
  s.i_id = in[0];
  s.i_iq = in[1];
  s.v_od = in[2];
  s.v_oq = in[3];
  s.i_od = in[4];
  s.i_oq = in[5];
  s.phi_d = in[6];
  s.phi_q = in[7];
  s.gamma_d = in[8];
  s.gamma_q = in[9];
  s.p = in[10];
  s.q = in[11];
  s.delta_omega = in[12];
  s.delta_v = in[13];
  s.delta_angle = in[14];
  return s;
}

void NetworkModel::validate() const {
  if (n_bus <= 0) throw Error(ErrorCode::config, "network needs at least one bus");
  auto check_bus = [&](int b, const char* what) {
    if (b < 0 || b >= n_bus)
      throw Error(ErrorCode::config, std::string(what) + " references bus out of range");
  };
  for (const Line& ln : lines) {
    check_bus(ln.from_bus, "line");
    check_bus(ln.to_bus, "line");
    if (ln.from_bus == ln.to_bus) throw Error(ErrorCode::config, "line connects a bus to itself");
    if (!(ln.r > 0.0) || !(ln.l >= 0.0))
      throw Error(ErrorCode::config, "line impedance must be positive");
  }
  bool any_load = false;
  for (const Load& ld : loads) {
    check_bus(ld.bus, "load");
    if (!(ld.r > 0.0) || !(ld.l >= 0.0))
      throw Error(ErrorCode::config, "load impedance must be positive");
    any_load = true;
  }
  if (!any_load) throw Error(ErrorCode::config, "network needs at least one load");
  for (int b : dg_bus) check_bus(b, "dg mapping");
  // connectivity over the line graph
  std::vector<char> seen(n_bus, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (const Line& ln : lines) {
      int v = -1;
      if (ln.from_bus == u) v = ln.to_bus;
      if (ln.to_bus == u) v = ln.from_bus;
      if (v >= 0 && !seen[v]) {
        seen[v] = 1;
        ++count;
        stack.push_back(v);
      }
    }
  }
  if (count != n_bus) throw Error(ErrorCode::config, "electrical network is not connected");
}

void SimTiming::validate() const {
  require_positive(dt, "dt");
  require_positive(consensus_period, "consensus_period");
  require_positive(log_interval, "log_interval");
  require_positive(power_filter_cutoff, "power_filter_cutoff");
  auto divides = [&](double big, double small, const char* what) {
    const double ratio = big / small;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio + 1e-12)
      throw Error(ErrorCode::config, std::string(what) + " must be an integer multiple of dt");
  };
  divides(consensus_period, dt, "consensus_period");
  divides(log_interval, dt, "log_interval");
}

DroopSetpoints droop_setpoints(double p, double q, const DgParams& params, double delta_omega,
                               double delta_v) {
  DroopSetpoints out;
  out.omega_star = params.omega_n - params.m_p * p + delta_omega;
  out.v_od_star = params.v_odn - params.n_q * q + delta_v;
  return out;
}

std::pair<std::vector<double>, std::vector<double>> compute_droop_coeffs(
    double delta_omega_th, double delta_v_th, std::span<const double> ratings) {
  require_positive(delta_omega_th, "delta_omega_th");
  require_positive(delta_v_th, "delta_v_th");
  std::vector<double> m_p, n_q;
  m_p.reserve(ratings.size());
  n_q.reserve(ratings.size());
  for (double r : ratings) {
    if (!(r > 0.0)) throw Error(ErrorCode::invalid_argument, "power rating must be > 0");
    m_p.push_back(delta_omega_th / r);
    n_q.push_back(delta_v_th / r);
  }
  return {std::move(m_p), std::move(n_q)};
}

VoltageLoopOut voltage_loop(const DgState& st, double omega, double v_od_star, double v_oq_star,
                            const ControlGains& gains, const DgParams& params) {
  VoltageLoopOut out;
  out.phi_dot_d = v_od_star - st.v_od;
  out.phi_dot_q = v_oq_star - st.v_oq;
  out.i_id_star = st.i_od - omega * params.c_f * st.v_oq + gains.k_pv * (v_od_star - st.v_od) +
                  gains.k_iv * st.phi_d;
  out.i_iq_star = st.i_oq + omega * params.c_f * st.v_od + gains.k_pv * (v_oq_star - st.v_oq) +
                  gains.k_iv * st.phi_q;
  return out;
}

CurrentLoopOut current_loop(const DgState& st, double omega, double i_id_star, double i_iq_star,
                            const ControlGains& gains, const DgParams& params) {
  CurrentLoopOut out;
  out.gamma_dot_d = i_id_star - st.i_id;
  out.gamma_dot_q = i_iq_star - st.i_iq;
  out.v_id_star = st.v_od - omega * params.l_f * st.i_iq + gains.k_pi * (i_id_star - st.i_id) +
                  gains.k_ii * st.gamma_d;
  out.v_iq_star = st.v_oq + omega * params.l_f * st.i_id + gains.k_pi * (i_iq_star - st.i_iq) +
                  gains.k_ii * st.gamma_q;
  return out;
}

std::array<double, 6> plant_derivatives(const DgState& st, double v_id, double v_iq, double v_bd,
                                        double v_bq, double omega, const DgParams& params) {
  std::array<double, 6> d;
  d[0] = -params.r_f / params.l_f * st.i_id + omega * st.i_iq + (v_id - st.v_od) / params.l_f;
  d[1] = -params.r_f / params.l_f * st.i_iq - omega * st.i_id + (v_iq - st.v_oq) / params.l_f;
  d[2] = omega * st.v_oq + (st.i_id - st.i_od) / params.c_f;
  d[3] = -omega * st.v_od + (st.i_iq - st.i_oq) / params.c_f;
  d[4] = -params.r_c / params.l_c * st.i_od + omega * st.i_oq + (st.v_od - v_bd) / params.l_c;
  d[5] = -params.r_c / params.l_c * st.i_oq - omega * st.i_od + (st.v_oq - v_bq) / params.l_c;
  return d;
}

std::pair<double, double> measure_power(double v_od, double v_oq, double i_od, double i_oq,
                                        double prev_p, double prev_q, double dt, double cutoff) {
  if (!(dt > 0.0)) throw Error(ErrorCode::invalid_argument, "measure_power needs dt > 0");
  const double p_inst = 1.5 * (v_od * i_od + v_oq * i_oq);
  const double q_inst = 1.5 * (v_oq * i_od - v_od * i_oq);
  const double a = std::exp(-cutoff * dt);
  return {p_inst + (prev_p - p_inst) * a, q_inst + (prev_q - q_inst) * a};
}

// ---- NetworkSolver -----------------------------------------------------

NetworkSolver::NetworkSolver(NetworkModel model, int n_dg) : model_(std::move(model)), n_dg_(n_dg) {
  model_.validate();
  if (static_cast<int>(model_.dg_bus.size()) != n_dg)
    throw Error(ErrorCode::config, "dg-to-bus mapping size mismatch");
  // reject a singular admittance up front
  const Eigen::MatrixXcd y = admittance(2.0 * M_PI * 50.0);
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(y);
  if (!lu.isInvertible())
    throw Error(ErrorCode::config, "singular network admittance matrix");
}

Eigen::MatrixXcd NetworkSolver::admittance(double omega) const {
  const int n = model_.n_bus;
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const Line& ln : model_.lines) {
    const std::complex<double> yl = 1.0 / std::complex<double>(ln.r, omega * ln.l);
    y(ln.from_bus, ln.from_bus) += yl;
    y(ln.to_bus, ln.to_bus) += yl;
    y(ln.from_bus, ln.to_bus) -= yl;
    y(ln.to_bus, ln.from_bus) -= yl;
  }
  for (const Load& ld : model_.loads)
    y(ld.bus, ld.bus) += 1.0 / std::complex<double>(ld.r, omega * ld.l);
  return y;
}

Eigen::VectorXcd NetworkSolver::injections(
    std::span<const std::complex<double>> dg_currents_local, std::span<const double> angles) const {
  Eigen::VectorXcd i = Eigen::VectorXcd::Zero(model_.n_bus);
  for (int k = 0; k < n_dg_; ++k) {
    const std::complex<double> rot(std::cos(angles[k]), std::sin(angles[k]));
    i(model_.dg_bus[k]) += dg_currents_local[k] * rot;
  }
  return i;
}

NetworkSolver::BusVoltages NetworkSolver::solve(
    std::span<const std::complex<double>> dg_currents_local, std::span<const double> angles,
    double omega) const {
  const Eigen::MatrixXcd y = admittance(omega);
  const Eigen::VectorXcd i = injections(dg_currents_local, angles);
  const Eigen::VectorXcd v = y.partialPivLu().solve(i);
  BusVoltages out;
  out.v_bd.resize(n_dg_);
  out.v_bq.resize(n_dg_);
  for (int k = 0; k < n_dg_; ++k) {
    const std::complex<double> rot(std::cos(-angles[k]), std::sin(-angles[k]));
    const std::complex<double> local = v(model_.dg_bus[k]) * rot;
    out.v_bd[k] = local.real();
    out.v_bq[k] = local.imag();
  }
  return out;
}

double NetworkSolver::balance_residual(std::span<const std::complex<double>> dg_currents_local,
                                       std::span<const double> angles, double omega) const {
  const Eigen::MatrixXcd y = admittance(omega);
  const Eigen::VectorXcd i = injections(dg_currents_local, angles);
  const Eigen::VectorXcd v = y.partialPivLu().solve(i);
  const double scale = std::max(1.0, i.norm());
  return (y * v - i).norm() / scale;
}

NetworkSolver::PowerAudit NetworkSolver::audit(
    std::span<const std::complex<double>> dg_currents_local, std::span<const double> angles,
    double omega) const {
  const Eigen::MatrixXcd y = admittance(omega);
  const Eigen::VectorXcd i = injections(dg_currents_local, angles);
  const Eigen::VectorXcd v = y.partialPivLu().solve(i);
  PowerAudit audit;
  for (int k = 0; k < n_dg_; ++k) {
    const std::complex<double> rot(std::cos(angles[k]), std::sin(angles[k]));
    const std::complex<double> inj = dg_currents_local[k] * rot;
    audit.dg_injection_w += 1.5 * (v(model_.dg_bus[k]) * std::conj(inj)).real();
  }
  for (const Load& ld : model_.loads) {
    const std::complex<double> yl = 1.0 / std::complex<double>(ld.r, omega * ld.l);
    audit.load_w += 1.5 * (std::norm(v(ld.bus)) * yl).real();
  }
  for (const Line& ln : model_.lines) {
    const std::complex<double> yl = 1.0 / std::complex<double>(ln.r, omega * ln.l);
    const std::complex<double> il = yl * (v(ln.from_bus) - v(ln.to_bus));
    audit.line_loss_w += 1.5 * std::norm(il) * ln.r;
  }
  return audit;
}

// ---- MicrogridPlant ----------------------------------------------------

MicrogridPlant::MicrogridPlant(std::vector<DgParams> params, ControlGains gains,
                               NetworkModel network, SimTiming timing)
    : params_(std::move(params)),
      gains_(gains),
      network_(std::move(network), static_cast<int>(params_.size())),
      timing_(timing) {
  if (params_.empty()) throw Error(ErrorCode::config, "at least one DG required");
  for (const DgParams& p : params_) p.validate();
  gains_.validate();
  timing_.validate();
  pinning_ = Eigen::VectorXd::Zero(n_dg());
  pinning_(0) = 1.0;
  state_.resize(params_.size());
  received_.resize(params_.size());
}

double MicrogridPlant::omega_of(int k) const {
  return params_[k].omega_n - params_[k].m_p * state_[k].p + state_[k].delta_omega;
}

std::array<double, 3> MicrogridPlant::shared_tuple(int k) const {
  return {omega_of(k), params_[k].m_p * state_[k].p, params_[k].n_q * state_[k].q};
}

void MicrogridPlant::set_consensus_gains(double k1, double k2) {
  gains_.k1 = k1;
  gains_.k2 = k2;
  gains_.validate();
}

void MicrogridPlant::set_received(int k, std::vector<ReceivedTuple> tuples) {
  received_[k] = std::move(tuples);
}

double MicrogridPlant::v_ref_ramp(double t) const {
  if (timing_.soft_start <= 0.0) return 1.0;
  if (t >= timing_.soft_start) return 1.0;
  return t / timing_.soft_start;
}

double MicrogridPlant::instantaneous_p(int k) const {
  const DgState& s = state_[k];
  return 1.5 * (s.v_od * s.i_od + s.v_oq * s.i_oq);
}

void MicrogridPlant::derivatives(const std::vector<DgState>& st, double t,
                                 std::vector<DgState>& out) const {
  const int n = n_dg();
  // operating frequencies from the droop law
  std::vector<double> omega(n);
  for (int k = 0; k < n; ++k)
    omega[k] = params_[k].omega_n - params_[k].m_p * st[k].p + st[k].delta_omega;
  const double omega_ref = omega[0];  // DG 1 defines the common frame

  std::vector<std::complex<double>> currents(n);
  std::vector<double> angles(n);
  for (int k = 0; k < n; ++k) {
    currents[k] = {st[k].i_od, st[k].i_oq};
    angles[k] = st[k].delta_angle;
  }
  const NetworkSolver::BusVoltages bus = network_.solve(currents, angles, omega_ref);

  const double ramp = v_ref_ramp(t);
  const double v_limit = 0.575 * params_[0].v_dc;  // averaged-model output ceiling

  for (int k = 0; k < n; ++k) {
    const DgParams& prm = params_[k];
    const DgState& s = st[k];
    DgState& d = out[k];

    DgParams ramped = prm;
    ramped.v_odn = prm.v_odn * ramp;
    const DroopSetpoints ref = droop_setpoints(s.p, s.q, ramped, s.delta_omega, s.delta_v);

    const VoltageLoopOut vl = voltage_loop(s, omega[k], ref.v_od_star, 0.0, gains_, prm);
    const CurrentLoopOut cl = current_loop(s, omega[k], vl.i_id_star, vl.i_iq_star, gains_, prm);

    double v_id = cl.v_id_star;
    double v_iq = cl.v_iq_star;
    const double v_mag = std::hypot(v_id, v_iq);
    if (v_mag > v_limit) {
      v_id *= v_limit / v_mag;
      v_iq *= v_limit / v_mag;
    }

    const std::array<double, 6> pd =
        plant_derivatives(s, v_id, v_iq, bus.v_bd[k], bus.v_bq[k], omega[k], prm);
    d.i_id = pd[0];
    d.i_iq = pd[1];
    d.v_od = pd[2];
    d.v_oq = pd[3];
    d.i_od = pd[4];
    d.i_oq = pd[5];
    d.phi_d = vl.phi_dot_d;
    d.phi_q = vl.phi_dot_q;
    d.gamma_d = cl.gamma_dot_d;
    d.gamma_q = cl.gamma_dot_q;

    const double p_inst = 1.5 * (s.v_od * s.i_od + s.v_oq * s.i_oq);
    const double q_inst = 1.5 * (s.v_oq * s.i_od - s.v_od * s.i_oq);
    d.p = timing_.power_filter_cutoff * (p_inst - s.p);
    d.q = timing_.power_filter_cutoff * (q_inst - s.q);

    const ConsensusRates rates =
        consensus_rates(received_[k], omega[k], prm.m_p * s.p, prm.n_q * s.q, pinning_(k),
                        gains_.k1, gains_.k2, prm.omega_n);
    d.delta_omega = rates.delta_omega_dot;
    d.delta_v = rates.delta_v_dot;
    d.delta_angle = omega[k] - omega_ref;
  }
}

void MicrogridPlant::step() {
  const int n = n_dg();
  const double h = timing_.dt;
  std::vector<DgState> k1(n), k2(n), k3(n), k4(n), tmp(n);

  auto axpy = [&](const std::vector<DgState>& base, const std::vector<DgState>& deriv,
                  double scale, std::vector<DgState>& dst) {
    double b[DgState::kDim], d[DgState::kDim];
    for (int i = 0; i < n; ++i) {
      base[i].to_array(b);
      deriv[i].to_array(d);
      for (int j = 0; j < DgState::kDim; ++j) b[j] += scale * d[j];
      dst[i] = DgState::from_array(b);
    }
  };

  derivatives(state_, time_, k1);
  axpy(state_, k1, h / 2.0, tmp);
  derivatives(tmp, time_ + h / 2.0, k2);
  axpy(state_, k2, h / 2.0, tmp);
  derivatives(tmp, time_ + h / 2.0, k3);
  axpy(state_, k3, h, tmp);
  derivatives(tmp, time_ + h, k4);

  double b[DgState::kDim], d1[DgState::kDim], d2[DgState::kDim], d3[DgState::kDim],
      d4[DgState::kDim];
  for (int i = 0; i < n; ++i) {
    state_[i].to_array(b);
    k1[i].to_array(d1);
    k2[i].to_array(d2);
    k3[i].to_array(d3);
    k4[i].to_array(d4);
    for (int j = 0; j < DgState::kDim; ++j)
      b[j] += h / 6.0 * (d1[j] + 2.0 * d2[j] + 2.0 * d3[j] + d4[j]);
    state_[i] = DgState::from_array(b);
  }
  time_ += h;

  for (int i = 0; i < n; ++i) {
    double vals[DgState::kDim];
    state_[i].to_array(vals);
    for (double v : vals) {
      if (!std::isfinite(v) || std::abs(v) > timing_.divergence_limit)
        throw Error(ErrorCode::divergence,
                    "simulation diverged at t = " + std::to_string(time_) + " s (dg " +
                        std::to_string(i + 1) + ")",
                    time_);
    }
  }
}

void MicrogridPlant::advance(int n_steps) {
  for (int i = 0; i < n_steps; ++i) step();
}

std::string MicrogridPlant::snapshot_json() const {
  nlohmann::json j;
  j["t"] = double_to_hex(time_);
  j["dgs"] = nlohmann::json::array();
  for (const DgState& s : state_) {
    double vals[DgState::kDim];
    s.to_array(vals);
    nlohmann::json arr = nlohmann::json::array();
    for (double v : vals) arr.push_back(double_to_hex(v));
    j["dgs"].push_back(std::move(arr));
  }
  j["received"] = nlohmann::json::array();
  for (const auto& list : received_) {
    nlohmann::json jl = nlohmann::json::array();
    for (const ReceivedTuple& r : list)
      jl.push_back({{"from", r.from},
                    {"omega", double_to_hex(r.omega)},
                    {"mpp", double_to_hex(r.mpp)},
                    {"nqq", double_to_hex(r.nqq)}});
    j["received"].push_back(std::move(jl));
  }
  return j.dump();
}

void MicrogridPlant::restore_json(const std::string& snapshot) {
  const nlohmann::json j = nlohmann::json::parse(snapshot);
  time_ = double_from_hex(j.at("t").get<std::string>());
  const auto& dgs = j.at("dgs");
  if (static_cast<int>(dgs.size()) != n_dg())
    throw Error(ErrorCode::config, "snapshot DG count mismatch");
  for (int i = 0; i < n_dg(); ++i) {
    double vals[DgState::kDim];
    for (int k = 0; k < DgState::kDim; ++k)
      vals[k] = double_from_hex(dgs[i][k].get<std::string>());
    state_[i] = DgState::from_array(vals);
  }
  const auto& rec = j.at("received");
  for (int i = 0; i < n_dg(); ++i) {
    received_[i].clear();
    for (const auto& jr : rec[i]) {
      ReceivedTuple r;
      r.from = jr.at("from").get<int>();
      r.omega = double_from_hex(jr.at("omega").get<std::string>());
      r.mpp = double_from_hex(jr.at("mpp").get<std::string>());
      r.nqq = double_from_hex(jr.at("nqq").get<std::string>());
      received_[i].push_back(r);
    }
  }
}

}  // namespace mgrid
