#ifndef MGRID_THREAT_HPP
#define MGRID_THREAT_HPP

#include <array>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mgrid {

/// Offset bounds per shared channel (omega, m_P*P, n_Q*Q). Injections must
/// stay strictly inside the open interval to evade bad-data labeling.
struct StealthBounds {
  std::array<double, 3> lo{-0.05, -0.05, -0.05};
  std::array<double, 3> hi{0.05, 0.05, 0.05};
};

/// Runtime state of the rootkit: which DGs currently transmit manipulated
/// measurements (theta), which links carry them (xi), which DGs have been
/// scanned and are permanently unusable (burned), and the per-DG channel
/// offsets applied on every live injected link.
struct AttackState {
  int n = 0;
  std::vector<std::uint8_t> theta;
  std::vector<std::uint8_t> burned;
  Eigen::MatrixXi xi;
  std::vector<std::array<double, 3>> x_a;
  StealthBounds bounds;

  explicit AttackState(int n_dgs = 0);
  bool any_active() const;
  void check_invariants() const;  // throws on violation
};

struct AttackStage {
  enum class Trigger { at_time, on_neutralized };
  Trigger trigger = Trigger::at_time;
  double at = 0.0;          // activation time for at_time
  int watch_stage = -1;     // stage index for on_neutralized
  double delay = 0.0;       // extra delay after the watched stage dies
  std::vector<int> dgs;     // DGs this stage activates
  std::array<double, 3> offsets{0.0, 0.0, 0.0};

  // runtime bookkeeping
  bool activated = false;
  bool neutralized = false;
  double activated_at = -1.0;
  double last_live = -1.0;  // last instant any of this stage's links was live
};

struct AttackSchedule {
  std::vector<AttackStage> stages;
  double neutralize_window = 0.5;  // no-effect time after which a stage counts as dead
};

using EventSink = std::function<void(double t, const std::string& kind, const std::string& what)>;

/// True iff strictly inside the open bounds interval on every channel.
bool is_stealthy(const std::array<double, 3>& x_a, const StealthBounds& bounds);

/// Clamp into the open interval, reporting whether clamping was needed.
std::array<double, 3> clamp_stealthy(const std::array<double, 3>& x_a, const StealthBounds& bounds,
                                     bool* clamped);

/// Mark the stage's DGs as actively transmitting manipulations and aim their
/// injection links at the links they currently hold on the live topology.
/// Burned DGs are skipped and reported through the sink.
void activate_stage(AttackState& state, AttackStage& stage, const Eigen::MatrixXd& s_current,
                    double now, const EventSink& events);

/// Offset applied to the tuple sent from `from` to `to`, if that link is an
/// active injection path on the current topology. Identity otherwise.
std::array<double, 3> inject(const std::array<double, 3>& tuple, int from, int to,
                             const AttackState& state, const Eigen::MatrixXd& s_current);

/// Malware scan: clears theta, burns the DG, zeroes its xi row and column.
/// Idempotent.
void remove_malware(AttackState& state, int dg);

/// Drive the schedule forward: activate pending stages whose trigger has
/// fired, update per-stage liveness, detect neutralization.
class AttackDriver {
 public:
  AttackDriver(AttackSchedule schedule, StealthBounds bounds, int n_dgs);

  /// Called every consensus tick before measurements are exchanged.
  /// Returns the number of DGs newly revealed at this tick.
  int advance(double now, const Eigen::MatrixXd& s_current, const EventSink& events);

  const AttackState& state() const { return state_; }
  AttackState& state_mutable() { return state_; }
  const AttackSchedule& schedule() const { return schedule_; }

  /// True when every stage has either run dead or can no longer fire.
  bool exhausted() const;

  std::string snapshot_json() const;
  void restore_json(const std::string& snapshot);

 private:
  AttackSchedule schedule_;
  AttackState state_;
};

}  // namespace mgrid

#endif
