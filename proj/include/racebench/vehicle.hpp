#pragma once

#include <Eigen/Core>

namespace racebench {

// Single-track vehicle with friction-scaled linear tires. Defaults describe a
// 1:10 scale car; only mu, w_car and v_max come from the benchmark setup,
// the rest are platform values.
struct VehicleParams {
  double m = 3.74;              // kg
  double I_z = 0.04712;         // kg m^2
  double l_f = 0.15875;         // m, CoG to front axle
  double l_r = 0.17145;         // m, CoG to rear axle
  double h_cg = 0.074;          // m
  double mu = 1.0489;
  double C_Sf = 4.718;          // 1/rad
  double C_Sr = 5.4562;         // 1/rad
  double w_car = 0.31;          // m
  double v_max = 10.0;          // m/s
  double a_max = 9.51;          // m/s^2
  double delta_max = 0.4189;    // rad
  double delta_rate_max = 3.2;  // rad/s
  double k_v = 2.0;             // 1/s, velocity tracking gain of the actuator layer
  double v_kin_low = 0.5;       // m/s, pure kinematic model below
  double v_kin_high = 1.0;      // m/s, pure dynamic model above
  double kin_relax_tau = 0.05;  // s, kinematic-regime relaxation of v_y and yaw rate
  double g = 9.81;

  double wheelbase() const { return l_f + l_r; }
  // Throws ConfigError on non-positive or inconsistent values.
  void validate() const;
};

// Index layout of StateVector.
enum StateIndex : int { kSx = 0, kSy, kPsi, kVx, kVy, kPsiDot, kDelta, kStateDim };

using StateVector = Eigen::Matrix<double, kStateDim, 1>;

struct DynamicState {
  double s_x = 0.0;
  double s_y = 0.0;
  double psi = 0.0;
  double v_x = 0.0;
  double v_y = 0.0;
  double psi_dot = 0.0;
  double delta = 0.0;  // actuator state, not observed by agents

  StateVector to_vector() const;
  static DynamicState from_vector(const StateVector& v);
  bool finite() const;
};

// What controllers and agents command.
struct Action {
  double v_des = 0.0;
  double delta_des = 0.0;
};

// What the dynamic model consumes.
struct ActuatorCommand {
  double accel = 0.0;
  double delta_rate = 0.0;
};

// Continuous-time state derivative. The dynamic (slip-angle) model is used
// above v_kin_high and the kinematic model below v_kin_low, linearly blended
// in between.
StateVector derivatives(const StateVector& x, double accel, double delta_rate, const VehicleParams& params);
StateVector derivatives(const DynamicState& state, double accel, double delta_rate,
                        const VehicleParams& params);

// First-order actuator layer: proportional velocity tracking and a
// rate-limited steering servo, both saturated.
ActuatorCommand actuator_command(const DynamicState& state, const Action& action, const VehicleParams& params,
                                 double dt);

// One classical RK4 step with inputs held constant over dt. No clamping.
StateVector integrate_rk4(const StateVector& x, double accel, double delta_rate, const VehicleParams& params,
                          double dt);

// One simulation step: actuator layer, RK4, then state invariants (wrapped
// yaw, steering within limits, no reverse). Throws SimulationFault on a
// non-finite result.
DynamicState step(const DynamicState& state, const Action& action, const VehicleParams& params,
                  double dt = 0.01);

}  // namespace racebench
