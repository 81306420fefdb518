#include "racebench/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "racebench/errors.hpp"
#include "racebench/track.hpp"

namespace racebench {

void VehicleParams::validate() const {
  const std::pair<const char*, double> positive[] = {
      {"m", m},         {"I_z", I_z},     {"l_f", l_f},         {"l_r", l_r},
      {"h_cg", h_cg},   {"mu", mu},       {"C_Sf", C_Sf},       {"C_Sr", C_Sr},
      {"w_car", w_car}, {"v_max", v_max}, {"a_max", a_max},     {"delta_max", delta_max},
      {"delta_rate_max", delta_rate_max}, {"k_v", k_v},         {"g", g},
      {"kin_relax_tau", kin_relax_tau},
  };
  for (const auto& [name, value] : positive) {
    if (!(value > 0.0) || !std::isfinite(value)) {
      throw ConfigError(std::string("vehicle.") + name + " must be positive");
    }
  }
  if (!(v_kin_low >= 0.0 && v_kin_high > v_kin_low)) {
    throw ConfigError("vehicle.v_kin_low/v_kin_high must satisfy 0 <= low < high");
  }
}

StateVector DynamicState::to_vector() const {
  StateVector v;
  v << s_x, s_y, psi, v_x, v_y, psi_dot, delta;
  return v;
}

DynamicState DynamicState::from_vector(const StateVector& v) {
  return {v[kSx], v[kSy], v[kPsi], v[kVx], v[kVy], v[kPsiDot], v[kDelta]};
}

bool DynamicState::finite() const { return to_vector().allFinite(); }

StateVector derivatives(const StateVector& x, double accel, double delta_rate, const VehicleParams& p) {
  const double psi = x[kPsi];
  const double vx = x[kVx];
  const double vy = x[kVy];
  const double r = x[kPsiDot];
  const double delta = x[kDelta];
  const double lwb = p.wheelbase();

  StateVector f;
  f[kSx] = vx * std::cos(psi) - vy * std::sin(psi);
  f[kSy] = vx * std::sin(psi) + vy * std::cos(psi);
  f[kPsi] = r;
  f[kDelta] = delta_rate;

  const double w = std::clamp((vx - p.v_kin_low) / (p.v_kin_high - p.v_kin_low), 0.0, 1.0);

  double dvx = 0.0;
  double dvy = 0.0;
  double dr = 0.0;
  if (w > 0.0) {
    const double fz_f = p.m * (p.g * p.l_r - accel * p.h_cg) / lwb;
    const double fz_r = p.m * (p.g * p.l_f + accel * p.h_cg) / lwb;
    const double alpha_f = delta - std::atan((vy + p.l_f * r) / vx);
    const double alpha_r = -std::atan((vy - p.l_r * r) / vx);
    const double fy_f = p.mu * p.C_Sf * fz_f * alpha_f;
    const double fy_r = p.mu * p.C_Sr * fz_r * alpha_r;
    const double cd = std::cos(delta);
    dvx += w * (accel + vy * r);
    dvy += w * ((fy_f * cd + fy_r) / p.m - vx * r);
    dr += w * ((p.l_f * fy_f * cd - p.l_r * fy_r) / p.I_z);
  }
  if (w < 1.0) {
    const double cd = std::cos(delta);
    const double r_kin = vx * std::tan(delta) / lwb;
    const double dr_kin = (accel * std::tan(delta) + vx * delta_rate / (cd * cd)) / lwb;
    const double k = 1.0 - w;
    dvx += k * accel;
    dvy += k * (p.l_r * dr_kin + (p.l_r * r_kin - vy) / p.kin_relax_tau);
    dr += k * (dr_kin + (r_kin - r) / p.kin_relax_tau);
  }
  f[kVx] = dvx;
  f[kVy] = dvy;
  f[kPsiDot] = dr;
  return f;
}

StateVector derivatives(const DynamicState& state, double accel, double delta_rate, const VehicleParams& params) {
  return derivatives(state.to_vector(), accel, delta_rate, params);
}

ActuatorCommand actuator_command(const DynamicState& state, const Action& action, const VehicleParams& p,
                                 double dt) {
  const double v_des = std::clamp(action.v_des, 0.0, p.v_max);
  const double delta_des = std::clamp(action.delta_des, -p.delta_max, p.delta_max);
  ActuatorCommand cmd;
  cmd.accel = std::clamp(p.k_v * (v_des - state.v_x), -p.a_max, p.a_max);
  cmd.delta_rate = std::clamp((delta_des - state.delta) / dt, -p.delta_rate_max, p.delta_rate_max);
  return cmd;
}

StateVector integrate_rk4(const StateVector& x, double accel, double delta_rate, const VehicleParams& p,
                          double dt) {
  const StateVector k1 = derivatives(x, accel, delta_rate, p);
  const StateVector k2 = derivatives(x + 0.5 * dt * k1, accel, delta_rate, p);
  const StateVector k3 = derivatives(x + 0.5 * dt * k2, accel, delta_rate, p);
  const StateVector k4 = derivatives(x + dt * k3, accel, delta_rate, p);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

DynamicState step(const DynamicState& state, const Action& action, const VehicleParams& p, double dt) {
  if (!state.finite()) throw SimulationFault("non-finite vehicle state");
  const ActuatorCommand cmd = actuator_command(state, action, p, dt);
  DynamicState next = DynamicState::from_vector(integrate_rk4(state.to_vector(), cmd.accel, cmd.delta_rate, p, dt));
  if (!next.finite()) throw SimulationFault("vehicle state became non-finite");
  next.psi = wrap_angle(next.psi);
  next.delta = std::clamp(next.delta, -p.delta_max, p.delta_max);
  next.v_x = std::clamp(next.v_x, 0.0, p.v_max);
  return next;
}

}  // namespace racebench
