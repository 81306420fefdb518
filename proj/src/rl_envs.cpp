#include "racebench/rl_envs.hpp"

#include <cmath>
#include <numbers>

#include "racebench/errors.hpp"

namespace racebench {

RacingRlEnv::RacingRlEnv(std::shared_ptr<const TrackGeometry> track, VehicleParams params, EnvConfig config)
    : env_(std::move(track), params, std::move(config)) {}

Eigen::VectorXd RacingRlEnv::reset(std::uint64_t seed) {
  const auto r = env_.reset(seed);
  return env_.features(r.outcome.observation);
}

RlStep RacingRlEnv::step(const Eigen::VectorXd& action) {
  if (action.size() != 2) throw UsageError("racing env expects a 2-D action");
  const StepOutcome out = env_.step(env_.action_from_normalized(action[0], action[1]));
  RlStep s;
  s.obs = env_.features(out.observation);
  s.reward = out.reward;
  s.terminal = out.info.crashed;
  s.truncated = out.done && !out.info.crashed;
  s.lap_complete = out.info.lap_complete;
  return s;
}

PointMassEnv::PointMassEnv(PointMassConfig config) : config_(config) {
  if (!(config_.radius > config_.crash_offset) || !(config_.dt > 0.0) || config_.max_steps < 1 ||
      !(config_.a_max > 0.0) || !(config_.v_max > 0.0) || config_.lookahead_points < 1) {
    throw ConfigError("invalid point-mass configuration");
  }
}

double PointMassEnv::offset() const { return config_.radius - pos_.norm(); }

Eigen::VectorXd PointMassEnv::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double angle = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const Eigen::Vector2d radial(std::cos(angle), std::sin(angle));
  pos_ = config_.radius * radial;
  vel_ = config_.start_speed * Eigen::Vector2d(-radial.y(), radial.x());
  steps_ = 0;
  return observe();
}

Eigen::VectorXd PointMassEnv::observe() const {
  const double r = pos_.norm();
  const Eigen::Vector2d e_r = pos_ / r;
  const Eigen::Vector2d e_t(-e_r.y(), e_r.x());
  const double phi = std::atan2(pos_.y(), pos_.x());
  const double reach = config_.lookahead_points * config_.lookahead_spacing;
  Eigen::VectorXd obs(obs_dim());
  for (int k = 0; k < config_.lookahead_points; ++k) {
    const double ang = phi + (k + 1) * config_.lookahead_spacing / config_.radius;
    const Eigen::Vector2d d = config_.radius * Eigen::Vector2d(std::cos(ang), std::sin(ang)) - pos_;
    // Local frame: x along the path tangent, y to the left (toward the center).
    obs[2 * k] = d.dot(e_t) / reach;
    obs[2 * k + 1] = -d.dot(e_r) / reach;
  }
  obs[2 * config_.lookahead_points] = vel_.dot(e_t) / config_.v_max;
  obs[2 * config_.lookahead_points + 1] = -vel_.dot(e_r) / config_.v_max;
  return obs;
}

RlStep PointMassEnv::step(const Eigen::VectorXd& action) {
  if (action.size() != 2) throw UsageError("point-mass env expects a 2-D action");
  const Eigen::Vector2d e_r = pos_.normalized();
  const Eigen::Vector2d e_t(-e_r.y(), e_r.x());
  const double a_t = std::clamp(action[0], -1.0, 1.0) * config_.a_max;
  const double a_n = std::clamp(action[1], -1.0, 1.0) * config_.a_max;
  const double phi_prev = std::atan2(pos_.y(), pos_.x());

  vel_ += config_.dt * (a_t * e_t - a_n * e_r);
  const double speed = vel_.norm();
  if (speed > config_.v_max) vel_ *= config_.v_max / speed;
  pos_ += config_.dt * vel_;
  ++steps_;

  const double phi = std::atan2(pos_.y(), pos_.x());
  const double length = 2.0 * std::numbers::pi * config_.radius;
  const double n = offset();
  const bool violated = std::abs(n) >= config_.violation_offset;
  RlStep s;
  s.reward = reward_tc(phi_prev * config_.radius, phi * config_.radius, n, violated, length, config_.c_penalty);
  s.terminal = std::abs(n) >= config_.crash_offset;
  s.truncated = !s.terminal && steps_ >= config_.max_steps;
  s.obs = observe();
  return s;
}

}  // namespace racebench
