#pragma once

#include <memory>
#include <random>

#include "racebench/env.hpp"
#include "racebench/sac.hpp"

namespace racebench {

// RacingEnv behind the normalized RlEnvironment interface. Crashes are
// terminal; lap completion and the step limit are truncations.
class RacingRlEnv : public RlEnvironment {
 public:
  RacingRlEnv(std::shared_ptr<const TrackGeometry> track, VehicleParams params, EnvConfig config);

  int obs_dim() const override { return env_.feature_dim(); }
  int act_dim() const override { return 2; }
  Eigen::VectorXd reset(std::uint64_t seed) override;
  RlStep step(const Eigen::VectorXd& action) override;

  RacingEnv& env() { return env_; }

 private:
  RacingEnv env_;
};

struct PointMassConfig {
  double radius = 30.0;
  double dt = 0.1;
  int max_steps = 200;
  double start_speed = 3.0;
  double a_max = 3.0;
  double v_max = 4.0;
  double crash_offset = 1.0;
  double violation_offset = 0.7;
  double c_penalty = 0.01;
  int lookahead_points = 5;
  double lookahead_spacing = 1.0;
};

// Planar double integrator following a circular path counter-clockwise.
// Reward has the trajectory-conditioned shape: path advancement minus |n|,
// or -c inside the violation band. Actions are (tangential, normal)
// accelerations in the local path frame; observations are the next path
// points and the velocity in the same frame.
class PointMassEnv : public RlEnvironment {
 public:
  explicit PointMassEnv(PointMassConfig config = {});

  int obs_dim() const override { return 2 * config_.lookahead_points + 2; }
  int act_dim() const override { return 2; }
  Eigen::VectorXd reset(std::uint64_t seed) override;
  RlStep step(const Eigen::VectorXd& action) override;

  double offset() const;

 private:
  Eigen::VectorXd observe() const;

  PointMassConfig config_;
  Eigen::Vector2d pos_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d vel_ = Eigen::Vector2d::Zero();
  int steps_ = 0;
};

}  // namespace racebench
